"""Multi-ciphertext encodings for operands that outgrow one ciphertext.

Matrix product: each operand becomes n ciphertexts.  Left ciphertext k
broadcasts column k of A across an m x p grid; right ciphertext k tiles
row k of B down the same grid; the product is the sum of the n slot-wise
products, a rank-1 outer-product decomposition needing zero rotations at
evaluation time.

Images: an h x w image becomes w column ciphertexts of h pixels (batched:
m images stacked at stride h), so image capacity is bounded by h alone,
not h*w.  Convolution slides down each column with masked block rotations
and accumulates weighted neighbour columns.
"""

from dataclasses import dataclass

import numpy as np

from .encoding import Encoding, MatrixShape, PackedMatrix
from .conv import Kernel
from .engine import CapacityError, Ciphertext, EngineError, LayoutError, SlotEngine

__all__ = [
    "ColumnEncodedMatrix",
    "ColumnEncodedImage",
    "encode_left",
    "encode_right",
    "matmul_outer",
    "encode_image_columns",
    "conv_columns",
    "reassemble_columns",
]


@dataclass(frozen=True, eq=False)
class ColumnEncodedMatrix:
    """n ciphertexts holding one matmul operand in broadcast form."""

    cts: list
    role: str  # "left" or "right"
    m: int
    n: int
    p: int


@dataclass(frozen=True, eq=False)
class ColumnEncodedImage:
    """w ciphertexts, one image column each; batched images stack at ``stride``.

    ``h`` is the number of meaningful leading slots per image block; after
    a convolution it shrinks while the physical stride stays that of the
    original encoding.
    """

    cts: list
    h: int
    w: int
    m: int
    stride: int


def encode_left(engine: SlotEngine, a, p: int) -> ColumnEncodedMatrix:
    """Ciphertext k = column k of A broadcast across an m x p grid."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    m, n = a.shape
    if m * p > engine.slots:
        raise CapacityError(f"{m}x{p} broadcast needs {m * p} slots, engine has {engine.slots}")
    cts = []
    for k in range(n):
        grid = np.repeat(a[:, k], p)
        cts.append(engine.enc(grid, layout=("grid", m, p)))
    return ColumnEncodedMatrix(cts, "left", m, n, p)


def encode_right(engine: SlotEngine, b, m: int) -> ColumnEncodedMatrix:
    """Ciphertext k = row k of B tiled down m grid rows."""
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    n, p = b.shape
    if m * p > engine.slots:
        raise CapacityError(f"{m}x{p} tiling needs {m * p} slots, engine has {engine.slots}")
    cts = []
    for k in range(n):
        grid = np.tile(b[k, :], m)
        cts.append(engine.enc(grid, layout=("grid", m, p)))
    return ColumnEncodedMatrix(cts, "right", m, n, p)


def matmul_outer(
    engine: SlotEngine, left: ColumnEncodedMatrix, right: ColumnEncodedMatrix
) -> PackedMatrix:
    """Sum of the n slot-wise products; no rotations, depth + 1."""
    if left.role != "left" or right.role != "right":
        raise LayoutError("operands must be a (left, right) column-encoded pair")
    if (left.n, left.m, left.p) != (right.n, right.m, right.p):
        raise LayoutError(
            f"operand dims differ: left {(left.m, left.n, left.p)}, "
            f"right {(right.m, right.n, right.p)}"
        )
    acc = None
    for lk, rk in zip(left.cts, right.cts):
        term = engine.mul(lk, rk)
        acc = term if acc is None else engine.add(acc, term)
    return PackedMatrix(acc, MatrixShape(left.m, left.p), Encoding.ROW_MAJOR)


def encode_image_columns(engine: SlotEngine, images) -> ColumnEncodedImage:
    """Split images into per-column ciphertexts (batch at stride h)."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    if arr.ndim != 3:
        raise EngineError(f"expected one image or a batch, got ndim={arr.ndim}")
    m, h, w = arr.shape
    if m * h > engine.slots:
        raise CapacityError(f"{m} columns of {h} pixels need {m * h} slots")
    cts = []
    for j in range(w):
        stacked = arr[:, :, j].reshape(-1)
        cts.append(engine.enc(stacked, layout=("column", h, m)))
    return ColumnEncodedImage(cts, h, w, m, stride=h)


def conv_columns(engine: SlotEngine, img: ColumnEncodedImage, kernel: Kernel) -> ColumnEncodedImage:
    """Valid convolution in the column domain.

    Output column j' = sum over (p, q) of K[p][q] times source column
    j'+q shifted up by p rows.  Shifts are plain rotations; the kernel
    weight is folded into the per-block validity mask, so each term costs
    one cmul and the rotations are shared across output columns.
    """
    k = kernel.k
    if k > img.h or k > img.w:
        raise EngineError(f"{k}x{k} kernel larger than {img.h}x{img.w} image")
    out_h, out_w = img.h - k + 1, img.w - k + 1
    valid = np.zeros((img.m, img.stride), dtype=np.float64)
    valid[:, :out_h] = 1.0
    valid = valid.reshape(-1)

    rotated: dict[tuple[int, int], Ciphertext] = {}

    def shifted(j: int, p: int) -> Ciphertext:
        if p == 0:
            return img.cts[j]
        key = (j, p)
        if key not in rotated:
            rotated[key] = engine.rot(img.cts[j], p)
        return rotated[key]

    out_cts = []
    for jp in range(out_w):
        bias = np.zeros((img.m, img.stride), dtype=np.float64)
        bias[:, :out_h] = kernel.bias
        acc = engine.enc(bias.reshape(-1), layout=("column", out_h, img.m))
        for q in range(k):
            for p in range(k):
                wgt = kernel.weights[p, q]
                if wgt == 0.0:
                    continue
                term = engine.cmul(engine.mask(wgt * valid), shifted(jp + q, p))
                acc = engine.add(acc, term)
        out_cts.append(acc)
    return ColumnEncodedImage(out_cts, out_h, out_w, img.m, img.stride)


def reassemble_columns(engine: SlotEngine, img: ColumnEncodedImage) -> np.ndarray:
    """Decode to an (m, h, w) array; inverse of the column encoding."""
    out = np.empty((img.m, img.h, img.w), dtype=np.float64)
    for j, ct in enumerate(img.cts):
        vec = engine.dec(ct)
        for b in range(img.m):
            out[b, :, j] = vec[b * img.stride : b * img.stride + img.h]
    return out
