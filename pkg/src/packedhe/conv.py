"""Homomorphic convolution on a fully packed image.

A k x k kernel is spread into k*k image-sized mask ciphertexts, one per
(column, row) offset class modulo k.  Each loop iteration multiplies the
image with one span, runs the rotate-and-add window cascade, keeps the
output positions belonging to that offset class, and accumulates onto a
bias-seeded result.  Valid (unpadded) stride-1 convolution only; the
result occupies the top-left (h-k+1) x (w-k+1) block of the h x w layout.
"""

from dataclasses import dataclass

import numpy as np

from .engine import Ciphertext, EngineError, PlainMask, SlotEngine

__all__ = [
    "ImageShape",
    "Kernel",
    "KernelSpan",
    "kernel_spanner",
    "span_matrix",
    "bias_matrix",
    "window_cascade",
    "sum_for_conv",
    "build_offset_filter",
    "conv",
]


@dataclass(frozen=True)
class ImageShape:
    h: int
    w: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise EngineError(f"image shape must be positive, got {self.h}x{self.w}")

    def out(self, k: int) -> tuple[int, int]:
        if k > self.h or k > self.w:
            raise EngineError(f"{k}x{k} kernel larger than {self.h}x{self.w} image")
        return self.h - k + 1, self.w - k + 1


@dataclass(frozen=True, eq=False)
class Kernel:
    """Dense square kernel plus bias."""

    weights: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise EngineError(f"kernel must be square, got shape {w.shape}")
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class KernelSpan:
    """k*k spanned kernel ciphertexts plus the bias ciphertext.

    span_cts[i*k + j] pairs with offset (i, j): columns congruent to i and
    rows congruent to j modulo k.
    """

    span_cts: list
    bias_ct: Ciphertext
    k: int
    shape: ImageShape


def span_matrix(kernel: Kernel, shape: ImageShape, off_i: int, off_j: int) -> np.ndarray:
    """Kernel tiled over the image grid for offset class (off_i cols, off_j rows).

    Position (y, x) carries the weight its window would apply there; rows
    above off_j / columns left of off_i and positions whose window exits
    the image are zero.
    """
    h, w, k = shape.h, shape.w, kernel.k
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    anchor_y = off_j + ((ys - off_j) // k) * k
    anchor_x = off_i + ((xs - off_i) // k) * k
    ok_y = (ys >= off_j) & (anchor_y + k <= h)
    ok_x = (xs >= off_i) & (anchor_x + k <= w)
    tiled = kernel.weights[(ys - off_j) % k, (xs - off_i) % k]
    return np.where(ok_y & ok_x, tiled, 0.0)


def bias_matrix(kernel: Kernel, shape: ImageShape) -> np.ndarray:
    """Bias value over the full valid-output block, zeros elsewhere."""
    out_h, out_w = shape.out(kernel.k)
    grid = np.zeros((shape.h, shape.w), dtype=np.float64)
    grid[:out_h, :out_w] = kernel.bias
    return grid


def kernel_spanner(engine: SlotEngine, kernel: Kernel, shape: ImageShape) -> KernelSpan:
    """Encrypt the k*k span matrices and the bias layout for one image."""
    k = kernel.k
    if shape.h < 2 * k - 1 or shape.w < 2 * k - 1:
        raise EngineError(
            f"kernel spanning needs h, w >= 2k-1 = {2 * k - 1}, got {shape.h}x{shape.w}"
        )
    spans = [
        engine.enc(span_matrix(kernel, shape, i, j).reshape(-1), layout=("grid", shape.h, shape.w))
        for i in range(k)
        for j in range(k)
    ]
    bias_ct = engine.enc(bias_matrix(kernel, shape).reshape(-1), layout=("grid", shape.h, shape.w))
    return KernelSpan(spans, bias_ct, k, shape)


def window_cascade(engine: SlotEngine, ct: Ciphertext, w: int, k: int) -> Ciphertext:
    """Accumulate each k x k window into its top-left slot.

    k rotations along the row then k rotations of that partial sum by whole
    rows (2k rotations total, the pos=0 rotations included for a uniform
    cost profile).  Slots off the window grid accumulate garbage that the
    caller masks away.
    """
    col_acc = None
    for pos in range(k):
        t = engine.rot(ct, pos)
        col_acc = t if col_acc is None else engine.add(col_acc, t)
    row_acc = None
    for pos in range(k):
        t = engine.rot(col_acc, pos * w)
        row_acc = t if row_acc is None else engine.add(row_acc, t)
    return row_acc


def build_offset_filter(
    engine: SlotEngine, shape: ImageShape, k: int, offset_i: int, offset_j: int
) -> PlainMask:
    """0/1 mask keeping positions with x = offset_i and y = offset_j (mod k)
    whose k-window stays inside the image."""
    if not (0 <= offset_i < k and 0 <= offset_j < k):
        raise EngineError(f"offsets must be in [0, {k}), got ({offset_i}, {offset_j})")
    h, w = shape.h, shape.w
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    keep = (
        ((xs - offset_i) % k == 0)
        & (xs + k <= w)
        & ((ys - offset_j) % k == 0)
        & (ys + k <= h)
    )
    return engine.mask(keep.astype(np.float64).reshape(-1), role="filter")


def sum_for_conv(
    engine: SlotEngine, ct: Ciphertext, shape: ImageShape, k: int, bias: float = 0.0
) -> Ciphertext:
    """Window cascade plus the stride-k anchor mask.

    Anchors (i, j) with i, j = 0 mod k and the window inside the image end
    up holding bias + the k x k window sum; every other slot is zero.
    """
    if k > shape.h or k > shape.w:
        raise EngineError(f"window {k} exceeds image {shape.h}x{shape.w}")
    out = window_cascade(engine, ct, shape.w, k)
    out = engine.cmul(build_offset_filter(engine, shape, k, 0, 0), out)
    if bias != 0.0:
        ys = np.arange(shape.h)[:, None]
        xs = np.arange(shape.w)[None, :]
        keep = (ys % k == 0) & (ys + k <= shape.h) & (xs % k == 0) & (xs + k <= shape.w)
        out = engine.add(out, engine.enc((bias * keep).reshape(-1)))
    return out


def conv(engine: SlotEngine, ct_image: Ciphertext, span: KernelSpan, shape: ImageShape) -> Ciphertext:
    """Valid stride-1 convolution of one packed image with a spanned kernel.

    k*k iterations of multiply / cascade / offset filter / accumulate onto
    the bias-seeded result; iterations are independent, so they could run
    on parallel workers with the accumulation as the final reduction.
    """
    if span.shape != shape:
        raise EngineError(f"span built for {span.shape}, image is {shape}")
    k = span.k
    shape.out(k)  # validates kernel fits
    acc = span.bias_ct
    for i in range(k):
        for j in range(k):
            t = engine.mul(ct_image, span.span_cts[i * k + j])
            t = window_cascade(engine, t, shape.w, k)
            t = engine.cmul(build_offset_filter(engine, shape, k, i, j), t)
            acc = engine.add(acc, t)
    return acc
