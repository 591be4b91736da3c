"""Virtual ciphertexts: one dataset ciphertext treated as m image ciphertexts.

A dataset ciphertext packs m images row-wise at a fixed power-of-two
stride f, each image occupying the h*w prefix of its block.  Element-wise
add/mul act per image for free; per-image cyclic rotation (vrot) costs two
real rotations plus two filters; batched convolution runs the single-image
loop once and every image block rides along, so real-operation cost is
independent of m.  reform compacts a valid sub-block into a contiguous
prefix after a convolution shrinks the spatial dims.
"""

from dataclasses import dataclass

import numpy as np

from .conv import ImageShape, Kernel, KernelSpan, bias_matrix, span_matrix, window_cascade
from .engine import Ciphertext, EngineError, LayoutError, PlainMask, SlotEngine, is_pow2

__all__ = [
    "VirtualLayout",
    "vrot",
    "vadd",
    "vmul",
    "tile_kernel_span",
    "batched_conv",
    "reform",
]


@dataclass(frozen=True)
class VirtualLayout:
    """m image blocks of stride f, each holding an h x w image prefix."""

    m: int
    f: int
    h: int
    w: int

    def __post_init__(self):
        if self.m < 1:
            raise EngineError("layout needs at least one image block")
        if not is_pow2(self.f):
            raise EngineError(f"block stride must be a power of two, got {self.f}")
        if self.h * self.w > self.f:
            raise EngineError(
                f"{self.h}x{self.w} image does not fit block stride {self.f}"
            )

    @property
    def pad(self) -> int:
        return self.f - self.h * self.w

    @property
    def image_slots(self) -> int:
        return self.h * self.w

    def tag(self) -> tuple:
        return ("dataset", self.m, self.f, self.h, self.w)


def _require_fit(engine: SlotEngine, layout: VirtualLayout) -> None:
    if layout.m * layout.f != engine.slots:
        raise LayoutError(
            f"layout {layout.m}x{layout.f} must fill the ciphertext exactly "
            f"({engine.slots} slots)"
        )


def _tiled_mask(engine: SlotEngine, layout: VirtualLayout, block: np.ndarray, role: str) -> PlainMask:
    """Repeat a per-image prefix pattern into every image block."""
    full = np.zeros((layout.m, layout.f), dtype=np.float64)
    full[:, : block.size] = block.reshape(-1)
    return engine.mask(full.reshape(-1), role=role)


def vrot(engine: SlotEngine, ct: Ciphertext, layout: VirtualLayout, r: int) -> Ciphertext:
    """Rotate every image prefix cyclically left by r; pad slots stay zero.

    Realized with two real rotations: left by r for the surviving head of
    each prefix, right by h*w - r for the wrapped tail, each isolated with
    a 0/1 filter before the add.
    """
    _require_fit(engine, layout)
    hw = layout.image_slots
    if not 0 <= r < hw:
        raise EngineError(f"rotation must be in [0, {hw}), got {r}")
    head = np.zeros(layout.f, dtype=np.float64)
    head[: hw - r] = 1.0
    tail = np.zeros(layout.f, dtype=np.float64)
    tail[hw - r : hw] = 1.0
    t1 = engine.cmul(_tiled_mask(engine, layout, head, "filter"), engine.rot(ct, r))
    t2 = engine.cmul(_tiled_mask(engine, layout, tail, "filter"), engine.rot(ct, r - hw))
    return engine.add(t1, t2)


def _check_same_layout(a: Ciphertext, b: Ciphertext) -> None:
    if a.layout is not None and b.layout is not None and a.layout != b.layout:
        raise LayoutError(f"virtual layouts differ: {a.layout} vs {b.layout}")


def vadd(engine: SlotEngine, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Per-image element-wise sum (the real add already is one)."""
    _check_same_layout(a, b)
    return engine.add(a, b)


def vmul(engine: SlotEngine, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Per-image element-wise product (the real mul already is one)."""
    _check_same_layout(a, b)
    return engine.mul(a, b)


def tile_kernel_span(engine: SlotEngine, kernel: Kernel, layout: VirtualLayout) -> KernelSpan:
    """Spanned kernel for a batched dataset: every image block carries its
    own copy of each span pattern (and of the bias block)."""
    k = kernel.k
    shape = ImageShape(layout.h, layout.w)
    if shape.h < 2 * k - 1 or shape.w < 2 * k - 1:
        raise EngineError(
            f"kernel spanning needs h, w >= 2k-1 = {2 * k - 1}, got {shape.h}x{shape.w}"
        )

    def tiled(block: np.ndarray) -> Ciphertext:
        full = np.zeros((layout.m, layout.f), dtype=np.float64)
        full[:, : block.size] = block.reshape(-1)
        return engine.enc(full.reshape(-1), layout=layout.tag())

    spans = [tiled(span_matrix(kernel, shape, i, j)) for i in range(k) for j in range(k)]
    bias_ct = tiled(bias_matrix(kernel, shape))
    return KernelSpan(spans, bias_ct, k, shape)


def batched_conv(
    engine: SlotEngine, ct_x: Ciphertext, layout: VirtualLayout, span: KernelSpan
) -> Ciphertext:
    """Valid convolution of every image in the dataset simultaneously.

    Same loop as the single-image algorithm; rotations act globally, so the
    pad margin (k-1)*(w+1) guarantees no window read of a valid anchor ever
    crosses into the next image block.
    """
    _require_fit(engine, layout)
    k = span.k
    if (span.shape.h, span.shape.w) != (layout.h, layout.w):
        raise LayoutError(f"span built for {span.shape}, dataset images are {layout.h}x{layout.w}")
    if layout.pad < (k - 1) * (layout.w + 1):
        raise LayoutError(
            f"pad {layout.pad} below the shift-absorption margin "
            f"{(k - 1) * (layout.w + 1)} for k={k}"
        )
    h, w = layout.h, layout.w
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    acc = span.bias_ct
    for i in range(k):
        for j in range(k):
            t = engine.mul(ct_x, span.span_cts[i * k + j])
            t = window_cascade(engine, t, w, k)
            keep = (
                ((xs - i) % k == 0)
                & (xs + k <= w)
                & ((ys - j) % k == 0)
                & (ys + k <= h)
            )
            mask = _tiled_mask(engine, layout, keep.astype(np.float64), "filter")
            acc = engine.add(acc, engine.cmul(mask, t))
    return acc


def reform(
    engine: SlotEngine, ct: Ciphertext, layout: VirtualLayout, out_h: int, out_w: int
) -> tuple[Ciphertext, VirtualLayout]:
    """Compact each image's top-left out_h x out_w block into a contiguous
    prefix of out_h*out_w slots (row-major order preserved).

    Row r of the block is masked out and rotated left by r*(w - out_w);
    costs at most out_h rotations, cmuls and adds.
    """
    _require_fit(engine, layout)
    if out_h > layout.h or out_w > layout.w:
        raise EngineError(
            f"{out_h}x{out_w} block exceeds the {layout.h}x{layout.w} image prefix"
        )
    acc = None
    for r in range(out_h):
        row = np.zeros(layout.f, dtype=np.float64)
        row[r * layout.w : r * layout.w + out_w] = 1.0
        t = engine.cmul(_tiled_mask(engine, layout, row, "filter"), ct)
        if r > 0:
            t = engine.rot(t, r * (layout.w - out_w))
        acc = t if acc is None else engine.add(acc, t)
    new_layout = VirtualLayout(layout.m, layout.f, out_h, out_w)
    return acc, new_layout
