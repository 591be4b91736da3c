"""Single-ciphertext homomorphic matrix multiplication.

C = A * B is accumulated over p iterations.  The right operand is packed
in the revolver layout (row r = column r mod p of B); iteration idx cycles
that layout up by idx+1 rows, multiplies slot-wise with A, collapses each
row to its sum, and a one-hot-per-row filter keeps exactly the result
entry that iteration produced.  Rotation/mask costs per iteration are
constant, and so is the multiplicative depth.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoding import Encoding, MatrixShape, PackedMatrix, sum_col_vec
from .engine import Ciphertext, EngineError, LayoutError, PlainMask, SlotEngine

__all__ = [
    "MatmulPlan",
    "row_shifter",
    "build_result_filter",
    "matmul",
    "matmul_tiled",
]

_LEFT_TAGS = (Encoding.ROW_MAJOR, Encoding.DATABASE)


@dataclass(frozen=True)
class MatmulPlan:
    """Shape bookkeeping for one product: layout height and fast-path flag.

    ``layout_m`` is max(m, p): with fewer rows than output columns the
    revolver layout could not carry every column of B, so the left operand
    is treated as zero-padded to layout_m rows (free: its trailing slots
    are already zero).  The single-rotation fast path needs the row cycle
    to close on itself, i.e. layout_m a multiple of p and the layout
    filling the ciphertext exactly.
    """

    m: int
    n: int
    p: int
    layout_m: int
    fast_path: bool

    @classmethod
    def plan(cls, engine: SlotEngine, m: int, n: int, p: int) -> "MatmulPlan":
        layout_m = max(m, p)
        if p > n:
            raise LayoutError(
                f"result needs {p} columns but rows are {n} wide; "
                f"re-encode the operands with row width >= {p}"
            )
        if layout_m * n > engine.slots:
            raise LayoutError(
                f"{layout_m}x{n} working layout needs {layout_m * n} slots, "
                f"engine has {engine.slots}"
            )
        fast = (layout_m % p == 0) and (layout_m * n == engine.slots)
        return cls(m=m, n=n, p=p, layout_m=layout_m, fast_path=fast)


def _row_band_mask(engine: SlotEngine, rows: int, n: int, r0: int, r1: int) -> PlainMask:
    grid = np.zeros((rows, n), dtype=np.float64)
    if r1 > r0:
        grid[r0:r1, :] = 1.0
    return engine.mask(grid.reshape(-1), role="filter")


def row_shifter(engine: SlotEngine, bbar: PackedMatrix, p: int, idx: int) -> PackedMatrix:
    """Cycle the revolver layout up by idx+1 rows.

    Always applied to the originally encoded operand, so depth stays constant over
    the iteration loop.  Fast path: one rotation by n*(idx+1) (valid when
    the cycle closes, see MatmulPlan).  General path: one left rotation
    brings rows shift..m-1 into place, one right rotation by (p-shift)
    rows refills the freed bottom rows with the columns that wrapped
    around, each side isolated by a 0/1 row-band filter.
    """
    if bbar.encoding is not Encoding.REVOLVER:
        raise LayoutError("row_shifter needs a revolver-encoded operand")
    if bbar.revolve_p is not None and bbar.revolve_p != p:
        raise EngineError(f"operand was encoded for p={bbar.revolve_p}, got p={p}")
    if not 0 <= idx < p:
        raise EngineError(f"idx must be in [0, {p}), got {idx}")
    rows, n = bbar.shape.m, bbar.shape.n
    if rows < p:
        raise LayoutError(f"revolver layout has {rows} rows but needs at least p={p}")
    shift = idx + 1
    fast = (rows % p == 0) and (rows * n == engine.slots)
    if fast:
        out = engine.rot(bbar.ct, n * shift)
    else:
        top = engine.cmul(
            _row_band_mask(engine, rows, n, 0, rows - shift),
            engine.rot(bbar.ct, n * shift),
        )
        bottom = engine.cmul(
            _row_band_mask(engine, rows, n, rows - shift, rows),
            engine.rot(bbar.ct, n * (shift - p)),
        )
        out = engine.add(top, bottom)
    return PackedMatrix(out, bbar.shape, Encoding.REVOLVER, bbar.revolve_p)


def build_result_filter(engine: SlotEngine, m: int, n: int, p: int, idx: int) -> PlainMask:
    """One-hot row filter: row i keeps column (i + idx) mod p."""
    if not 0 <= idx < p:
        raise EngineError(f"idx must be in [0, {p}), got {idx}")
    grid = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        grid[i, (i + idx) % p] = 1.0
    return engine.mask(grid.reshape(-1), role="filter")


def matmul(
    engine: SlotEngine,
    ct_a: PackedMatrix,
    ct_bbar: PackedMatrix,
    init: Ciphertext | None = None,
) -> PackedMatrix:
    """Homomorphic product of a row-major A with a revolver-encoded B.

    Args:
        ct_a: m x n left operand (row-major or database layout).
        ct_bbar: revolver encoding of the n x p right operand, tiled to
            max(m, p) rows.
        init: optional accumulator seed (e.g. a packed bias), added once.

    Returns:
        PackedMatrix over the working layout; entry (i, j) of the m x p
        product sits at slot i*n + j and every slot outside that block
        decodes to zero.
    """
    if ct_a.encoding not in _LEFT_TAGS:
        raise LayoutError("left operand must be row-major/database encoded")
    if ct_bbar.encoding is not Encoding.REVOLVER or ct_bbar.revolve_p is None:
        raise LayoutError("right operand must be revolver encoded")
    m, n = ct_a.shape.m, ct_a.shape.n
    p = ct_bbar.revolve_p
    if ct_bbar.shape.n != n:
        raise LayoutError(
            f"operand widths differ: A is {n} wide, encoded B is {ct_bbar.shape.n}"
        )
    plan = MatmulPlan.plan(engine, m, n, p)
    if ct_bbar.shape.m != plan.layout_m:
        raise LayoutError(
            f"revolver operand tiled to {ct_bbar.shape.m} rows; "
            f"this product needs target_m={plan.layout_m}"
        )
    rows = plan.layout_m
    work_shape = MatrixShape(rows, n)

    acc = init if init is not None else engine.enc([])
    for idx in range(p):
        shifted = row_shifter(engine, ct_bbar, p, idx)
        prod = engine.mul(ct_a.ct, shifted.ct)
        sums = sum_col_vec(engine, PackedMatrix(prod, work_shape, Encoding.ROW_MAJOR))
        keep = build_result_filter(engine, rows, n, p, (idx + 1) % p)
        acc = engine.add(acc, engine.cmul(keep, sums.ct))
    return PackedMatrix(acc, work_shape, Encoding.ROW_MAJOR)


def matmul_tiled(
    engine: SlotEngine,
    a_tiles: Sequence[PackedMatrix],
    b_tiles: Sequence[PackedMatrix],
    grid: tuple[int, int] | None = None,
) -> list[PackedMatrix]:
    """Blockwise product: A split into row blocks, B into column blocks.

    Output tile (i, j) = a_tiles[i] * b_tiles[j]; the list is returned in
    row-major tile order.  Tiles are independent, so a caller may fan them
    out to workers and merge the per-worker meters afterwards.
    """
    if not a_tiles or not b_tiles:
        raise LayoutError("tiling needs at least one block per operand")
    if grid is not None and grid != (len(a_tiles), len(b_tiles)):
        raise LayoutError(
            f"tiling descriptor {grid} does not match "
            f"({len(a_tiles)}, {len(b_tiles)}) blocks"
        )
    widths = {t.shape.n for t in a_tiles} | {t.shape.n for t in b_tiles}
    if len(widths) != 1:
        raise LayoutError(f"tiles disagree on the shared inner width: {sorted(widths)}")
    heights = {t.shape.m for t in a_tiles}
    if len(heights) != 1:
        raise LayoutError("A row blocks must share one height")
    return [matmul(engine, a, b) for a in a_tiles for b in b_tiles]
