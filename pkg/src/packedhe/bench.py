"""Operation-count benchmarks for the evaluation algorithms.

Replays the matmul iteration and the convolution inner loop with meter
snapshots around each step, compares the measured Add/cMult/Rot/Mult
counts against the documented per-step cost formulas, and flags any
overruns.  The row-summation step is the known soft spot: its rotation
count scales with log2 of the row width n, so a budget quoted in terms of
the output-column count p undercounts whenever p < n.
"""

import math
from dataclasses import dataclass

import numpy as np

from .conv import ImageShape, Kernel, build_offset_filter, kernel_spanner, sum_for_conv, window_cascade
from .encoding import Encoding, MatrixShape, PackedMatrix, encode_revolver, encode_row_major, sum_col_vec
from .engine import OpMeter, SlotEngine, EngineParams, next_pow2
from .matmul import MatmulPlan, build_result_filter, row_shifter

__all__ = [
    "StepCost",
    "measure_matmul_steps",
    "measure_conv_steps",
    "format_report",
    "SUMMATION_NOTE",
]

SUMMATION_NOTE = (
    "note: row-summation rotations scale with the row width "
    "(measured 2*log2(n)); a budget of 2*log2(p) undercounts whenever p < n."
)


@dataclass
class StepCost:
    step: str
    add: int
    cmul: int
    rot: int
    mul: int
    expected: tuple  # (add, cmul, rot, mul) documented formula values
    note: str = ""

    @property
    def within_budget(self) -> bool:
        return (
            self.add <= self.expected[0]
            and self.cmul <= self.expected[1]
            and self.rot <= self.expected[2]
            and self.mul <= self.expected[3]
        )


def _delta(engine: SlotEngine, before: OpMeter) -> tuple:
    d = engine.meter_snapshot().delta_since(before)
    return d.add_count, d.cmul_count, d.rot_count, d.mul_count


def measure_matmul_steps(m: int, n: int, p: int, slots: int | None = None) -> list:
    """Instrument one product iteration (idx=0) step by step.

    With ``slots`` omitted the working layout fills the ciphertext, which
    enables the single-rotation row-cycling path when max(m, p) is a
    multiple of p.
    """
    layout_m = max(m, p)
    if slots is None:
        slots = next_pow2(max(2, layout_m * n))
    engine = SlotEngine(EngineParams(slots=slots))
    plan = MatmulPlan.plan(engine, m, n, p)
    rng = np.random.default_rng(7)
    a = encode_row_major(engine, rng.integers(-4, 5, size=(m, n)).astype(float))
    bbar = encode_revolver(
        engine, rng.integers(-4, 5, size=(n, p)).astype(float), target_m=plan.layout_m
    )
    work_shape = MatrixShape(plan.layout_m, n)
    log_n = int(math.log2(n)) if n > 1 else 0
    steps = []

    before = engine.meter_snapshot()
    shifted = row_shifter(engine, bbar, p, 0)
    prod = engine.mul(a.ct, shifted.ct)
    expected1 = (0, 0, 1, 1) if plan.fast_path else (1, 2, 2, 1)
    steps.append(
        StepCost(
            "1 row cycle + multiply",
            *_delta(engine, before),
            expected=expected1,
            note="single-rotation path" if plan.fast_path else "masked two-rotation path",
        )
    )

    before = engine.meter_snapshot()
    sums = sum_col_vec(engine, PackedMatrix(prod, work_shape, Encoding.ROW_MAJOR))
    steps.append(
        StepCost(
            "2 row summation",
            *_delta(engine, before),
            expected=(2 * log_n, 1, 2 * log_n, 0),
            note=SUMMATION_NOTE,
        )
    )

    before = engine.meter_snapshot()
    keep = build_result_filter(engine, plan.layout_m, n, p, 1 % p)
    filtered = engine.cmul(keep, sums.ct)
    steps.append(StepCost("3 result filter", *_delta(engine, before), expected=(0, 1, 0, 0)))

    before = engine.meter_snapshot()
    engine.add(engine.enc([]), filtered)
    steps.append(
        StepCost("4 accumulate", *_delta(engine, before), expected=(1, 0, 0, 0), note="plus one seed enc")
    )
    return steps


def measure_conv_steps(h: int, w: int, k: int) -> list:
    """Instrument one convolution offset iteration."""
    slots = max(2, next_pow2(h * w))
    engine = SlotEngine(EngineParams(slots=slots))
    rng = np.random.default_rng(11)
    shape = ImageShape(h, w)
    kernel = Kernel(rng.integers(-3, 4, size=(k, k)).astype(float), bias=1.0)
    span = kernel_spanner(engine, kernel, shape)
    image = engine.enc(rng.integers(0, 7, size=(h, w)).astype(float).reshape(-1))
    steps = []

    before = engine.meter_snapshot()
    t = engine.mul(image, span.span_cts[0])
    steps.append(StepCost("1 span multiply", *_delta(engine, before), expected=(0, 0, 0, 1)))

    before = engine.meter_snapshot()
    t = window_cascade(engine, t, w, k)
    steps.append(
        StepCost("2 window cascade", *_delta(engine, before), expected=(2 * k, 0, 2 * k, 0))
    )

    before = engine.meter_snapshot()
    t = engine.cmul(build_offset_filter(engine, shape, k, 0, 0), t)
    steps.append(StepCost("3 offset filter", *_delta(engine, before), expected=(0, 1, 0, 0)))

    before = engine.meter_snapshot()
    engine.add(span.bias_ct, t)
    steps.append(StepCost("4 accumulate", *_delta(engine, before), expected=(1, 0, 0, 0)))

    # standalone aggregate for the anchor-masked summation helper
    before = engine.meter_snapshot()
    sum_for_conv(engine, image, shape, k)
    d = engine.meter_snapshot().delta_since(before)
    steps.append(
        StepCost(
            "window sum (standalone)",
            d.add_count,
            d.cmul_count,
            d.rot_count,
            d.mul_count,
            expected=(2 * k, 1, 2 * k, 0),
        )
    )
    return steps


def format_report(matmul_grid, conv_grid) -> str:
    """Measured-vs-budget table for grids of (m, n, p) and (h, w, k)."""
    lines = []
    header = f"{'step':<28} {'Add':>5} {'cMult':>6} {'Rot':>5} {'Mult':>5}   budget (A,cM,R,M)"
    for m, n, p in matmul_grid:
        lines.append(f"matrix product m={m} n={n} p={p}")
        lines.append(header)
        for s in measure_matmul_steps(m, n, p):
            flag = "" if s.within_budget else "  ** EXCEEDS BUDGET"
            lines.append(
                f"{s.step:<28} {s.add:>5} {s.cmul:>6} {s.rot:>5} {s.mul:>5}   {s.expected}{flag}"
            )
        lines.append("")
    for h, w, k in conv_grid:
        lines.append(f"convolution h={h} w={w} k={k}")
        lines.append(header)
        for s in measure_conv_steps(h, w, k):
            flag = "" if s.within_budget else "  ** EXCEEDS BUDGET"
            lines.append(
                f"{s.step:<28} {s.add:>5} {s.cmul:>6} {s.rot:>5} {s.mul:>5}   {s.expected}{flag}"
            )
        lines.append("")
    lines.append(SUMMATION_NOTE)
    return "\n".join(lines)
