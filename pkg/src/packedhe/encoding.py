"""Plaintext <-> slot layout transformations.

A matrix is packed row-major into the leading slots of a ciphertext.  The
left matmul operand keeps that layout; the right operand is transposed and
vertically tiled ("revolver" layout) so each layout row carries one column
of the original matrix and the rows can be cycled with rotations.  Also
provides the row/column shifting primitives and the rotate-and-add
aggregations used by the evaluation algorithms.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .engine import (
    CapacityError,
    Ciphertext,
    EngineError,
    SlotEngine,
    is_pow2,
)

__all__ = [
    "Encoding",
    "MatrixShape",
    "PackedMatrix",
    "encode_db",
    "encode_row_major",
    "encode_revolver",
    "incomplete_col_shift",
    "row_shift",
    "sum_row_vec",
    "sum_col_vec",
    "matrix_from_csv",
]


class Encoding(str, Enum):
    DATABASE = "database"
    ROW_MAJOR = "row-major"
    REVOLVER = "revolver"


@dataclass(frozen=True)
class MatrixShape:
    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise EngineError(f"matrix shape must be positive, got {self.m}x{self.n}")


@dataclass(frozen=True, eq=False)
class PackedMatrix:
    """A ciphertext holding an m x n matrix in its leading m*n slots.

    ``revolve_p`` records the source column count for revolver-encoded
    operands (the layout itself only shows the tiled m x n grid).
    """

    ct: Ciphertext
    shape: MatrixShape
    encoding: Encoding
    revolve_p: int | None = None

    def decode(self, engine: SlotEngine) -> np.ndarray:
        m, n = self.shape.m, self.shape.n
        return engine.dec(self.ct)[: m * n].reshape(m, n)

    def with_ct(self, ct: Ciphertext) -> "PackedMatrix":
        return PackedMatrix(ct, self.shape, self.encoding, self.revolve_p)


def _check_fit(engine: SlotEngine, m: int, n: int) -> None:
    if m * n > engine.slots:
        raise CapacityError(f"{m}x{n} matrix needs {m * n} slots, engine has {engine.slots}")


def encode_db(engine: SlotEngine, z) -> PackedMatrix:
    """Pack a matrix row-wise into one ciphertext (database layout)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    m, n = z.shape
    _check_fit(engine, m, n)
    ct = engine.enc(z.reshape(-1), layout=("grid", m, n))
    return PackedMatrix(ct, MatrixShape(m, n), Encoding.DATABASE)


def encode_row_major(engine: SlotEngine, a) -> PackedMatrix:
    """Encode the left matmul operand: plain row-major packing."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    m, n = a.shape
    _check_fit(engine, m, n)
    ct = engine.enc(a.reshape(-1), layout=("grid", m, n))
    return PackedMatrix(ct, MatrixShape(m, n), Encoding.ROW_MAJOR)


def encode_revolver(engine: SlotEngine, b, target_m: int) -> PackedMatrix:
    """Encode the right matmul operand: transpose and tile to ``target_m`` rows.

    Layout row r holds column (r mod p) of ``b`` read top to bottom, so the
    first p rows are the transpose of ``b`` and further rows repeat the
    columns cyclically.  ``target_m`` is dictated by the left operand (use
    max(m, p) so every column appears at least once).
    """
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    n, p = b.shape
    if target_m < 1:
        raise EngineError("target_m must be positive")
    _check_fit(engine, target_m, n)
    grid = np.empty((target_m, n), dtype=np.float64)
    for r in range(target_m):
        grid[r] = b[:, r % p]
    ct = engine.enc(grid.reshape(-1), layout=("grid", target_m, n))
    return PackedMatrix(ct, MatrixShape(target_m, n), Encoding.REVOLVER, revolve_p=p)


def incomplete_col_shift(engine: SlotEngine, pm: PackedMatrix) -> PackedMatrix:
    """Shift the packed entry stream left by one slot (rotation by 1).

    On a matrix that fills the ciphertext exactly this moves every entry to
    the previous column with row wrap-around in the last column, and the
    first entry to the last position.
    """
    return pm.with_ct(engine.rot(pm.ct, 1))


def row_shift(engine: SlotEngine, pm: PackedMatrix) -> PackedMatrix:
    """Move every row up one position (rotation by the row width)."""
    return pm.with_ct(engine.rot(pm.ct, pm.shape.n))


def sum_row_vec(engine: SlotEngine, pm: PackedMatrix) -> PackedMatrix:
    """Replace every row with the vector of column sums.

    log2(m) rotate-and-add steps.  Full replication into all m rows relies
    on the matrix filling the ciphertext exactly (the database setting);
    with trailing free slots only the top row carries complete sums.
    """
    m, n = pm.shape.m, pm.shape.n
    if not is_pow2(m):
        raise EngineError(f"sum_row_vec requires a power-of-two row count, got {m}")
    ct = pm.ct
    for t in range(m.bit_length() - 1):
        ct = engine.add(ct, engine.rot(ct, n * (1 << t)))
    return PackedMatrix(ct, pm.shape, pm.encoding, pm.revolve_p)


def sum_col_vec(engine: SlotEngine, pm: PackedMatrix) -> PackedMatrix:
    """Replace every entry of row i with the sum of row i.

    Rotate-and-add cascade leaves the true row sum in column 0 of each row
    (other columns mix across row boundaries); a filter keeps column 0 per
    row block before the replication cascade spreads it back across the
    row.  Costs 2*log2(n) rotations and one cmul.
    """
    m, n = pm.shape.m, pm.shape.n
    if not is_pow2(n):
        raise EngineError(f"sum_col_vec requires a power-of-two column count, got {n}")
    steps = n.bit_length() - 1
    ct = pm.ct
    for t in range(steps):
        ct = engine.add(ct, engine.rot(ct, 1 << t))
    col0 = np.zeros((m, n), dtype=np.float64)
    col0[:, 0] = 1.0
    ct = engine.cmul(engine.mask(col0.reshape(-1), role="filter"), ct)
    for t in range(steps):
        ct = engine.add(ct, engine.rot(ct, -(1 << t)))
    return PackedMatrix(ct, pm.shape, pm.encoding, pm.revolve_p)


def matrix_from_csv(path) -> np.ndarray:
    """Read a dense matrix from CSV: one row per line, '.' decimal point."""
    return np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
