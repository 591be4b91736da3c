import numpy as np
import pytest

from packedhe.engine import EngineParams, SlotEngine


def make_engine(slots: int) -> SlotEngine:
    return SlotEngine(EngineParams(slots=slots))


def rand_int_matrix(rng, rows: int, cols: int, lo: int = -4, hi: int = 5) -> np.ndarray:
    return rng.integers(lo, hi, size=(rows, cols)).astype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
