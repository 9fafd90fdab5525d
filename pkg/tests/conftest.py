import numpy as np
import pytest

from ternroll import TernaryMatrix

# 7 rows over 6 variables; the worked two-term extraction example.
ROWS_7X6 = [
    [0, 0, 1, 1, 0, 0],
    [1, 0, 1, 1, 1, 0],
    [0, 1, 0, 0, 1, 1],
    [0, 1, 0, 0, 0, 1],
    [1, 0, 1, 1, 0, 0],
    [1, 0, 0, 1, 0, 0],
    [0, 1, 0, 0, 1, 1],
]

# Single 3x3 filter on a grayscale patch a..i: z0 = -a + c + e + f - h.
FILTER_ROW = [-1, 0, 1, 0, 1, 1, 0, -1, 0]

# Second output sharing e + f with the filter row: z1 = c + d - e - f.
SHARED_ROW = [0, 0, 1, 1, -1, -1, 0, 0, 0]


@pytest.fixture
def m7x6() -> TernaryMatrix:
    return TernaryMatrix(np.array(ROWS_7X6, dtype=np.int8))


@pytest.fixture
def filter_matrix() -> TernaryMatrix:
    return TernaryMatrix(np.array([FILTER_ROW], dtype=np.int8))


@pytest.fixture
def two_output_matrix() -> TernaryMatrix:
    return TernaryMatrix(np.array([FILTER_ROW, SHARED_ROW], dtype=np.int8))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240809)


def random_inputs(rng: np.random.Generator, cols: int, n: int) -> np.ndarray:
    return rng.integers(-(2**15), 2**15, size=(cols, n), dtype=np.int64)
