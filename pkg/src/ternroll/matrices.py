"""Dense trit and float weight matrices plus their on-disk text formats."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TRIT_CHARS = {"-": -1, "0": 0, "+": 1}
CHAR_OF_TRIT = {-1: "-", 0: "0", 1: "+"}


class MatrixFormatError(ValueError):
    """A .tmx or .fmx file violates its format."""


@dataclass(frozen=True)
class TernaryMatrix:
    """Constant weight matrix with entries restricted to {-1, 0, +1}.

    Rows correspond to outputs (filters), columns to inputs. Storage is a
    dense row-major int8 array; sparsity is exploited by the passes, not by
    the container.
    """

    entries: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        a = np.asarray(self.entries, dtype=np.int8)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"ternary matrix must be 2-D and non-empty, got shape {a.shape}")
        if not np.isin(a, (-1, 0, 1)).all():
            raise ValueError("ternary matrix entries must be -1, 0 or +1")
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "entries", a)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]

    def sparsity(self) -> float:
        """Fraction of zero entries, in [0, 1]."""
        return float(np.count_nonzero(self.entries == 0)) / (self.rows * self.cols)

    def row_terms(self, r: int) -> list[tuple[int, int]]:
        """Nonzero (column, sign) pairs of row ``r`` in column order."""
        row = self.entries[r]
        return [(int(c), int(row[c])) for c in np.flatnonzero(row)]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Exact integer product entries @ x (wide accumulation)."""
        return self.entries.astype(np.int64) @ np.asarray(x, dtype=np.int64)


@dataclass(frozen=True)
class FloatMatrix:
    """Real-valued weight matrix, the input of ternarization."""

    entries: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        a = np.asarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"float matrix must be 2-D and non-empty, got shape {a.shape}")
        if not np.isfinite(a).all():
            raise ValueError("float matrix entries must be finite")
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "entries", a)

    @property
    def rows(self) -> int:
        return self.entries.shape[0]

    @property
    def cols(self) -> int:
        return self.entries.shape[1]


def format_tmx(m: TernaryMatrix) -> str:
    lines = [f"tmx {m.rows} {m.cols}"]
    for r in range(m.rows):
        lines.append("".join(CHAR_OF_TRIT[int(v)] for v in m.entries[r]))
    return "\n".join(lines) + "\n"


def parse_tmx(text: str) -> TernaryMatrix:
    """Parse the tmx format: header line, then one row of -/0/+ per line.

    Parsing is strict; any stray character, wrong row length or missing row
    is an error.
    """
    lines = text.splitlines()
    if not lines:
        raise MatrixFormatError("empty tmx input")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "tmx":
        raise MatrixFormatError(f"line 1: expected 'tmx <rows> <cols>', got {lines[0]!r}")
    try:
        rows, cols = int(head[1]), int(head[2])
    except ValueError as e:
        raise MatrixFormatError(f"line 1: bad dimensions in {lines[0]!r}") from e
    if rows < 1 or cols < 1:
        raise MatrixFormatError(f"line 1: dimensions must be positive, got {rows}x{cols}")
    body = lines[1:]
    if len(body) < rows:
        raise MatrixFormatError(f"expected {rows} rows, found {len(body)}")
    if any(s.strip() for s in body[rows:]):
        raise MatrixFormatError(f"trailing content after row {rows}")
    a = np.zeros((rows, cols), dtype=np.int8)
    for r, line in enumerate(body[:rows]):
        if len(line) != cols:
            raise MatrixFormatError(f"line {r + 2}: expected {cols} characters, got {len(line)}")
        for c, ch in enumerate(line):
            if ch not in TRIT_CHARS:
                raise MatrixFormatError(f"line {r + 2}, column {c + 1}: invalid character {ch!r}")
            a[r, c] = TRIT_CHARS[ch]
    return TernaryMatrix(a)


def format_fmx(m: FloatMatrix) -> str:
    lines = [f"fmx {m.rows} {m.cols}"]
    for r in range(m.rows):
        lines.append(" ".join(repr(float(v)) for v in m.entries[r]))
    return "\n".join(lines) + "\n"


def parse_fmx(text: str) -> FloatMatrix:
    """Parse the fmx format: header line, then whitespace-separated reals."""
    lines = text.splitlines()
    if not lines:
        raise MatrixFormatError("empty fmx input")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "fmx":
        raise MatrixFormatError(f"line 1: expected 'fmx <rows> <cols>', got {lines[0]!r}")
    try:
        rows, cols = int(head[1]), int(head[2])
    except ValueError as e:
        raise MatrixFormatError(f"line 1: bad dimensions in {lines[0]!r}") from e
    if rows < 1 or cols < 1:
        raise MatrixFormatError(f"line 1: dimensions must be positive, got {rows}x{cols}")
    tokens = "\n".join(lines[1:]).split()
    if len(tokens) != rows * cols:
        raise MatrixFormatError(f"expected {rows * cols} values, found {len(tokens)}")
    try:
        vals = [float(t) for t in tokens]
    except ValueError as e:
        raise MatrixFormatError(f"non-numeric value in fmx body: {e}") from e
    a = np.array(vals, dtype=np.float64).reshape(rows, cols)
    if not np.isfinite(a).all():
        raise MatrixFormatError("fmx body contains non-finite values")
    return FloatMatrix(a)


def load_tmx(path: str) -> TernaryMatrix:
    with open(path, "r", encoding="ascii") as f:
        return parse_tmx(f.read())


def dump_tmx(m: TernaryMatrix, path: str) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(format_tmx(m))


def load_fmx(path: str) -> FloatMatrix:
    with open(path, "r", encoding="ascii") as f:
        return parse_fmx(f.read())


def dump_fmx(m: FloatMatrix, path: str) -> None:
    with open(path, "w", encoding="ascii") as f:
        f.write(format_fmx(m))


def random_ternary(rows: int, cols: int, sparsity: float, rng: np.random.Generator) -> TernaryMatrix:
    """Random trit matrix with the given expected fraction of zeros."""
    u = rng.random((rows, cols))
    signs = rng.integers(0, 2, size=(rows, cols), dtype=np.int8) * 2 - 1
    a = np.where(u < sparsity, np.int8(0), signs)
    return TernaryMatrix(a)
