"""Shared-subexpression extraction over the signed sums of a ternary matrix.

Two extraction strategies are provided. The top-down pass (``td_cse``)
repeatedly pulls out the most frequent two-term pattern, counting a pattern
and its negation as one canonical pair so a consumer may subtract a shared
value instead of adding it. The bottom-up pass (``bu_cse``) tracks, for every
pair of working rows, the size of their largest common signed sub-pattern and
repeatedly extracts the biggest one; the extracted pattern is appended to the
working set as a fresh row so its own sub-patterns stay discoverable.

Both passes are deterministic: frequency or size decides first, then the
documented tie-breaks. Both preserve exact symbolic equivalence, which
``verify_equivalence`` checks numerically and ``expand_rows`` symbolically.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass

import numpy as np

from .expressions import Expression, from_dict
from .matrices import TernaryMatrix


@dataclass(frozen=True)
class CseStats:
    extractions: int
    total_terms: int


@dataclass(frozen=True)
class CseResult:
    """Definitions plus rewritten outputs for one matrix.

    ``definitions`` is topologically ordered (no forward references) and each
    definition's ``id`` is its variable index; inputs occupy 0..n_inputs-1.
    Substituting all definitions into ``outputs`` reproduces the original
    matrix rows exactly.
    """

    n_inputs: int
    definitions: tuple[Expression, ...]
    outputs: tuple[Expression, ...]
    stats: CseStats

    @property
    def n_vars(self) -> int:
        return self.n_inputs + len(self.definitions)


@dataclass(frozen=True)
class ExtractionEvent:
    """One extraction step: the new variable, its pattern, occurrence count."""

    var: int
    pattern: Expression
    occurrences: int


def _rows_of(m: TernaryMatrix) -> list[dict[int, int]]:
    return [dict(m.row_terms(r)) for r in range(m.rows)]


def _total_terms(rows_and_defs) -> int:
    return sum(len(r) for r in rows_and_defs)


def no_cse(m: TernaryMatrix) -> CseResult:
    """Identity result: every row kept verbatim, no shared definitions."""
    outputs = tuple(from_dict(row) for row in _rows_of(m))
    return CseResult(m.cols, (), outputs, CseStats(0, sum(len(o) for o in outputs)))


# ---------------------------------------------------------------------------
# Top-down extraction


class PairTable:
    """Occurrence sets for canonical two-term patterns.

    A pattern {s_u*x_u, s_v*x_v} inside a row is keyed as (u, v, s_u*s_v)
    with u < v, so a pair and its global negation share one entry; the
    orientation is recovered from the row when rewriting. Mutators return
    the touched keys so callers can refresh any priority structure.
    """

    __slots__ = ("occ",)

    def __init__(self) -> None:
        self.occ: dict[tuple[int, int, int], set[int]] = {}

    @staticmethod
    def key(u: int, su: int, v: int, sv: int) -> tuple[int, int, int]:
        return (u, v, su * sv) if u < v else (v, u, su * sv)

    @classmethod
    def from_rows(cls, rows: list[dict[int, int]]) -> "PairTable":
        t = cls()
        for idx, row in enumerate(rows):
            t.add_row_pairs(idx, row)
        return t

    def add_row_pairs(self, idx: int, row: dict[int, int]) -> None:
        for (u, su), (v, sv) in itertools.combinations(row.items(), 2):
            self.occ.setdefault(self.key(u, su, v, sv), set()).add(idx)

    def add_var_pairs(self, idx: int, row: dict[int, int], var: int) -> list[tuple[int, int, int]]:
        sv = row[var]
        touched = []
        for u, su in row.items():
            if u == var:
                continue
            k = self.key(u, su, var, sv)
            self.occ.setdefault(k, set()).add(idx)
            touched.append(k)
        return touched

    def remove_var_pairs(self, idx: int, row: dict[int, int], var: int) -> list[tuple[int, int, int]]:
        sv = row[var]
        touched = []
        for u, su in row.items():
            if u == var:
                continue
            k = self.key(u, su, var, sv)
            s = self.occ.get(k)
            if s is not None:
                s.discard(idx)
                if not s:
                    del self.occ[k]
            touched.append(k)
        return touched

    def counts(self) -> dict[tuple[int, int, int], int]:
        return {k: len(v) for k, v in self.occ.items()}


def td_cse(
    m: TernaryMatrix,
    *,
    max_extractions: int | None = None,
    trace: list[ExtractionEvent] | None = None,
    check_table: bool = False,
) -> CseResult:
    """Frequency-driven extraction of two-term patterns.

    Repeatedly extracts the canonical pair occurring in the most rows
    (at least two) as a new variable and rewrites every occurrence with its
    orientation sign, until no pair occurs more than once. Frequency ties go
    to the pair appearing earliest in the current system (smallest containing
    row index), then to the smallest (i, j) with the same-sign orientation
    before the mixed one. The occurrence table is updated incrementally; each
    rewrite touches only pairs involving the affected variables.
    ``check_table`` re-derives the table from scratch after every extraction
    and fails loudly on any divergence (slow, for testing).
    """
    rows = _rows_of(m)
    table = PairTable.from_rows(rows)
    heap: list[tuple[int, int, int, int, int, int]] = []

    def push(pair: tuple[int, int, int]) -> None:
        occ = table.occ.get(pair)
        if occ is not None and len(occ) >= 2:
            i, j, rel = pair
            heapq.heappush(heap, (-len(occ), min(occ), i, j, 0 if rel == 1 else 1, rel))

    for pair in table.occ:
        push(pair)

    definitions: list[Expression] = []
    next_var = m.cols
    while heap:
        if max_extractions is not None and len(definitions) >= max_extractions:
            break
        negc, minrow, i, j, _, rel = heapq.heappop(heap)
        pair = (i, j, rel)
        occ = table.occ.get(pair)
        if occ is None or len(occ) < 2:
            continue
        if (-len(occ), min(occ)) != (negc, minrow):
            continue  # stale entry; a fresh one was pushed on mutation
        new = next_var
        next_var += 1
        pattern = Expression(((i, 1), (j, rel)), id=new)
        definitions.append(pattern)
        if trace is not None:
            trace.append(ExtractionEvent(new, pattern, len(occ)))
        touched: set[tuple[int, int, int]] = set()
        for r in sorted(occ):
            row = rows[r]
            sigma = row[i]
            touched.update(table.remove_var_pairs(r, row, i))
            del row[i]
            touched.update(table.remove_var_pairs(r, row, j))
            del row[j]
            row[new] = sigma
            touched.update(table.add_var_pairs(r, row, new))
        for p in touched:
            push(p)
        if check_table and table.occ != PairTable.from_rows(rows).occ:
            raise RuntimeError("incremental pair table diverged from the from-scratch table")

    outputs = tuple(from_dict(row) for row in rows)
    total = _total_terms([d.terms for d in definitions]) + _total_terms([o.terms for o in outputs])
    return CseResult(m.cols, tuple(definitions), outputs, CseStats(len(definitions), total))


# ---------------------------------------------------------------------------
# Bottom-up extraction


class PatternMatrix:
    """Largest-common-signed-pattern size for every pair of working rows.

    For rows u, v over {-1, 0, +1} coefficients, with d direct and n negated
    matching terms: sum(|u||v|) = d + n and sum(u*v) = d - n, so the entry
    max(d, n) equals (sum|u||v| + |sum u*v|) / 2. Entries are maintained
    incrementally by recomputing only rows that changed; values stay below
    2**24 so float32 matmuls are exact.
    """

    def __init__(self, rows: list[dict[int, int]], n_vars: int) -> None:
        self.n_rows = 0
        self.n_vars = n_vars
        self._cap_r = max(16, 2 * len(rows))
        self._cap_v = max(16, n_vars + len(rows) + 16)
        self._rf = np.zeros((self._cap_r, self._cap_v), dtype=np.float32)
        self._rabs = np.zeros((self._cap_r, self._cap_v), dtype=np.float32)
        self._p = np.zeros((self._cap_r, self._cap_r), dtype=np.int32)
        for row in rows:
            self.add_row(row)
        self.update_rows(list(range(self.n_rows)))

    def _grow(self, need_rows: int, need_vars: int) -> None:
        if need_rows > self._cap_r:
            cap = max(need_rows, 2 * self._cap_r)
            rf = np.zeros((cap, self._cap_v), dtype=np.float32)
            rf[: self.n_rows] = self._rf[: self.n_rows]
            ra = np.zeros((cap, self._cap_v), dtype=np.float32)
            ra[: self.n_rows] = self._rabs[: self.n_rows]
            p = np.zeros((cap, cap), dtype=np.int32)
            p[: self.n_rows, : self.n_rows] = self._p[: self.n_rows, : self.n_rows]
            self._rf, self._rabs, self._p, self._cap_r = rf, ra, p, cap
        if need_vars > self._cap_v:
            cap = max(need_vars, 2 * self._cap_v)
            rf = np.zeros((self._cap_r, cap), dtype=np.float32)
            rf[:, : self._cap_v] = self._rf
            ra = np.zeros((self._cap_r, cap), dtype=np.float32)
            ra[:, : self._cap_v] = self._rabs
            self._rf, self._rabs, self._cap_v = rf, ra, cap

    def ensure_var(self, var: int) -> None:
        self._grow(self.n_rows, var + 1)
        self.n_vars = max(self.n_vars, var + 1)

    def add_row(self, row: dict[int, int]) -> int:
        self._grow(self.n_rows + 1, self.n_vars)
        idx = self.n_rows
        self.n_rows += 1
        for v, s in row.items():
            self.set_var(idx, v, s)
        return idx

    def set_var(self, idx: int, var: int, sign: int) -> None:
        self.ensure_var(var)
        self._rf[idx, var] = sign
        self._rabs[idx, var] = 1.0

    def clear_var(self, idx: int, var: int) -> None:
        self._rf[idx, var] = 0.0
        self._rabs[idx, var] = 0.0

    def update_rows(self, idxs: list[int]) -> None:
        """Recompute entries between the given rows and every current row."""
        if not idxs:
            return
        n, v = self.n_rows, self.n_vars
        sel = np.asarray(idxs, dtype=np.intp)
        sub = self._rf[sel, :v]
        g = sub @ self._rf[:n, :v].T
        h = self._rabs[sel, :v] @ self._rabs[:n, :v].T
        blk = ((h + np.abs(g)) * 0.5).astype(np.int32)
        self._p[sel[:, None], np.arange(n)[None, :]] = blk
        self._p[np.arange(n)[:, None], sel[None, :]] = blk.T
        self._p[sel, sel] = 0

    def max_entry(self) -> int:
        n = self.n_rows
        if n < 2:
            return 0
        return int(self._p[:n, :n].max())

    def argmax_pairs(self, value: int) -> list[tuple[int, int]]:
        n = self.n_rows
        rs = np.argwhere(self._p[:n, :n] == value)
        return [(int(r), int(s)) for r, s in rs if r < s]

    def values(self) -> np.ndarray:
        return self._p[: self.n_rows, : self.n_rows].copy()

    @staticmethod
    def sizes_from_scratch(rows: list[dict[int, int]]) -> np.ndarray:
        """Reference recomputation of the whole table, for testing."""
        n = len(rows)
        p = np.zeros((n, n), dtype=np.int32)
        for r in range(n):
            for s in range(r + 1, n):
                direct = sum(1 for v, sv in rows[r].items() if rows[s].get(v) == sv)
                neg = sum(1 for v, sv in rows[r].items() if rows[s].get(v) == -sv)
                p[r, s] = p[s, r] = max(direct, neg)
        return p


def _common_pattern(a: dict[int, int], b: dict[int, int]) -> dict[int, int]:
    """Largest common signed pattern of two rows, signed as in ``a``.

    Picks the larger of the direct and globally-negated orientation, the
    direct one on ties, then normalizes the leading sign to +.
    """
    direct = {v: sv for v, sv in a.items() if b.get(v) == sv}
    neg = {v: sv for v, sv in a.items() if b.get(v) == -sv}
    pat = direct if len(direct) >= len(neg) else neg
    if pat and pat[min(pat)] == -1:
        pat = {v: -sv for v, sv in pat.items()}
    return pat


def _pattern_key(pat: dict[int, int]) -> tuple:
    items = sorted(pat.items())
    return tuple(v for v, _ in items), tuple(0 if s == 1 else 1 for _, s in items)


def _match_orientation(row: dict[int, int], pat: dict[int, int]) -> int:
    """0 if the row does not contain the pattern, else +1 or -1."""
    if all(row.get(v) == sv for v, sv in pat.items()):
        return 1
    if all(row.get(v) == -sv for v, sv in pat.items()):
        return -1
    return 0


def _topo_definitions(bodies: list[tuple[int, dict[int, int]]], n_inputs: int) -> list[Expression]:
    """Order definitions so each references only inputs or earlier variables."""
    body_of = dict(bodies)
    pending: dict[int, set[int]] = {
        var: {u for u in body if u in body_of} for var, body in bodies
    }
    users: dict[int, list[int]] = {var: [] for var, _ in bodies}
    for var, deps in pending.items():
        for u in deps:
            users[u].append(var)
    ready = [var for var, deps in pending.items() if not deps]
    heapq.heapify(ready)
    ordered: list[Expression] = []
    while ready:
        var = heapq.heappop(ready)
        ordered.append(from_dict(body_of[var], id=var))
        for w in users[var]:
            pending[w].discard(var)
            if not pending[w]:
                heapq.heappush(ready, w)
    if len(ordered) != len(bodies):
        raise RuntimeError("cyclic definitions produced by extraction; invariant violated")
    return ordered


def bu_cse(
    m: TernaryMatrix,
    *,
    max_extractions: int | None = None,
    trace: list[ExtractionEvent] | None = None,
    check_matrix: bool = False,
) -> CseResult:
    """Largest-common-pattern extraction driven by the pattern matrix.

    Each step takes the largest entry (at least two matching terms), rewrites
    every working row containing that pattern in either orientation, and
    appends the pattern itself as a new working row. Size ties are broken by
    the lexicographically smallest sorted variable tuple, then the same-sign
    orientation, then the first row pair in row order. Stops when the largest
    entry is at most one.
    """
    rows = _rows_of(m)
    n_outputs = len(rows)
    pm = PatternMatrix(rows, m.cols)
    def_rows: list[tuple[int, int]] = []  # (variable, working-row index)
    next_var = m.cols
    while True:
        if max_extractions is not None and len(def_rows) >= max_extractions:
            break
        mx = pm.max_entry()
        if mx <= 1:
            break
        best_key = None
        best_pat: dict[int, int] | None = None
        for r, s in pm.argmax_pairs(mx):
            pat = _common_pattern(rows[r], rows[s])
            if len(pat) != mx:
                raise RuntimeError("pattern matrix disagrees with row contents")
            key = (*_pattern_key(pat), r, s)
            if best_key is None or key < best_key:
                best_key, best_pat = key, pat
        assert best_pat is not None
        new = next_var
        next_var += 1
        pat_vars = sorted(best_pat)
        cand = np.flatnonzero(
            pm._rabs[: pm.n_rows, pat_vars].sum(axis=1) >= len(pat_vars)
        )
        changed: list[int] = []
        for w in cand:
            w = int(w)
            orient = _match_orientation(rows[w], best_pat)
            if orient == 0:
                continue
            for v in pat_vars:
                del rows[w][v]
                pm.clear_var(w, v)
            rows[w][new] = orient
            pm.set_var(w, new, orient)
            changed.append(w)
        if len(changed) < 2:
            raise RuntimeError("pattern matched fewer than two rows; invariant violated")
        body = dict(best_pat)
        rows.append(body)
        new_idx = pm.add_row(body)
        def_rows.append((new, new_idx))
        if trace is not None:
            trace.append(ExtractionEvent(new, from_dict(best_pat), len(changed)))
        pm.update_rows(changed + [new_idx])
        if check_matrix and not np.array_equal(pm.values(), PatternMatrix.sizes_from_scratch(rows)):
            raise RuntimeError("incremental pattern matrix diverged from the from-scratch one")

    definitions = _topo_definitions([(var, rows[idx]) for var, idx in def_rows], m.cols)
    outputs = tuple(from_dict(rows[r]) for r in range(n_outputs))
    total = _total_terms([d.terms for d in definitions]) + _total_terms([o.terms for o in outputs])
    return CseResult(m.cols, tuple(definitions), outputs, CseStats(len(def_rows), total))


# ---------------------------------------------------------------------------
# Equivalence checking


def expand_rows(result: CseResult) -> np.ndarray:
    """Symbolically substitute definitions into outputs, as coefficient rows."""
    coeff: dict[int, np.ndarray] = {}

    def vec_of(var: int) -> np.ndarray:
        if var < result.n_inputs:
            v = np.zeros(result.n_inputs, dtype=np.int32)
            v[var] = 1
            return v
        return coeff[var]

    for d in result.definitions:
        acc = np.zeros(result.n_inputs, dtype=np.int32)
        for var, sign in d.terms:
            acc += sign * vec_of(var)
        assert d.id is not None
        coeff[d.id] = acc
    out = np.zeros((len(result.outputs), result.n_inputs), dtype=np.int32)
    for r, e in enumerate(result.outputs):
        for var, sign in e.terms:
            out[r] += sign * vec_of(var)
    return out


def evaluate_cse(result: CseResult, x) -> list[int]:
    """Evaluate definitions then outputs on one integer input vector."""
    vals: dict[int, int] = {i: int(x[i]) for i in range(result.n_inputs)}
    for d in result.definitions:
        assert d.id is not None
        vals[d.id] = sum(s * vals[v] for v, s in d.terms)
    return [sum(s * vals[v] for v, s in e.terms) for e in result.outputs]


def evaluate_cse_batch(result: CseResult, xs: np.ndarray) -> np.ndarray:
    """Evaluate on a (n_inputs, batch) integer matrix, exactly, in int64."""
    xs = np.asarray(xs, dtype=np.int64)
    vals: dict[int, np.ndarray] = {i: xs[i] for i in range(result.n_inputs)}
    zero = np.zeros(xs.shape[1], dtype=np.int64)
    for d in result.definitions:
        acc = zero.copy()
        for v, s in d.terms:
            acc += s * vals[v]
        assert d.id is not None
        vals[d.id] = acc
    out = np.zeros((len(result.outputs), xs.shape[1]), dtype=np.int64)
    for r, e in enumerate(result.outputs):
        for v, s in e.terms:
            out[r] += s * vals[v]
    return out


def _exhaustive_inputs(cols: int) -> np.ndarray:
    n = 3**cols
    idx = np.arange(n, dtype=np.int64)[:, None] // (3 ** np.arange(cols, dtype=np.int64))[None, :]
    return (idx % 3 - 1).T.astype(np.int64)  # shape (cols, 3**cols)


def find_counterexample(
    m: TernaryMatrix, result: CseResult, trials: int = 200, seed: int = 0
) -> np.ndarray | None:
    """First input vector on which the result disagrees with m @ x, or None.

    Checks exhaustively over {-1,0,1}^cols when cols <= 12, then on random
    16-bit integer vectors.
    """
    batches = []
    if m.cols <= 12:
        batches.append(_exhaustive_inputs(m.cols))
    if trials > 0:
        rng = np.random.default_rng(seed)
        batches.append(rng.integers(-(2**15), 2**15, size=(m.cols, trials), dtype=np.int64))
    for xs in batches:
        got = evaluate_cse_batch(result, xs)
        want = m.entries.astype(np.int64) @ xs
        bad = np.argwhere((got != want).any(axis=0))
        if bad.size:
            return xs[:, int(bad[0][0])].copy()
    return None


def verify_equivalence(m: TernaryMatrix, result: CseResult, trials: int = 200, seed: int = 0) -> bool:
    return find_counterexample(m, result, trials, seed) is None


# ---------------------------------------------------------------------------
# Text format


def format_cse(result: CseResult) -> str:
    """Render definitions then outputs in the .cse line format."""
    lines = []
    for d in result.definitions:
        lines.append(f"def x{d.id} = {d}" if d.terms else f"def x{d.id} =")
    for r, e in enumerate(result.outputs):
        lines.append(f"out {r} = {e}" if e.terms else f"out {r} =")
    return "\n".join(lines) + "\n"


class CseFormatError(ValueError):
    """A .cse file violates the line format."""


def _parse_terms(tokens: list[str], lineno: int) -> tuple[tuple[int, int], ...]:
    terms = []
    for tok in tokens:
        if len(tok) < 3 or tok[0] not in "+-" or tok[1] != "x" or not tok[2:].isdigit():
            raise CseFormatError(f"line {lineno}: bad term {tok!r}")
        terms.append((int(tok[2:]), 1 if tok[0] == "+" else -1))
    return tuple(terms)


def parse_cse(text: str, n_inputs: int | None = None) -> CseResult:
    """Parse the .cse format.

    When ``n_inputs`` is omitted it is inferred: the smallest defined variable
    index bounds the inputs, or the largest referenced variable plus one when
    there are no definitions.
    """
    defs: list[Expression] = []
    outs: list[tuple[int, tuple[tuple[int, int], ...]]] = []
    seen_out = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "def":
            if seen_out:
                raise CseFormatError(f"line {lineno}: def after out lines")
            if len(parts) < 3 or parts[2] != "=":
                raise CseFormatError(f"line {lineno}: expected 'def x<k> = ...'")
            head = parts[1]
            if not head.startswith("x") or not head[1:].isdigit():
                raise CseFormatError(f"line {lineno}: bad definition name {head!r}")
            terms = _parse_terms(parts[3:], lineno)
            if not terms:
                raise CseFormatError(f"line {lineno}: empty definition body")
            defs.append(Expression(terms, id=int(head[1:])))
        elif parts[0] == "out":
            seen_out = True
            if len(parts) < 3 or parts[2] != "=":
                raise CseFormatError(f"line {lineno}: expected 'out <row> = ...'")
            if not parts[1].isdigit():
                raise CseFormatError(f"line {lineno}: bad row index {parts[1]!r}")
            outs.append((int(parts[1]), _parse_terms(parts[3:], lineno)))
        else:
            raise CseFormatError(f"line {lineno}: expected 'def' or 'out', got {parts[0]!r}")
    if not outs:
        raise CseFormatError("no out lines")
    for pos, (r, _) in enumerate(outs):
        if r != pos:
            raise CseFormatError(f"out rows must be consecutive from 0, got {r} at position {pos}")
    def_ids = {d.id for d in defs}
    if len(def_ids) != len(defs):
        raise CseFormatError("duplicate definition")
    referenced = {v for d in defs for v, _ in d.terms} | {v for _, ts in outs for v, _ in ts}
    if n_inputs is None:
        if defs:
            n_inputs = min(def_ids)
        else:
            n_inputs = (max(referenced) + 1) if referenced else 1
    defined: set[int] = set()
    for d in defs:
        assert d.id is not None
        if d.id < n_inputs:
            raise CseFormatError(f"definition x{d.id} collides with the input range")
        for v, _ in d.terms:
            if v >= n_inputs and v not in defined:
                raise CseFormatError(f"definition x{d.id} references undefined x{v}")
        defined.add(d.id)
    for r, ts in outs:
        for v, _ in ts:
            if v >= n_inputs and v not in defined:
                raise CseFormatError(f"out {r} references undefined x{v}")
    outputs = tuple(Expression(ts) for _, ts in outs)
    total = _total_terms([d.terms for d in defs]) + _total_terms([o.terms for o in outputs])
    return CseResult(n_inputs, tuple(defs), outputs, CseStats(len(defs), total))
