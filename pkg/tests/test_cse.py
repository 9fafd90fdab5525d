import itertools

import numpy as np
import pytest

from ternroll import (
    TernaryMatrix,
    bu_cse,
    evaluate_cse,
    expand_rows,
    find_counterexample,
    no_cse,
    td_cse,
    verify_equivalence,
)
from ternroll.cse import (
    CseFormatError,
    CseResult,
    CseStats,
    PairTable,
    PatternMatrix,
    format_cse,
    parse_cse,
)
from ternroll.expressions import Expression, expression
from ternroll.matrices import random_ternary


def terms(*pairs):
    return tuple(pairs)


# ---------------------------------------------------------------------------
# Worked 7x6 example, top-down


def test_td_first_extraction_and_rewritten_system(m7x6):
    trace = []
    r = td_cse(m7x6, max_extractions=1, trace=trace)
    assert trace[0].pattern.terms == terms((2, 1), (3, 1))
    assert trace[0].occurrences == 3
    assert [o.terms for o in r.outputs] == [
        terms((6, 1)),
        terms((0, 1), (4, 1), (6, 1)),
        terms((1, 1), (4, 1), (5, 1)),
        terms((1, 1), (5, 1)),
        terms((0, 1), (6, 1)),
        terms((0, 1), (3, 1)),
        terms((1, 1), (4, 1), (5, 1)),
    ]
    assert r.definitions[0].id == 6
    assert r.definitions[0].terms == terms((2, 1), (3, 1))


def test_td_full_run_equivalent(m7x6):
    r = td_cse(m7x6)
    assert verify_equivalence(m7x6, r)
    assert np.array_equal(expand_rows(r), m7x6.entries.astype(np.int32))


def test_td_disjoint_singletons_no_extractions():
    m = TernaryMatrix(np.eye(4, dtype=np.int8))
    r = td_cse(m)
    assert r.stats.extractions == 0
    assert [o.terms for o in r.outputs] == [terms((k, 1)) for k in range(4)]


def test_td_negated_pair_shares_one_definition():
    m = TernaryMatrix(np.array([[1, 1], [-1, -1]], dtype=np.int8))
    r = td_cse(m)
    assert len(r.definitions) == 1
    assert r.definitions[0].terms == terms((0, 1), (1, 1))
    assert [o.terms for o in r.outputs] == [terms((2, 1)), terms((2, -1))]
    # brute force over both possible extractions confirms cost 1 is minimal
    assert verify_equivalence(m, r)


def test_td_progress_reduces_adds_by_freq_minus_one(m7x6):
    def adds(result: CseResult) -> int:
        exprs = [d.terms for d in result.definitions] + [o.terms for o in result.outputs]
        return sum(max(len(e) - 1, 0) for e in exprs)

    full_trace = []
    td_cse(m7x6, trace=full_trace)
    prev = adds(no_cse(m7x6))
    for k, ev in enumerate(full_trace, start=1):
        cur = adds(td_cse(m7x6, max_extractions=k))
        assert prev - cur == ev.occurrences - 1
        assert ev.occurrences >= 2
        prev = cur
    assert len(full_trace) <= no_cse(m7x6).stats.total_terms


def test_td_incremental_table_matches_scratch(rng):
    for _ in range(5):
        m = random_ternary(8, 10, 0.5, rng)
        td_cse(m, check_table=True)


def test_td_termination_no_pair_twice(m7x6):
    r = td_cse(m7x6)
    rows = [dict(o.terms) for o in r.outputs]
    table = PairTable.from_rows(rows)
    assert all(len(occ) < 2 for occ in table.occ.values())


def test_td_deterministic(rng):
    m = random_ternary(12, 16, 0.5, rng)
    a = td_cse(m)
    b = td_cse(m)
    assert a == b


# ---------------------------------------------------------------------------
# Worked 7x6 example, bottom-up


def test_bu_first_extraction_appends_working_row(m7x6):
    trace = []
    r = bu_cse(m7x6, max_extractions=1, trace=trace)
    assert trace[0].pattern.terms == terms((0, 1), (2, 1), (3, 1))
    assert trace[0].occurrences == 2
    # the appended row is the definition body, so rows 1 and 4 reference it
    assert r.definitions[0].id == 6
    assert r.definitions[0].terms == terms((0, 1), (2, 1), (3, 1))
    assert [o.terms for o in r.outputs] == [
        terms((2, 1), (3, 1)),
        terms((4, 1), (6, 1)),
        terms((1, 1), (4, 1), (5, 1)),
        terms((1, 1), (5, 1)),
        terms((6, 1)),
        terms((0, 1), (3, 1)),
        terms((1, 1), (4, 1), (5, 1)),
    ]


def test_bu_appended_row_is_further_decomposed(m7x6):
    trace = []
    r = bu_cse(m7x6, trace=trace)
    assert trace[0].pattern.terms == terms((0, 1), (2, 1), (3, 1))
    # x6 still contains a removable two-term pattern, so its body ends up
    # rewritten in terms of a later extraction
    x6 = next(d for d in r.definitions if d.id == 6)
    assert len(x6.terms) == 2
    expanded = expand_rows(
        CseResult(r.n_inputs, r.definitions, (Expression(((6, 1),)),), CseStats(0, 0))
    )
    assert expanded.tolist() == [[1, 0, 1, 1, 0, 0]]
    assert verify_equivalence(m7x6, r)
    assert np.array_equal(expand_rows(r), m7x6.entries.astype(np.int32))


def test_bu_definitions_topological(m7x6, rng):
    for m in [m7x6] + [random_ternary(8, 10, 0.4, rng) for _ in range(3)]:
        r = bu_cse(m)
        defined = set(range(r.n_inputs))
        for d in r.definitions:
            assert all(v in defined for v, _ in d.terms)
            defined.add(d.id)


def test_bu_identical_rows():
    m = TernaryMatrix(np.array([[1, 1, 1], [1, 1, 1]], dtype=np.int8))
    r = bu_cse(m)
    assert len(r.definitions) == 1
    assert r.definitions[0].terms == terms((0, 1), (1, 1), (2, 1))
    assert [o.terms for o in r.outputs] == [terms((3, 1)), terms((3, 1))]


def test_bu_negated_orientation():
    m = TernaryMatrix(np.array([[1, 1, 0], [-1, -1, 0]], dtype=np.int8))
    r = bu_cse(m)
    assert len(r.definitions) == 1
    assert [o.terms for o in r.outputs] == [terms((3, 1)), terms((3, -1))]


def test_bu_incremental_matrix_matches_scratch(rng):
    for _ in range(5):
        m = random_ternary(8, 10, 0.5, rng)
        bu_cse(m, check_matrix=True)


def test_bu_deterministic(rng):
    m = random_ternary(12, 16, 0.5, rng)
    assert bu_cse(m) == bu_cse(m)


def test_bu_termination_no_common_pattern_left(m7x6):
    r = bu_cse(m7x6)
    rows = [dict(o.terms) for o in r.outputs] + [dict(d.terms) for d in r.definitions]
    assert PatternMatrix.sizes_from_scratch(rows).max() <= 1


def test_pattern_matrix_symmetric_zero_diagonal(m7x6, rng):
    rows = [dict(m7x6.row_terms(r)) for r in range(m7x6.rows)]
    pm = PatternMatrix(rows, m7x6.cols)
    v = pm.values()
    assert np.array_equal(v, v.T)
    assert (np.diag(v) == 0).all()
    assert np.array_equal(v, PatternMatrix.sizes_from_scratch(rows))
    # the worked example's largest entry is the 3-term pattern of rows 1, 4
    assert pm.max_entry() == 3
    assert (1, 4) in pm.argmax_pairs(3)


def test_pattern_matrix_untouched_pairs_never_grow(rng):
    m = random_ternary(10, 14, 0.5, rng)
    rows = [dict(m.row_terms(r)) for r in range(m.rows)]
    before = PatternMatrix.sizes_from_scratch(rows)
    for k in range(1, 4):
        r = bu_cse(m, max_extractions=k)
        after_rows = [dict(o.terms) for o in r.outputs]
        after = PatternMatrix.sizes_from_scratch(after_rows)
        untouched = [
            i
            for i in range(m.rows)
            if dict(r.outputs[i].terms) == rows[i]
        ]
        for a in untouched:
            for b in untouched:
                assert after[a, b] <= before[a, b]
                assert after[a, b] == before[a, b]  # untouched pairs are stable


# ---------------------------------------------------------------------------
# Exhaustive-sequence oracle on a 3-row instance


def _bu_cost(defs, outs):
    return sum(max(len(e) - 1, 0) for e in defs) + sum(max(len(o) - 1, 0) for o in outs)


def _enumerate_bu_sequences(rows, n_vars):
    """All final costs reachable by any legal largest-or-smaller extraction order.

    Every extraction of a (>= 2)-term pattern shared by some pair of rows is
    explored, matching rows rewritten and the body appended, exactly as the
    pass does, but over every candidate instead of the tie-broken best.
    """
    results = []

    def step(rows, n_vars):
        cands = {}
        for r, s in itertools.combinations(range(len(rows)), 2):
            for orient in (1, -1):
                pat = {
                    v: sv for v, sv in rows[r].items() if rows[s].get(v) == orient * sv
                }
                if len(pat) >= 2:
                    if pat[min(pat)] == -1:
                        pat = {v: -sv for v, sv in pat.items()}
                    cands[tuple(sorted(pat.items()))] = pat
        if not cands:
            results.append(_bu_cost(rows[3:], rows[:3]) + 0)
            return
        for pat in cands.values():
            nxt = [dict(row) for row in rows]
            for row in nxt:
                if all(row.get(v) == sv for v, sv in pat.items()):
                    for v in pat:
                        del row[v]
                    row[n_vars] = 1
                elif all(row.get(v) == -sv for v, sv in pat.items()):
                    for v in pat:
                        del row[v]
                    row[n_vars] = -1
            nxt.append(dict(pat))
            step(nxt, n_vars + 1)

    step([dict(r) for r in rows], n_vars)
    return results


def test_bu_three_row_exhaustive_oracle():
    m = TernaryMatrix(
        np.array([[1, 1, 1, 0], [1, 1, 0, 1], [0, 1, 1, 0]], dtype=np.int8)
    )
    trace = []
    r = bu_cse(m, trace=trace)
    # tie between patterns (x0,x1) and (x1,x2): smallest variable tuple wins
    assert trace[0].pattern.terms == terms((0, 1), (1, 1))
    mine = _bu_cost([d.terms for d in r.definitions], [o.terms for o in r.outputs])
    all_costs = _enumerate_bu_sequences([dict(row) for row in map(dict, (
        {0: 1, 1: 1, 2: 1}, {0: 1, 1: 1, 3: 1}, {1: 1, 2: 1},
    ))], 4)
    assert all_costs  # the enumeration explored every legal sequence
    assert mine == min(all_costs)
    assert verify_equivalence(m, r)


# ---------------------------------------------------------------------------
# Equivalence checking


def test_verify_exhaustive_small(m7x6):
    assert verify_equivalence(m7x6, td_cse(m7x6), trials=0)
    assert verify_equivalence(m7x6, bu_cse(m7x6), trials=0)


def test_identity_outputs_always_equivalent(rng):
    m = random_ternary(5, 8, 0.3, rng)
    assert verify_equivalence(m, no_cse(m))


def test_corrupted_result_found_with_witness(m7x6):
    r = td_cse(m7x6)
    flipped = list(r.outputs)
    v, s = flipped[1].terms[0]
    flipped[1] = Expression(((v, -s),) + flipped[1].terms[1:])
    bad = CseResult(r.n_inputs, r.definitions, tuple(flipped), r.stats)
    w = find_counterexample(m7x6, bad)
    assert w is not None
    got = evaluate_cse(bad, w)
    want = m7x6.matvec(w)
    assert any(int(a) != int(b) for a, b in zip(got, want))
    assert not verify_equivalence(m7x6, bad)


def test_symbolic_expansion_random(rng):
    for _ in range(10):
        m = random_ternary(10, 14, 0.6, rng)
        for fn in (td_cse, bu_cse):
            assert np.array_equal(expand_rows(fn(m)), m.entries.astype(np.int32))


def test_all_zero_row_expression(rng):
    a = random_ternary(4, 6, 0.5, rng).entries.copy()
    a[2] = 0
    m = TernaryMatrix(a)
    for fn in (td_cse, bu_cse, no_cse):
        r = fn(m)
        assert r.outputs[2].terms == ()
        assert verify_equivalence(m, r)


# ---------------------------------------------------------------------------
# Text format


def test_format_cse_golden(m7x6):
    text = format_cse(td_cse(m7x6))
    assert text.splitlines()[0] == "def x6 = +x2 +x3"
    assert "out 0 = +x6" in text.splitlines()


def test_cse_round_trip(m7x6, rng):
    for m in [m7x6] + [random_ternary(6, 9, 0.5, rng) for _ in range(3)]:
        for fn in (td_cse, bu_cse, no_cse):
            r = fn(m)
            again = parse_cse(format_cse(r), n_inputs=m.cols)
            assert again.definitions == r.definitions
            assert again.outputs == r.outputs
            inferred = parse_cse(format_cse(r))
            if r.definitions:
                assert inferred.n_inputs == m.cols


def test_parse_cse_empty_output_row():
    r = parse_cse("out 0 = +x0\nout 1 =\n", n_inputs=2)
    assert r.outputs[1].terms == ()


@pytest.mark.parametrize(
    "text",
    [
        "",
        "def x2 = +x0 +x1\n",  # no out lines
        "out 0 = +x9\n",  # dangling reference
        "out 1 = +x0\n",  # rows not consecutive
        "out 0 = x0\n",  # missing sign
        "def x2 =\nout 0 = +x0\n",  # empty definition
        "out 0 = +x0\ndef x2 = +x0 +x0\n",  # def after out
        "banana\n",
    ],
)
def test_parse_cse_errors(text):
    with pytest.raises(CseFormatError):
        parse_cse(text, n_inputs=2)


def test_parse_cse_forward_reference_rejected():
    with pytest.raises(CseFormatError):
        parse_cse("def x3 = +x0 +x4\ndef x4 = +x0 +x1\nout 0 = +x3\n", n_inputs=3)


def test_expression_stats(m7x6):
    r = td_cse(m7x6)
    assert r.stats.extractions == len(r.definitions)
    n_terms = sum(len(d.terms) for d in r.definitions) + sum(len(o.terms) for o in r.outputs)
    assert r.stats.total_terms == n_terms
