"""Threshold ternarization of float weight matrices.

The threshold is delta = epsilon * E(|w|) over the whole matrix; entries
strictly below it become zero, the rest keep their sign. The layer scaling
factor is the mean magnitude of the surviving entries. Comparison is strict
so epsilon = 0 keeps every nonzero weight.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .matrices import FloatMatrix, TernaryMatrix


def ternarize(w: FloatMatrix, epsilon: float) -> tuple[TernaryMatrix, float]:
    """Quantize weights to {-1, 0, +1} plus a scaling factor.

    Returns (t, s) with t_ij = 0 where |w_ij| < delta, sign(w_ij) elsewhere,
    and s the mean |w_ij| over surviving entries (0 if none survive).
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    a = w.entries
    if not np.isfinite(a).all():
        raise ValueError("weights contain non-finite entries")
    delta = epsilon * float(np.abs(a).mean())
    keep = np.abs(a) >= delta
    t = np.where(keep, np.sign(a), 0.0).astype(np.int8)
    survivors = np.abs(a)[keep & (np.sign(a) != 0)]
    s = float(survivors.mean()) if survivors.size else 0.0
    return TernaryMatrix(t), s


def threshold(w: FloatMatrix, epsilon: float) -> float:
    """The ternarization threshold delta = epsilon * E(|w|)."""
    return epsilon * float(np.abs(w.entries).mean())


def sparsity_sweep(w: FloatMatrix, eps_list: Sequence[float]) -> list[tuple[float, float]]:
    """Sparsity of ternarize(w, eps) per eps; non-decreasing in eps."""
    eps = list(eps_list)
    if any(b < a for a, b in zip(eps, eps[1:])):
        raise ValueError("eps_list must be sorted ascending")
    out = []
    for e in eps:
        t, _ = ternarize(w, e)
        out.append((float(e), t.sparsity()))
    return out
