"""Exhaustive-enumeration oracles for the fast paths.

Everything here recomputes results the slow, obviously-correct way:
determinant sums over the full power set, exhaustive MAP, exhaustive
segmentations, and exhaustive knapsacks. The `check` CLI subcommand drives
these against the production implementations.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from . import dpp
from .dpp import DppKernel


def all_subsets(n: int):
    for size in range(n + 1):
        yield from itertools.combinations(range(n), size)


def subset_det(mat: np.ndarray, subset) -> float:
    idx = list(subset)
    if not idx:
        return 1.0
    return float(np.linalg.det(mat[np.ix_(idx, idx)]))


def powerset_det_sum(kernel: DppKernel) -> float:
    """Sum of det(L_y) over every subset y; equals det(L + I)."""
    mat = kernel.matrix()
    return sum(subset_det(mat, s) for s in all_subsets(kernel.ground_size))


def exhaustive_map(kernel):
    """The subset maximizing det(L_y); ties go to the first enumerated
    (smaller, then lexicographically earlier) subset. Accepts a DppKernel
    or a raw symmetric matrix."""
    mat = kernel.matrix() if isinstance(kernel, DppKernel) else np.asarray(kernel, dtype=float)
    best, best_det = (), 1.0
    for subset in all_subsets(mat.shape[0]):
        d = subset_det(mat, subset)
        if d > best_det:
            best, best_det = subset, d
    return list(best)


def exhaustive_knapsack(lengths, scores, budget: int):
    """Max-score shot set with total length <= budget.

    Among exact-value optima, prefers the lexicographically smallest index
    tuple (matches the production tie-break). Callers that want reliable
    subset-level agreement should use scores whose sums are exact in floats
    (e.g. integer-valued).
    """
    n = len(lengths)
    best_tuple, best_value = None, -1.0
    for subset in all_subsets(n):
        if sum(lengths[i] for i in subset) > budget:
            continue
        value = float(sum(scores[i] for i in subset))
        if value > best_value or (
            value == best_value and (best_tuple is None or subset < best_tuple)
        ):
            best_tuple, best_value = subset, value
    return list(best_tuple) if best_tuple is not None else []


def exhaustive_segmentation(features: np.ndarray, num_change_points: int):
    """Minimum total within-segment scatter over all placements of exactly
    ``num_change_points`` interior boundaries."""
    from .kts import segment_cost

    n = features.shape[0]
    best_cost, best_cps = math.inf, None
    for cps in itertools.combinations(range(1, n), num_change_points):
        bounds = [0, *cps, n]
        cost = sum(segment_cost(features, a, b) for a, b in zip(bounds, bounds[1:]))
        if cost < best_cost - 1e-15:
            best_cost, best_cps = cost, list(cps)
    return best_cps, best_cost


def random_kernel(rng: np.random.Generator, n: int, dim: int | None = None) -> DppKernel:
    dim = dim or max(2, n)
    phi = rng.normal(size=(dim, n))
    q = rng.uniform(dpp.QUALITY_FLOOR, 1.0, size=n)
    return DppKernel(phi=phi, q=q)


# -- check suites ------------------------------------------------------------


def check_dpp(n: int = 8, trials: int = 50, seed: int = 0, rel_tol: float = 1e-9):
    """Brute-force verification of normalization, probabilities and MAP.

    Returns a list of (name, passed, detail) rows.
    """
    rng = np.random.default_rng(seed)
    worst_norm = 0.0
    worst_sum = 0.0
    greedy_ok = True
    for _ in range(trials):
        kernel = random_kernel(rng, n)
        brute = powerset_det_sum(kernel)
        fast = math.exp(dpp.normalizer_logdet(kernel))
        worst_norm = max(worst_norm, abs(fast - brute) / brute)
        total = sum(
            math.exp(dpp.log_prob(kernel, s)) for s in all_subsets(kernel.ground_size)
        )
        worst_sum = max(worst_sum, abs(total - 1.0))
        diag = DppKernel(phi=np.eye(n), q=rng.uniform(dpp.QUALITY_FLOOR, 1.0, size=n))
        if sorted(dpp.greedy_map(diag)) != exhaustive_map(diag):
            greedy_ok = False
    return [
        ("normalizer vs powerset det sum", worst_norm <= rel_tol, f"max rel err {worst_norm:.3e}"),
        ("subset probabilities sum to 1", worst_sum <= rel_tol, f"max abs err {worst_sum:.3e}"),
        ("greedy MAP = exhaustive MAP on diagonal kernels", greedy_ok, f"{trials} trials"),
    ]


def check_knapsack(trials: int = 50, max_shots: int = 12, seed: int = 0):
    from .summarizer import knapsack_shots

    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(trials):
        n = int(rng.integers(1, max_shots + 1))
        lengths = rng.integers(1, 7, size=n).tolist()
        # integer-valued scores keep tied sums exact, so tie-breaks compare
        scores = rng.integers(0, 1000, size=n).astype(float).tolist()
        budget = int(rng.integers(0, sum(lengths) + 2))
        if knapsack_shots(lengths, scores, budget) != exhaustive_knapsack(lengths, scores, budget):
            ok = False
    return [("knapsack DP vs exhaustive enumeration", ok, f"{trials} trials")]


def check_kts(trials: int = 50, max_steps: int = 12, seed: int = 0):
    from .kts import kts_fixed_m

    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(trials):
        n = int(rng.integers(4, max_steps + 1))
        feats = rng.normal(size=(n, 3))
        for m in range(0, min(4, n)):
            _, cost = kts_fixed_m(feats, m)
            _, brute_cost = exhaustive_segmentation(feats, m)
            if abs(cost - brute_cost) > 1e-9 * max(1.0, abs(brute_cost)):
                ok = False
    return [("KTS dynamic program vs exhaustive segmentation", ok, f"{trials} trials")]
