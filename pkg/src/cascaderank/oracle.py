"""Ground-truth benchmarks for regret measurement.

The reference list is built greedily from the true attraction scores: at
each position the item with the highest true attraction given the prefix
wins.  For order-dependent coverage utilities that list is not optimal, but
it comes with a multiplicative approximation guarantee, and tiny instances
can be checked against exhaustive enumeration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .core import Catalog, RankedList, expected_list_reward
from .environment import UserModel, attraction_vector


@dataclass(frozen=True)
class BenchmarkResult:
    greedy_list: RankedList
    greedy_reward: float
    eta: float
    optimal_list: RankedList | None = None
    optimal_reward: float | None = None


def _check_user(user: UserModel, catalog: Catalog) -> None:
    if user.relevance_mix is None:
        raise ValueError("user has no relevance_mix set; call with_mix() first")
    if user.topic_prefs.size != catalog.d or user.rel_prefs.size != catalog.m:
        raise ValueError("user preference dimensions do not match catalog")


def greedy_benchmark(user: UserModel, catalog: Catalog, k: int) -> RankedList:
    """Position-by-position argmax of the true attraction; ties to lowest id."""
    _check_user(user, catalog)
    n = len(catalog)
    if not 1 <= k <= n:
        raise ValueError(f"list size {k} out of range for catalog of {n} items")
    lam = user.relevance_mix
    rel_part = lam * (catalog.relevance @ user.rel_prefs)
    taken = np.zeros(n, dtype=bool)
    not_covered = np.ones(catalog.d)
    chosen = []
    for _ in range(k):
        scores = rel_part + (1.0 - lam) * (catalog.topics @ (not_covered * user.topic_prefs))
        scores[taken] = -np.inf
        best = int(np.argmax(scores))
        chosen.append(best)
        taken[best] = True
        not_covered = not_covered * (1.0 - catalog.topics[best])
    return RankedList(tuple(chosen))


def max_attraction(user: UserModel, catalog: Catalog) -> float:
    """Largest single-item attraction at an empty prefix (full topic vector)."""
    _check_user(user, catalog)
    lam = user.relevance_mix
    scores = lam * (catalog.relevance @ user.rel_prefs) + (1.0 - lam) * (catalog.topics @ user.topic_prefs)
    return float(np.max(scores))


def eta(k: int, alpha_max: float) -> float:
    """Approximation factor of the greedy list: (1 - 1/e) * max(1/K, 1 - (K-1)/2 * alpha_max)."""
    if k < 1:
        raise ValueError(f"list size must be >= 1, got {k}")
    if not 0.0 <= alpha_max <= 1.0:
        raise ValueError(f"alpha_max must lie in [0, 1], got {alpha_max}")
    return (1.0 - 1.0 / math.e) * max(1.0 / k, 1.0 - 0.5 * (k - 1) * alpha_max)


def list_reward(user: UserModel, catalog: Catalog, ranked: RankedList) -> float:
    """Expected number of clicks on a displayed list under the true model."""
    return expected_list_reward(attraction_vector(user, ranked, catalog))


def brute_force_optimal(
    user: UserModel, catalog: Catalog, k: int, cap: int = 10**6
) -> tuple[RankedList, float]:
    """Exhaustive search over all K-permutations; only feasible at desk scale.

    Ties go to the first maximizer in lexicographic id order.
    """
    _check_user(user, catalog)
    n = len(catalog)
    if not 1 <= k <= n:
        raise ValueError(f"list size {k} out of range for catalog of {n} items")
    count = math.perm(n, k)
    if count > cap:
        raise ValueError(f"{count} permutations exceed the enumeration cap {cap}")
    best_list = None
    best_reward = -1.0
    for perm in permutations(range(n), k):
        reward = list_reward(user, catalog, RankedList(perm))
        if reward > best_reward:
            best_reward = reward
            best_list = perm
    return RankedList(best_list), best_reward


def per_step_regret(
    user: UserModel,
    catalog: Catalog,
    k: int,
    displayed: RankedList,
    benchmark_reward: float | None = None,
) -> float:
    """Expected reward gap between the greedy benchmark and the displayed list.

    May be negative when the displayed list beats the greedy benchmark.
    `benchmark_reward` can be passed in to avoid recomputing the constant
    benchmark inside a simulation loop.
    """
    if benchmark_reward is None:
        benchmark_reward = list_reward(user, catalog, greedy_benchmark(user, catalog, k))
    return benchmark_reward - list_reward(user, catalog, displayed)


def benchmark(
    user: UserModel, catalog: Catalog, k: int, include_optimal: bool = False, cap: int = 10**6
) -> BenchmarkResult:
    """Bundle the greedy list, its reward, the approximation factor and,
    optionally, the enumerated optimum."""
    greedy = greedy_benchmark(user, catalog, k)
    greedy_reward = list_reward(user, catalog, greedy)
    factor = eta(k, max_attraction(user, catalog))
    optimal_list = None
    optimal_reward = None
    if include_optimal:
        optimal_list, optimal_reward = brute_force_optimal(user, catalog, k, cap=cap)
    return BenchmarkResult(greedy, greedy_reward, factor, optimal_list, optimal_reward)
