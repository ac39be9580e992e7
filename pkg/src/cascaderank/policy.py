"""Hybrid UCB ranking policy and its feature-mapped baseline variants.

A single state machine covers all five learners.  It keeps joint ridge
statistics for the two feature blocks in a block-factored form: a Gram
matrix over relevance features, a cross-moment matrix, and the Schur
complement of the coverage block, so parameter estimates and confidence
widths come out of two small solves instead of one (d+m)-sized solve.

Which features feed the two blocks is decided by a FeatureMap:

    hybrid       coverage gains of topic vectors  +  relevance features
    linear-z     relevance features only (classic cascading LinUCB)
    linear-xz    topics and relevance concatenated, all treated linearly
    coverage-x   topic coverage gains only (cascading submodular bandit)
    coverage-xz  topics and relevance concatenated, all treated as coverage
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from .core import Catalog, ClickFeedback, RankedList, gains_along_list

logger = logging.getLogger(__name__)

FEATURE_KINDS = ("hybrid", "linear-z", "linear-xz", "coverage-x", "coverage-xz")

# CLI/config policy names -> feature map kind
POLICY_FEATURE_KINDS = {
    "hybrid": "hybrid",
    "linucb": "linear-z",
    "linucb-full": "linear-xz",
    "lsb": "coverage-x",
    "lsb-full": "coverage-xz",
}

POLICY_NAMES = tuple(POLICY_FEATURE_KINDS)

# residual threshold that triggers a from-scratch inverse rebuild
_GUARD_TOL = 1e-6


class FeatureMap:
    """Binds a feature-map kind to one catalog and materializes the feature blocks.

    `coverage_features` rows feed the submodular (coverage-gain) block,
    `relevance_features` rows feed the linear block.  Either block may be
    empty (zero columns) for the degenerate baselines.
    """

    def __init__(self, kind: str, catalog: Catalog, range_mode: str = "clamp"):
        if kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature map kind {kind!r}, expected one of {FEATURE_KINDS}")
        if range_mode not in ("clamp", "rescale"):
            raise ValueError(f"range_mode must be 'clamp' or 'rescale', got {range_mode!r}")
        self.kind = kind
        self.range_mode = range_mode
        self.n_items = len(catalog)
        nothing = np.zeros((self.n_items, 0))
        if kind == "hybrid":
            cov, rel = catalog.topics, catalog.relevance
        elif kind == "linear-z":
            cov, rel = nothing, catalog.relevance
        elif kind == "linear-xz":
            cov, rel = nothing, np.hstack([catalog.topics, catalog.relevance])
        elif kind == "coverage-x":
            cov, rel = catalog.topics, nothing
        else:  # coverage-xz: relevance features may be negative, coverage needs [0, 1]
            joint = np.hstack([catalog.topics, catalog.relevance])
            cov, rel = self._into_unit_range(joint), nothing
        self.coverage_features = cov
        self.relevance_features = rel
        self.dim_cov = cov.shape[1]
        self.dim_rel = rel.shape[1]

    def _into_unit_range(self, mat: np.ndarray) -> np.ndarray:
        if self.range_mode == "clamp":
            return np.clip(mat, 0.0, 1.0)
        lo = mat.min(axis=0)
        hi = mat.max(axis=0)
        span = hi - lo
        out = np.where(span > 0.0, (mat - lo) / np.where(span > 0.0, span, 1.0), np.clip(mat, 0.0, 1.0))
        return out

    def observed_features(self, ranked_list: RankedList, n_observed: int):
        """Features of the first `n_observed` displayed items.

        Coverage gains are recomputed against the prefix actually displayed,
        so row i uses positions 0..i-1 of the list.
        """
        ids = ranked_list.positions[:n_observed]
        if min(ids) < 0 or max(ids) >= self.n_items:
            raise ValueError(f"ranked list ids {ids} out of range for catalog of {self.n_items}")
        rows = np.asarray(ids, dtype=np.int64)
        gains = gains_along_list(self.coverage_features[rows])
        return gains, self.relevance_features[rows]


@dataclass
class PolicyState:
    """Sufficient statistics of the block-factored ridge model.

    `cov_schur` stores the coverage block with the relevance block folded in
    (Schur complement), and `cov_clicks_adj` the correspondingly adjusted
    click vector; `cov_gram`/`cov_clicks` keep the plain running sums so the
    factored form can be rebuilt from scratch if the maintained inverses
    ever degrade.
    """

    dim_cov: int
    dim_rel: int
    gamma: float
    step: int
    rel_gram: np.ndarray        # I_m + sum of z z^T over observed items
    rel_gram_inv: np.ndarray
    cross_gram: np.ndarray      # sum of omega z^T over observed items
    cov_gram: np.ndarray        # I_d + sum of omega omega^T over observed items
    cov_schur: np.ndarray       # cov_gram - cross rel_gram^-1 cross^T
    cov_schur_inv: np.ndarray
    rel_clicks: np.ndarray      # sum of z over clicked items
    cov_clicks: np.ndarray      # sum of omega over clicked items
    cov_clicks_adj: np.ndarray  # cov_clicks - cross rel_gram^-1 rel_clicks


@dataclass(frozen=True)
class ParameterEstimate:
    """Point estimates of the coverage-block and relevance-block weights."""

    coverage_weights: np.ndarray
    relevance_weights: np.ndarray


def init_state(dim_cov: int, dim_rel: int, gamma: float) -> PolicyState:
    """Fresh identity/zero statistics; either block may be empty, not both."""
    if dim_cov < 0 or dim_rel < 0 or dim_cov + dim_rel < 1:
        raise ValueError(f"need nonnegative dimensions with dim_cov + dim_rel >= 1, got {dim_cov}/{dim_rel}")
    if not gamma > 0.0:
        raise ValueError(f"exploration weight gamma must be positive, got {gamma}")
    return PolicyState(
        dim_cov=dim_cov,
        dim_rel=dim_rel,
        gamma=float(gamma),
        step=1,
        rel_gram=np.eye(dim_rel),
        rel_gram_inv=np.eye(dim_rel),
        cross_gram=np.zeros((dim_cov, dim_rel)),
        cov_gram=np.eye(dim_cov),
        cov_schur=np.eye(dim_cov),
        cov_schur_inv=np.eye(dim_cov),
        rel_clicks=np.zeros(dim_rel),
        cov_clicks=np.zeros(dim_cov),
        cov_clicks_adj=np.zeros(dim_cov),
    )


def estimate_parameters(state: PolicyState) -> ParameterEstimate:
    """Back-substitute the block solves; equals the joint ridge solution."""
    cov_w = state.cov_schur_inv @ state.cov_clicks_adj
    rel_w = state.rel_gram_inv @ (state.rel_clicks - state.cross_gram.T @ cov_w)
    return ParameterEstimate(cov_w, rel_w)


def confidence_width(state: PolicyState, cov_feat, rel_feat) -> float:
    """Squared confidence width of one item; equals phi^T (joint Gram)^-1 phi."""
    w = np.asarray(cov_feat, dtype=np.float64)
    z = np.asarray(rel_feat, dtype=np.float64)
    if w.shape != (state.dim_cov,) or z.shape != (state.dim_rel,):
        raise ValueError(
            f"feature dimensions {w.shape}/{z.shape} do not match state "
            f"({state.dim_cov}/{state.dim_rel})"
        )
    zt = state.rel_gram_inv @ z
    c = state.cross_gram @ zt
    hw = state.cov_schur_inv @ w
    hc = state.cov_schur_inv @ c
    s = w @ hw - 2.0 * (w @ hc) + z @ zt + c @ hc
    return max(float(s), 0.0)


def ucb(state: PolicyState, cov_feat, rel_feat) -> float:
    """Optimistic attraction estimate: mean + gamma * sqrt(width), unclamped."""
    est = estimate_parameters(state)
    mean = float(np.asarray(cov_feat) @ est.coverage_weights + np.asarray(rel_feat) @ est.relevance_weights)
    return mean + state.gamma * math.sqrt(confidence_width(state, cov_feat, rel_feat))


def _static_score_parts(state: PolicyState, fmap: FeatureMap):
    """Per-step precomputations that do not depend on the list prefix.

    The width of an item factors as (omega - c)^T schur_inv (omega - c) plus
    the relevance-only term z^T rel_gram_inv z, with c the cross-folded
    relevance vector; everything except omega is prefix-independent.
    """
    est = estimate_parameters(state)
    z_mat = fmap.relevance_features
    rel_mean = z_mat @ est.relevance_weights
    t = z_mat @ state.rel_gram_inv
    rel_width = np.einsum("ij,ij->i", t, z_mat)
    cross = t @ state.cross_gram.T          # row a: cross-folded relevance vector of item a
    return est, rel_mean, rel_width, cross


def select_list(state: PolicyState, catalog: Catalog, k: int, fmap: FeatureMap) -> RankedList:
    """Greedy optimistic list construction.

    At each position the coverage gains are recomputed against the prefix
    chosen so far and the item with the highest UCB wins; exact score ties
    go to the lowest item id.
    """
    n = len(catalog)
    if not 1 <= k <= n:
        raise ValueError(f"list size {k} out of range for catalog of {n} items")
    if (fmap.dim_cov, fmap.dim_rel) != (state.dim_cov, state.dim_rel):
        raise ValueError("feature map dimensions do not match policy state")
    if fmap.n_items != n:
        raise ValueError("feature map was built for a different catalog")

    est, rel_mean, static_width, cross = _static_score_parts(state, fmap)

    if state.dim_cov == 0:
        # scores do not depend on the prefix: repeated masked argmax
        scores = rel_mean + state.gamma * np.sqrt(np.maximum(static_width, 0.0))
        chosen = []
        for _ in range(k):
            best = int(np.argmax(scores))
            chosen.append(best)
            scores[best] = -np.inf
        return RankedList(tuple(chosen))

    ids = _kernels.greedy_select(
        fmap.coverage_features,
        state.cov_schur_inv,
        cross,
        est.coverage_weights,
        rel_mean,
        static_width,
        state.gamma,
        k,
    )
    return RankedList(tuple(int(i) for i in ids))


def update(
    state: PolicyState, ranked_list: RankedList, feedback: ClickFeedback, fmap: FeatureMap
) -> PolicyState:
    """Fold one step of cascade feedback into the statistics.

    Items up to the click (or the whole list on no-click) count as observed;
    the clicked item also feeds the click vectors.  The relevance Gram
    inverse is maintained by rank-one updates, the Schur-complement block is
    rebuilt from the running sums and inverted directly once per step.
    """
    k = len(ranked_list)
    if not 1 <= feedback.click_pos <= k + 1:
        raise ValueError(f"click position {feedback.click_pos} out of range for K={k}")
    n_observed = min(k, feedback.click_pos)
    gains, rel_rows = fmap.observed_features(ranked_list, n_observed)
    clicked_row = feedback.click_pos - 1 if feedback.click_pos <= k else -1
    _kernels.fold_observations(
        state.rel_gram,
        state.rel_gram_inv,
        state.cross_gram,
        state.cov_gram,
        state.rel_clicks,
        state.cov_clicks,
        gains,
        rel_rows,
        clicked_row,
    )
    _refresh_schur(state)
    if _inverse_residual(state) > _GUARD_TOL:
        logger.warning(
            "step %d: inverse residual above %.1e, rebuilding inverses from running sums",
            state.step,
            _GUARD_TOL,
        )
        state.rel_gram_inv = np.linalg.inv(state.rel_gram)
        _refresh_schur(state)
        resid = _inverse_residual(state)
        if resid > _GUARD_TOL:
            logger.warning("step %d: residual still %.3e after rebuild", state.step, resid)
    state.step += 1
    return state


_EYE_CACHE: dict = {}


def _eye(dim: int) -> np.ndarray:
    cached = _EYE_CACHE.get(dim)
    if cached is None:
        cached = _EYE_CACHE[dim] = np.eye(dim)
    return cached


def _refresh_schur(state: PolicyState) -> None:
    folded = state.cross_gram @ state.rel_gram_inv
    state.cov_schur = state.cov_gram - folded @ state.cross_gram.T
    state.cov_clicks_adj = state.cov_clicks - folded @ state.rel_clicks
    state.cov_schur_inv = np.linalg.inv(state.cov_schur)


def _inverse_residual(state: PolicyState) -> float:
    r1 = np.linalg.norm(state.cov_schur @ state.cov_schur_inv - _eye(state.dim_cov))
    r2 = np.linalg.norm(state.rel_gram @ state.rel_gram_inv - _eye(state.dim_rel))
    return max(float(r1), float(r2))


def theoretical_gamma(dim_rel: int, dim_cov: int, n_steps: int, list_size: int, weight_norm: float) -> float:
    """Exploration weight that makes the confidence intervals hold uniformly.

    sqrt(p * log(1 + n*K/p) + 2*log(n)) + |w|  with p = dim_rel + dim_cov.
    """
    if n_steps < 1 or list_size < 1:
        raise ValueError(f"need n_steps >= 1 and list_size >= 1, got {n_steps}/{list_size}")
    p = dim_rel + dim_cov
    if p < 1:
        raise ValueError("need at least one feature dimension")
    if not 0.0 <= weight_norm <= 1.0:
        raise ValueError(f"weight_norm must lie in [0, 1], got {weight_norm}")
    return math.sqrt(p * math.log(1.0 + n_steps * list_size / p) + 2.0 * math.log(n_steps)) + weight_norm


_SNAPSHOT_VERSION = 1

_STATE_ARRAYS = (
    "rel_gram",
    "rel_gram_inv",
    "cross_gram",
    "cov_gram",
    "cov_schur",
    "cov_schur_inv",
    "rel_clicks",
    "cov_clicks",
    "cov_clicks_adj",
)


def save_state(state: PolicyState, path) -> None:
    """Write a versioned snapshot (row-major arrays, dimensions in the header)."""
    arrays = {name: getattr(state, name) for name in _STATE_ARRAYS}
    np.savez(
        Path(path),
        format_version=np.int64(_SNAPSHOT_VERSION),
        dim_cov=np.int64(state.dim_cov),
        dim_rel=np.int64(state.dim_rel),
        gamma=np.float64(state.gamma),
        step=np.int64(state.step),
        **arrays,
    )


def load_state(path) -> PolicyState:
    with np.load(Path(path)) as data:
        version = int(data["format_version"])
        if version != _SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        return PolicyState(
            dim_cov=int(data["dim_cov"]),
            dim_rel=int(data["dim_rel"]),
            gamma=float(data["gamma"]),
            step=int(data["step"]),
            **{name: data[name] for name in _STATE_ARRAYS},
        )


class Policy:
    """One named learner: a feature map bound to a catalog plus its state."""

    def __init__(self, name: str, state: PolicyState, fmap: FeatureMap):
        self.name = name
        self.state = state
        self.fmap = fmap

    @classmethod
    def create(cls, name: str, catalog: Catalog, gamma: float = 1.0, range_mode: str = "clamp") -> "Policy":
        if name not in POLICY_FEATURE_KINDS:
            raise ValueError(f"unknown policy {name!r}, expected one of {POLICY_NAMES}")
        fmap = FeatureMap(POLICY_FEATURE_KINDS[name], catalog, range_mode=range_mode)
        state = init_state(fmap.dim_cov, fmap.dim_rel, gamma)
        return cls(name, state, fmap)

    def select(self, catalog: Catalog, k: int) -> RankedList:
        return select_list(self.state, catalog, k, self.fmap)

    def observe(self, ranked_list: RankedList, feedback: ClickFeedback) -> None:
        update(self.state, ranked_list, feedback, self.fmap)
