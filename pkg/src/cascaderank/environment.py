"""Simulated cascade-model user.

The simulated user mixes a relevance score and a topic-novelty score into a
per-position attraction probability, then browses the displayed list top to
bottom and clicks the first item whose Bernoulli attraction draw succeeds.
The mixing weight is hidden from the learning policies.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .core import AttractionVector, Catalog, ClickFeedback, RankedList


@dataclass(frozen=True)
class UserModel:
    """Ground-truth preferences of one simulated user.

    `relevance_mix` is the weight on the relevance term (the complement goes
    to topic novelty).  Instance bundles store users with the mix unset; a
    concrete value is chosen per run.
    """

    topic_prefs: np.ndarray
    rel_prefs: np.ndarray
    relevance_mix: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "topic_prefs", np.asarray(self.topic_prefs, dtype=np.float64))
        object.__setattr__(self, "rel_prefs", np.asarray(self.rel_prefs, dtype=np.float64))
        if self.relevance_mix is not None and not 0.0 <= self.relevance_mix <= 1.0:
            raise ValueError(f"relevance_mix must lie in [0, 1], got {self.relevance_mix}")

    def with_mix(self, relevance_mix: float) -> "UserModel":
        return replace(self, relevance_mix=float(relevance_mix))

    @property
    def joint_norm(self) -> float:
        """Norm of the stacked preference vector (used by the gamma schedule)."""
        return float(np.sqrt(self.topic_prefs @ self.topic_prefs + self.rel_prefs @ self.rel_prefs))


@dataclass(frozen=True)
class StepOutcome:
    """One simulated interaction, kept for logging."""

    ranked_list: RankedList
    alpha: AttractionVector
    feedback: ClickFeedback
    expected_reward: float
    clamp_count: int


def attraction_details(user: UserModel, ranked_list: RankedList, catalog: Catalog):
    """Attraction probabilities of a displayed list plus the clamp count.

    Position i's novelty term uses the coverage gain over the displayed
    prefix, so duplicated topics are damped down the list.  Values outside
    [0, 1] are truncated and counted.
    """
    if user.relevance_mix is None:
        raise ValueError("user has no relevance_mix set; call with_mix() first")
    if user.topic_prefs.size != catalog.d or user.rel_prefs.size != catalog.m:
        raise ValueError(
            f"user dimensions {user.topic_prefs.size}/{user.rel_prefs.size} "
            f"do not match catalog ({catalog.d}/{catalog.m})"
        )
    if min(ranked_list.positions) < 0 or max(ranked_list.positions) >= len(catalog):
        raise ValueError(
            f"ranked list ids {ranked_list.positions} out of range for catalog of {len(catalog)}"
        )
    ids = np.asarray(ranked_list.positions, dtype=np.int64)
    raw = _kernels.mixed_attraction(
        catalog.topics,
        catalog.relevance,
        ids,
        user.topic_prefs,
        user.rel_prefs,
        user.relevance_mix,
    )
    clipped = np.clip(raw, 0.0, 1.0)
    n_clamped = int(np.sum(clipped != raw))
    return AttractionVector(clipped), n_clamped


def attraction_vector(user: UserModel, ranked_list: RankedList, catalog: Catalog) -> AttractionVector:
    alpha, _ = attraction_details(user, ranked_list, catalog)
    return alpha


def sample_click(alpha: AttractionVector, rng: np.random.Generator) -> ClickFeedback:
    """First-click position under cascade browsing; K+1 when nothing attracts.

    Draws one uniform per position regardless of where the click lands, so a
    run consumes a fixed amount of randomness per step.
    """
    probs = alpha.probs
    hits = rng.random(probs.size) < probs
    idx = np.flatnonzero(hits)
    pos = int(idx[0]) + 1 if idx.size else probs.size + 1
    return ClickFeedback(pos)


def run_step(policy, user: UserModel, catalog: Catalog, k: int, rng: np.random.Generator) -> StepOutcome:
    """One full interaction: select, attract, sample the click, learn."""
    ranked = policy.select(catalog, k)
    alpha, n_clamped = attraction_details(user, ranked, catalog)
    feedback = sample_click(alpha, rng)
    policy.observe(ranked, feedback)
    return StepOutcome(
        ranked_list=ranked,
        alpha=alpha,
        feedback=feedback,
        # alpha is already range-checked, so the reward product is direct
        expected_reward=float(1.0 - np.prod(1.0 - alpha.probs)),
        clamp_count=n_clamped,
    )
