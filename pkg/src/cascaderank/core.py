"""Core data types and attraction-probability math.

Items carry two feature blocks: a topic vector in [0, 1]^d (probability of
covering each topic) and a relevance vector in R^m.  A ranked list's utility
is driven by per-position attraction probabilities that mix a modular
relevance score with a submodular topic-coverage gain, and the user clicks
at most once (cascade browsing).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels


def _as_vector(value, name: str) -> np.ndarray:
    vec = np.asarray(value, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {vec.shape}")
    return vec


@dataclass(frozen=True)
class Item:
    """One candidate item: integer id plus its two feature blocks."""

    id: int
    topic_vec: np.ndarray
    rel_vec: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "topic_vec", _as_vector(self.topic_vec, "topic_vec"))
        object.__setattr__(self, "rel_vec", _as_vector(self.rel_vec, "rel_vec"))
        if self.topic_vec.size and (
            np.min(self.topic_vec) < 0.0 or np.max(self.topic_vec) > 1.0
        ):
            raise ValueError(f"item {self.id}: topic_vec entries must lie in [0, 1]")


class Catalog:
    """Ordered collection of L items sharing topic dimension d and relevance dimension m.

    Item ids must be exactly 0..L-1 in order, so an id doubles as a row index
    into the stacked feature matrices.
    """

    def __init__(self, items: Sequence[Item]):
        items = list(items)
        if not items:
            raise ValueError("catalog needs at least one item")
        d = items[0].topic_vec.size
        m = items[0].rel_vec.size
        for row, item in enumerate(items):
            if item.topic_vec.size != d or item.rel_vec.size != m:
                raise ValueError(
                    f"item {item.id}: feature dimensions {item.topic_vec.size}/"
                    f"{item.rel_vec.size} do not match catalog ({d}/{m})"
                )
            if item.id != row:
                raise ValueError(f"item ids must be 0..L-1 in order (row {row} has id {item.id})")
        self.items = items
        self.d = d
        self.m = m
        self.topics = np.array([it.topic_vec for it in items], dtype=np.float64).reshape(len(items), d)
        self.relevance = np.array([it.rel_vec for it in items], dtype=np.float64).reshape(len(items), m)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, item_id: int) -> Item:
        return self.items[item_id]

    @classmethod
    def from_arrays(cls, topics: np.ndarray, relevance: np.ndarray) -> "Catalog":
        topics = np.atleast_2d(np.asarray(topics, dtype=np.float64))
        relevance = np.atleast_2d(np.asarray(relevance, dtype=np.float64))
        if topics.shape[0] != relevance.shape[0]:
            raise ValueError("topics and relevance must have one row per item")
        return cls([Item(i, topics[i], relevance[i]) for i in range(topics.shape[0])])


@dataclass(frozen=True)
class RankedList:
    """A K-permutation of item ids, first position shown first."""

    positions: tuple

    def __post_init__(self):
        positions = tuple(int(p) for p in self.positions)
        if len(set(positions)) != len(positions):
            raise ValueError(f"ranked list contains duplicate ids: {positions}")
        if not positions:
            raise ValueError("ranked list must contain at least one item")
        object.__setattr__(self, "positions", positions)

    def __len__(self) -> int:
        return len(self.positions)

    def __iter__(self):
        return iter(self.positions)


@dataclass(frozen=True)
class ClickFeedback:
    """First-click position in 1..K+1; K+1 encodes "no click"."""

    click_pos: int

    def __post_init__(self):
        if int(self.click_pos) < 1:
            raise ValueError(f"click position must be >= 1, got {self.click_pos}")
        object.__setattr__(self, "click_pos", int(self.click_pos))

    def clicked(self, k: int) -> bool:
        return self.click_pos <= k


@dataclass(frozen=True)
class AttractionVector:
    """Per-position attraction probabilities for one displayed list."""

    probs: np.ndarray

    def __post_init__(self):
        probs = _as_vector(self.probs, "probs")
        if probs.size and (np.min(probs) < 0.0 or np.max(probs) > 1.0):
            raise ValueError("attraction probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", probs)

    def __len__(self) -> int:
        return self.probs.size


def _topic_matrix(prefix) -> np.ndarray:
    """Stack a prefix of items (or raw topic vectors) into an (n, d) array."""
    if isinstance(prefix, np.ndarray):
        return np.atleast_2d(prefix.astype(np.float64, copy=False))
    rows = [it.topic_vec if isinstance(it, Item) else _as_vector(it, "topic vector") for it in prefix]
    if not rows:
        return np.zeros((0, 0))
    dims = {r.size for r in rows}
    if len(dims) != 1:
        raise ValueError(f"topic dimension mismatch within prefix: {sorted(dims)}")
    return np.vstack(rows)


def topic_coverage(prefix) -> np.ndarray:
    """Probability that the item set covers each topic: 1 - prod(1 - x) per topic.

    An empty prefix covers nothing.  Monotone nondecreasing under extension.
    """
    mat = _topic_matrix(prefix)
    if mat.shape[0] == 0:
        return np.zeros(mat.shape[1])
    return 1.0 - np.prod(1.0 - mat, axis=0)


def coverage_gain(item, prefix) -> np.ndarray:
    """Per-topic coverage increase from appending `item` to `prefix`.

    Computed as prod(1 - x_prefix) * x_item per topic, which equals the
    difference of coverages and keeps the cost at O(d) given the running
    complement product.
    """
    x = item.topic_vec if isinstance(item, Item) else _as_vector(item, "topic vector")
    mat = _topic_matrix(prefix)
    if mat.shape[0] and mat.shape[1] != x.size:
        raise ValueError(f"topic dimension mismatch: item has {x.size}, prefix has {mat.shape[1]}")
    if mat.shape[0] == 0:
        return x.copy()
    return np.prod(1.0 - mat, axis=0) * x


def gains_along_list(topic_rows: np.ndarray) -> np.ndarray:
    """Coverage gain of every position of a displayed list, row i given rows 0..i-1.

    `topic_rows` is the (K, d) matrix of topic vectors in display order.
    The complement product prod(1 - x) is carried along the list, so the
    whole list costs O(K d).
    """
    topic_rows = np.atleast_2d(np.ascontiguousarray(topic_rows, dtype=np.float64))
    if topic_rows.shape[0] == 0:
        return topic_rows.copy()
    return _kernels.list_gains(topic_rows)


def hybrid_attraction(omega, z, theta, beta) -> float:
    """Bilinear attraction score: relevance part z.beta plus novelty part omega.theta.

    No clamping here; range enforcement is the caller's concern.
    """
    omega = _as_vector(omega, "omega")
    z = _as_vector(z, "z")
    theta = _as_vector(theta, "theta")
    beta = _as_vector(beta, "beta")
    if omega.size != theta.size:
        raise ValueError(f"coverage dimensions disagree: {omega.size} vs {theta.size}")
    if z.size != beta.size:
        raise ValueError(f"relevance dimensions disagree: {z.size} vs {beta.size}")
    return float(z @ beta + omega @ theta)


def expected_list_reward(alpha) -> float:
    """Probability of at least one click on the list: 1 - prod(1 - alpha_i).

    Permutation invariant and nondecreasing in every entry.
    """
    probs = alpha.probs if isinstance(alpha, AttractionVector) else _as_vector(alpha, "alpha")
    if probs.size and (np.min(probs) < 0.0 or np.max(probs) > 1.0):
        raise ValueError("attraction probabilities must lie in [0, 1]")
    return float(1.0 - np.prod(1.0 - probs))


def realized_reward(feedback: ClickFeedback, k: int) -> int:
    """1 if the user clicked anywhere in the K displayed items, else 0."""
    if not 1 <= feedback.click_pos <= k + 1:
        raise ValueError(f"click position {feedback.click_pos} out of range for K={k}")
    return 1 if feedback.click_pos <= k else 0
