"""Dataset and feature pipeline.

Turns a ratings file plus a topic-assignment file into an experiment
instance: binarize ratings, keep the most active users and items, split
users into a feature-estimation half and a simulator half, extract low-rank
relevance features by truncated SVD, and compute per-item topic coverage
and per-user topic preferences from co-occurrence counts.  A synthetic
generator plants a ground-truth model, samples a ratings matrix from it and
pushes it through the same feature code path.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Catalog
from .environment import UserModel

logger = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """Raised when a pipeline stage cannot produce a valid result."""


class UserExcludedError(ValueError):
    """Raised for a user whose preferences are undefined (no attractive items)."""


def _matrix_of(data) -> np.ndarray:
    if isinstance(data, RatingsMatrix):
        return data.matrix
    return np.asarray(data, dtype=np.float64)


@dataclass
class RatingsMatrix:
    """Binary user-by-item feedback with the original id maps."""

    matrix: np.ndarray
    user_ids: np.ndarray
    item_ids: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.user_ids = np.asarray(self.user_ids)
        self.item_ids = np.asarray(self.item_ids)
        if self.matrix.ndim != 2:
            raise ValueError("ratings matrix must be two-dimensional")
        if not np.isin(self.matrix, (0.0, 1.0)).all():
            raise ValueError("ratings matrix entries must be 0 or 1")
        if self.user_ids.size != self.matrix.shape[0] or self.item_ids.size != self.matrix.shape[1]:
            raise ValueError("id maps must match matrix dimensions")
        if np.unique(self.user_ids).size != self.user_ids.size:
            raise ValueError("duplicate user ids")
        if np.unique(self.item_ids).size != self.item_ids.size:
            raise ValueError("duplicate item ids")

    @property
    def positive_rate(self) -> float:
        return float(self.matrix.mean()) if self.matrix.size else 0.0


@dataclass
class TopicAssignment:
    """Binary item-by-topic membership aligned to a ratings matrix."""

    matrix: np.ndarray
    item_ids: np.ndarray
    topic_labels: tuple

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if not np.isin(self.matrix, (0.0, 1.0)).all():
            raise ValueError("topic assignment entries must be 0 or 1")
        if (self.matrix.sum(axis=1) == 0).any():
            raise ValueError("every item must belong to at least one topic")


def _split_line(line: str, delim: str | None):
    if delim is None:
        return line.split()
    return [part.strip() for part in line.split(delim)]


def _detect_delim(line: str) -> str | None:
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    return None  # whitespace


def load_and_binarize(path, threshold: float = 5.0) -> RatingsMatrix:
    """Read (user, item, rating) records and keep ratings >= threshold as 1.

    Tab-, comma- or whitespace-separated, auto-detected from the first data
    line.  Ratings are on a 5-point scale; the default keeps only the top
    grade.
    """
    path = Path(path)
    triples = []
    delim = None
    with path.open("r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if delim is None:
                delim = _detect_delim(line)
            parts = _split_line(line, delim)
            if len(parts) < 3:
                raise ValueError(f"{path.name}:{lineno}: expected (user, item, rating), got {line!r}")
            try:
                user, item, rating = parts[0], parts[1], float(parts[2])
            except ValueError as exc:
                raise ValueError(f"{path.name}:{lineno}: unparsable rating in {line!r}") from exc
            triples.append((user, item, rating))
    if not triples:
        raise ValueError(f"{path.name}: no rating records found")

    users = sorted({t[0] for t in triples}, key=_label_key)
    items = sorted({t[1] for t in triples}, key=_label_key)
    user_index = {u: i for i, u in enumerate(users)}
    item_index = {it: i for i, it in enumerate(items)}
    matrix = np.zeros((len(users), len(items)))
    for user, item, rating in triples:
        if rating >= threshold:
            matrix[user_index[user], item_index[item]] = 1.0
    ratings = RatingsMatrix(matrix, np.array(users, dtype=object), np.array(items, dtype=object))
    if ratings.positive_rate == 0.0:
        logger.warning("%s: no rating reached the threshold %s, matrix is all-zero", path.name, threshold)
    logger.info("%s: %d users x %d items, positive rate %.4f", path.name, len(users), len(items), ratings.positive_rate)
    return ratings


def _label_key(label):
    """Sort numeric-looking labels numerically, everything else lexically."""
    text = str(label)
    try:
        return (0, float(text), text)
    except ValueError:
        return (1, 0.0, text)


def load_topic_assignment(path, item_ids) -> TopicAssignment:
    """Read (item, topic) pairs and align the membership matrix to `item_ids`."""
    path = Path(path)
    pairs = []
    delim = None
    with path.open("r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if delim is None:
                delim = _detect_delim(line)
            parts = _split_line(line, delim)
            if len(parts) < 2:
                raise ValueError(f"{path.name}:{lineno}: expected (item, topic), got {line!r}")
            pairs.append((parts[0], parts[1]))
    if not pairs:
        raise ValueError(f"{path.name}: no topic records found")

    wanted = {str(i): row for row, i in enumerate(item_ids)}
    labels = sorted({topic for item, topic in pairs if str(item) in wanted}, key=_label_key)
    label_index = {t: j for j, t in enumerate(labels)}
    matrix = np.zeros((len(item_ids), len(labels)))
    for item, topic in pairs:
        row = wanted.get(str(item))
        if row is not None:
            matrix[row, label_index[topic]] = 1.0
    missing = int((matrix.sum(axis=1) == 0).sum())
    if missing:
        raise PipelineError(f"{path.name}: {missing} items have no topic assignment")
    return TopicAssignment(matrix, np.asarray(item_ids), tuple(labels))


def select_active(ratings: RatingsMatrix, n_users: int, n_items: int) -> RatingsMatrix:
    """Keep the most active users and the most rated items; ties by original id."""
    n_u, n_i = ratings.matrix.shape
    if not 1 <= n_users <= n_u or not 1 <= n_items <= n_i:
        raise ValueError(f"cannot select {n_users}/{n_items} from a {n_u}x{n_i} matrix")
    user_counts = ratings.matrix.sum(axis=1)
    item_counts = ratings.matrix.sum(axis=0)
    user_order = np.lexsort((np.arange(n_u), -user_counts))[:n_users]
    item_order = np.lexsort((np.arange(n_i), -item_counts))[:n_items]
    return RatingsMatrix(
        ratings.matrix[np.ix_(user_order, item_order)],
        ratings.user_ids[user_order],
        ratings.item_ids[item_order],
    )


def split_users(ratings: RatingsMatrix, fraction: float = 0.5, seed: int = 0):
    """Disjoint, exhaustive random row split; deterministic per seed."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"split fraction must lie in (0, 1), got {fraction}")
    n_u = ratings.matrix.shape[0]
    n_train = int(round(fraction * n_u))
    if n_train < 1 or n_train >= n_u:
        raise ValueError(f"split leaves an empty side ({n_train}/{n_u - n_train})")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x517]))
    perm = rng.permutation(n_u)
    train_rows = np.sort(perm[:n_train])
    test_rows = np.sort(perm[n_train:])
    take = lambda rows: RatingsMatrix(ratings.matrix[rows], ratings.user_ids[rows], ratings.item_ids)
    return take(train_rows), take(test_rows)


def truncated_svd(matrix, rank: int, seed: int = 0, tol: float = 1e-6, max_iter: int = 200, oversample: int = 8):
    """Rank-`rank` SVD by seeded randomized subspace iteration.

    Iterates until the top singular values move by no more than `tol`
    (relative) between sweeps; failure to converge is an error.  Singular
    vectors are sign-fixed so the largest-magnitude entry of each right
    vector is positive.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("need a two-dimensional matrix")
    if not 1 <= rank <= min(a.shape):
        raise ValueError(f"rank {rank} out of range for shape {a.shape}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5FD]))
    n_probe = min(rank + oversample, *a.shape)
    basis, _ = np.linalg.qr(a @ rng.standard_normal((a.shape[1], n_probe)))
    prev = None
    for _ in range(max_iter):
        basis, _ = np.linalg.qr(a @ (a.T @ basis))
        small = basis.T @ a
        vals = np.linalg.svd(small, compute_uv=False)[:rank]
        if prev is not None and np.max(np.abs(vals - prev)) <= tol * max(float(vals[0]), 1e-300):
            u_small, s, vt = np.linalg.svd(small, full_matrices=False)
            left = basis @ u_small
            return _fix_signs(left[:, :rank], s[:rank].copy(), vt[:rank])
        prev = vals
    raise PipelineError(f"SVD subspace iteration did not converge in {max_iter} sweeps")


def _fix_signs(left, vals, right_t):
    for k in range(right_t.shape[0]):
        pivot = int(np.argmax(np.abs(right_t[k])))
        if right_t[k, pivot] < 0:
            right_t[k] = -right_t[k]
            left[:, k] = -left[:, k]
    return left, vals, right_t


@dataclass
class RelevanceFeatures:
    """SVD item features and per-user least-squares preferences, all unit norm."""

    item_features: np.ndarray   # kept items x rank
    user_prefs: np.ndarray      # kept users x rank
    kept_items: np.ndarray      # indices into the input item axis
    kept_users: np.ndarray      # indices into the test-user axis
    range_violations: int       # predictions outside [0, 1] across kept pairs


def relevance_features(train, test, rank: int = 10, seed: int = 0) -> RelevanceFeatures:
    """Item features from SVD of the training half, user preferences by ridge
    least squares on the test half, both normalized to unit length."""
    f_train = _matrix_of(train)
    f_test = _matrix_of(test)
    if f_train.shape[1] != f_test.shape[1]:
        raise ValueError("train and test matrices must share the item axis")
    if not f_train.any():
        raise PipelineError("training matrix has no positive entries")
    if not 1 <= rank <= min(f_train.shape):
        raise ValueError(f"rank {rank} out of range for training shape {f_train.shape}")

    _, vals, right_t = truncated_svd(f_train, rank, seed=seed)
    raw = right_t.T * vals        # row a: coordinates of item a in the top factors
    norms = np.linalg.norm(raw, axis=1)
    kept_items = np.flatnonzero(norms > 1e-12)
    if kept_items.size < raw.shape[0]:
        logger.warning("dropping %d items with degenerate relevance features", raw.shape[0] - kept_items.size)
    feats = raw[kept_items] / norms[kept_items, None]

    gram = feats.T @ feats + 1e-9 * np.eye(rank)
    targets = f_test[:, kept_items]
    coefs = np.linalg.solve(gram, feats.T @ targets.T).T
    unorms = np.linalg.norm(coefs, axis=1)
    kept_users = np.flatnonzero(unorms > 1e-12)
    dropped = coefs.shape[0] - kept_users.size
    if dropped:
        logger.warning("dropping %d test users with no attractive items", dropped)
    prefs = coefs[kept_users] / unorms[kept_users, None]

    preds = feats @ prefs.T
    violations = int(np.sum((preds < -1e-12) | (preds > 1.0 + 1e-12)))
    if violations:
        logger.warning("%d relevance predictions fall outside [0, 1]", violations)
    return RelevanceFeatures(feats, prefs, kept_items, kept_users, violations)


def topic_features(ratings, assignment) -> tuple[np.ndarray, np.ndarray]:
    """Per-item topic coverage: users liking the item over users active in the topic.

    Topics nobody is active in are dropped with a warning; the retained
    column indices are returned alongside the features.
    """
    f = _matrix_of(ratings)
    g = _matrix_of(assignment)
    if f.shape[1] != g.shape[0]:
        raise ValueError("ratings item axis and assignment item axis disagree")
    if not f.any():
        raise PipelineError("ratings matrix has no positive entries")
    item_pops = f.sum(axis=0)
    active = (f @ g) > 0          # user u active in topic j
    denom = active.sum(axis=0).astype(np.float64)
    kept = np.flatnonzero(denom > 0)
    if kept.size < g.shape[1]:
        logger.warning("dropping %d topics with no active users", g.shape[1] - kept.size)
    if kept.size == 0:
        raise PipelineError("no topic has any active user")
    feats = (item_pops[:, None] * g[:, kept]) / denom[kept]
    lonely = int((g[:, kept].sum(axis=1) == 0).sum())
    if lonely:
        logger.info("%d items fall in no retained topic (zero coverage rows)", lonely)
    return feats, kept


def topic_preferences(user_row, assignment) -> np.ndarray:
    """Per-topic preference of one user: share of attractive items per topic.

    Multi-topic items count once per topic; the shared denominator makes the
    result sum to one.
    """
    row = np.asarray(user_row, dtype=np.float64)
    g = _matrix_of(assignment)
    if row.size != g.shape[0]:
        raise ValueError("user row length and assignment item axis disagree")
    counts = g.T @ row
    total = counts.sum()
    if total <= 0:
        raise UserExcludedError("user has no attractive item in any topic")
    return counts / total


def select_topics(assignment, n_topics: int) -> np.ndarray:
    """Indices of the `n_topics` topics with the most items; ties by column index."""
    g = _matrix_of(assignment)
    if not 1 <= n_topics <= g.shape[1]:
        raise ValueError(f"cannot select {n_topics} of {g.shape[1]} topics")
    counts = g.sum(axis=0)
    order = np.lexsort((np.arange(g.shape[1]), -counts))
    return np.sort(order[:n_topics])


@dataclass
class InstanceBundle:
    """Everything one experiment needs: the catalog plus per-user ground truth.

    Stored users have no relevance/diversity mix; the experiment chooses it
    per run.
    """

    catalog: Catalog
    users: list
    provenance: dict = field(default_factory=dict)

    def user(self, index: int, relevance_mix: float) -> UserModel:
        return self.users[index].with_mix(relevance_mix)

    @property
    def n_users(self) -> int:
        return len(self.users)


def _config_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def build_instance(
    ratings_path,
    topics_path,
    *,
    n_users: int,
    n_items: int,
    n_topics: int,
    rel_dim: int = 10,
    split_fraction: float = 0.5,
    seed: int = 0,
    drop_topics: tuple = (),
) -> InstanceBundle:
    """Run the full file-to-instance pipeline."""
    ratings = load_and_binarize(ratings_path)
    ratings = select_active(ratings, n_users, n_items)
    assignment = load_topic_assignment(topics_path, ratings.item_ids)
    g = assignment.matrix
    labels = list(assignment.topic_labels)
    if drop_topics:
        keep = [j for j, lab in enumerate(labels) if str(lab) not in {str(t) for t in drop_topics}]
        if not keep:
            raise ValueError("drop_topics removed every topic")
        g = g[:, keep]
        labels = [labels[j] for j in keep]

    train, test = split_users(ratings, split_fraction, seed)
    rel = relevance_features(train, test, rank=rel_dim, seed=seed)

    # align the item axis everywhere with the items kept by the SVD stage
    g = g[rel.kept_items]
    f_train = train.matrix[:, rel.kept_items]
    f_test = test.matrix[np.ix_(rel.kept_users, rel.kept_items)]

    top = select_topics(g, min(n_topics, g.shape[1]))
    g_top = g[:, top]
    labels = [labels[j] for j in top]
    feats, kept_cols = topic_features(f_train, g_top)
    labels = [labels[j] for j in kept_cols]
    g_final = g_top[:, kept_cols]

    users = []
    kept_user_rows = []
    for row_idx in range(f_test.shape[0]):
        try:
            theta = topic_preferences(f_test[row_idx], g_final)
        except UserExcludedError:
            continue
        users.append(UserModel(theta, rel.user_prefs[row_idx]))
        kept_user_rows.append(row_idx)
    if not users:
        raise PipelineError("no test user has attractive items in the retained topics")
    dropped = f_test.shape[0] - len(users)
    if dropped:
        logger.warning("dropping %d test users with no preference mass in retained topics", dropped)

    catalog = Catalog.from_arrays(feats, rel.item_features)
    config = {
        "source": "files",
        "ratings": _file_digest(ratings_path),
        "topics": _file_digest(topics_path),
        "n_users": n_users,
        "n_items": n_items,
        "n_topics": n_topics,
        "rel_dim": rel_dim,
        "split_fraction": split_fraction,
        "seed": seed,
        "drop_topics": sorted(str(t) for t in drop_topics),
    }
    provenance = {
        "config": config,
        "config_hash": _config_hash(config),
        "seed": seed,
        "topic_labels": [str(lab) for lab in labels],
        "topic_item_counts": g_final.sum(axis=0).astype(int).tolist(),
        "item_ids": [str(i) for i in ratings.item_ids[rel.kept_items]],
        "user_ids": [str(test.user_ids[rel.kept_users[r]]) for r in kept_user_rows],
        "range_violations": rel.range_violations,
        "positive_rate": ratings.positive_rate,
    }
    return InstanceBundle(catalog, users, provenance)


def _nonneg_repair(feats: np.ndarray, prefs: np.ndarray) -> tuple[np.ndarray, float]:
    """Mix user preferences toward the leading factor until no item scores negative.

    The leading right-singular direction of a connected nonnegative matrix
    has strictly positive item scores, so a convex mix with it can always
    lift the minimum score to zero while unit norms keep the maximum at one.
    """
    anchor_scores = feats[:, 0]
    if np.min(anchor_scores) <= 0:
        raise PipelineError("leading factor is not strictly positive; matrix may be disconnected")
    fixed = prefs.copy()
    worst = 0.0
    for i in range(prefs.shape[0]):
        scores = feats @ prefs[i]
        bad = scores < 0
        if not bad.any():
            continue
        need = np.max(-scores[bad] / (anchor_scores[bad] - scores[bad]))
        mix = min(1.0, float(need) * (1.0 + 1e-9) + 1e-15)
        worst = max(worst, mix)
        blended = (1.0 - mix) * prefs[i]
        blended[0] += mix
        fixed[i] = blended / np.linalg.norm(blended)
    return fixed, worst


def synthesize_instance(
    seed: int,
    n_items: int,
    n_topics: int,
    rel_dim: int,
    sparsity: float,
    n_users: int = 100,
) -> InstanceBundle:
    """Generate a planted-model instance and push it through the real pipeline.

    A community-structured ratings matrix is sampled from planted topic and
    relevance preferences, then features and simulator preferences are
    re-derived exactly as for file-based data.  User relevance preferences
    are post-fixed so every attraction probability stays inside [0, 1] for
    any relevance/diversity mix.
    """
    if n_items < 1 or n_topics < 1 or rel_dim < 1:
        raise ValueError("need at least one item, topic and relevance dimension")
    if not 0.0 < sparsity < 0.5:
        raise ValueError(f"target positive rate must lie in (0, 0.5), got {sparsity}")
    if n_users < 4:
        raise ValueError("need at least four users to split")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xCA5]))

    # topic memberships: one to three topics per item, no empty topics
    g = np.zeros((n_items, n_topics))
    for a in range(n_items):
        k = int(rng.integers(1, 4))
        g[a, rng.choice(n_topics, size=min(k, n_topics), replace=False)] = 1.0
    for j in range(n_topics):
        if g[:, j].sum() == 0:
            g[j % n_items, j] = 1.0

    # planted communities drive both relevance blocks and topic tastes
    n_groups = max(2, min(rel_dim, 8))
    item_group = rng.integers(0, n_groups, size=n_items)
    user_group = rng.integers(0, n_groups, size=n_users)
    topic_taste = rng.dirichlet(np.full(n_topics, 0.3), size=n_groups)
    g_share = g / g.sum(axis=1, keepdims=True)
    affinity = topic_taste[user_group] @ g_share.T             # users x items
    same_group = (user_group[:, None] == item_group[None, :]).astype(float)
    probs = 1.0 * same_group + 3.0 * affinity + 0.15
    probs *= sparsity / probs.mean()
    probs = np.clip(probs, 0.0, 0.95)
    if abs(probs.mean() - sparsity) > 0.35 * sparsity:
        raise ValueError(f"target positive rate {sparsity} infeasible for this configuration")
    matrix = (rng.random((n_users, n_items)) < probs).astype(np.float64)

    ratings = RatingsMatrix(matrix, np.arange(n_users), np.arange(n_items))
    train, test = split_users(ratings, 0.5, seed)
    # a curator row that likes everything keeps the training matrix connected,
    # which the nonnegativity repair below relies on
    train = RatingsMatrix(
        np.vstack([train.matrix, np.ones(n_items)]),
        np.concatenate([train.user_ids, [-1]]),
        train.item_ids,
    )

    rel = relevance_features(train, test, rank=rel_dim, seed=seed)
    if rel.kept_items.size != n_items:
        raise PipelineError("synthetic instance dropped items; raise the target positive rate")
    prefs, worst_mix = _nonneg_repair(rel.item_features, rel.user_prefs)

    feats, kept_cols = topic_features(train.matrix, g)
    g_final = g[:, kept_cols]
    users = []
    f_test = test.matrix[rel.kept_users]
    for row_idx in range(f_test.shape[0]):
        try:
            theta = topic_preferences(f_test[row_idx], g_final)
        except UserExcludedError:
            continue
        users.append(UserModel(theta, prefs[row_idx]))
    if not users:
        raise PipelineError("synthetic instance produced no usable test users")

    catalog = Catalog.from_arrays(feats, rel.item_features)
    config = {
        "source": "synthetic",
        "seed": seed,
        "n_items": n_items,
        "n_topics": n_topics,
        "rel_dim": rel_dim,
        "sparsity": sparsity,
        "n_users": n_users,
    }
    provenance = {
        "config": config,
        "config_hash": _config_hash(config),
        "seed": seed,
        "topic_labels": [str(j) for j in kept_cols],
        "topic_item_counts": g_final.sum(axis=0).astype(int).tolist(),
        "positive_rate": ratings.positive_rate,
        "repair_mix_max": worst_mix,
        "pre_repair_violations": rel.range_violations,
    }
    return InstanceBundle(catalog, users, provenance)


def restrict_topics(bundle: InstanceBundle, n_topics: int) -> InstanceBundle:
    """Runtime view of a bundle with only the `n_topics` most populated topics.

    Topic preferences are renormalized over the kept columns, matching what
    the pipeline would produce for the smaller topic set; users with no
    remaining preference mass are dropped.
    """
    d = bundle.catalog.d
    if n_topics == d:
        return bundle
    if not 1 <= n_topics < d:
        raise ValueError(f"cannot restrict to {n_topics} of {d} topics")
    counts = np.asarray(
        bundle.provenance.get("topic_item_counts", (bundle.catalog.topics > 0).sum(axis=0)),
        dtype=np.float64,
    )
    order = np.lexsort((np.arange(d), -counts))
    keep = np.sort(order[:n_topics])
    topics = bundle.catalog.topics[:, keep]
    users = []
    for user in bundle.users:
        theta = user.topic_prefs[keep]
        mass = theta.sum()
        if mass <= 0:
            continue
        users.append(UserModel(theta / mass, user.rel_prefs))
    if not users:
        raise PipelineError("topic restriction left no usable users")
    if len(users) < len(bundle.users):
        logger.warning("topic restriction dropped %d users", len(bundle.users) - len(users))
    provenance = dict(bundle.provenance)
    provenance["restricted_topics"] = [int(j) for j in keep]
    provenance["topic_item_counts"] = counts[keep].astype(int).tolist()
    return InstanceBundle(Catalog.from_arrays(topics, bundle.catalog.relevance), users, provenance)


_BUNDLE_VERSION = 1


def save_bundle(bundle: InstanceBundle, out_dir) -> Path:
    """Write a bundle as a directory of .npy matrices plus a json header."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "item_topics.npy", bundle.catalog.topics)
    np.save(out / "item_relevance.npy", bundle.catalog.relevance)
    np.save(out / "user_topic_prefs.npy", np.array([u.topic_prefs for u in bundle.users]))
    np.save(out / "user_rel_prefs.npy", np.array([u.rel_prefs for u in bundle.users]))
    meta = {
        "format_version": _BUNDLE_VERSION,
        "n_items": len(bundle.catalog),
        "n_topics": bundle.catalog.d,
        "rel_dim": bundle.catalog.m,
        "n_users": bundle.n_users,
        "provenance": bundle.provenance,
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return out


def load_bundle(bundle_dir) -> InstanceBundle:
    src = Path(bundle_dir)
    meta = json.loads((src / "meta.json").read_text(encoding="utf-8"))
    if meta.get("format_version") != _BUNDLE_VERSION:
        raise ValueError(f"unsupported bundle version {meta.get('format_version')}")
    topics = np.load(src / "item_topics.npy")
    relevance = np.load(src / "item_relevance.npy")
    theta = np.load(src / "user_topic_prefs.npy")
    beta = np.load(src / "user_rel_prefs.npy")
    if topics.shape != (meta["n_items"], meta["n_topics"]) or relevance.shape != (meta["n_items"], meta["rel_dim"]):
        raise ValueError("bundle matrices do not match the header dimensions")
    users = [UserModel(theta[i], beta[i]) for i in range(theta.shape[0])]
    return InstanceBundle(Catalog.from_arrays(topics, relevance), users, meta.get("provenance", {}))
