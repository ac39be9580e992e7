"""Hot-loop kernels with optional numba acceleration.

The greedy list construction re-scores every remaining item at every
position, which dominates simulation time.  When numba is importable the
loops below are jit-compiled (and cached on disk); otherwise vectorized
numpy fallbacks with identical semantics are used.  Set
CASCADERANK_DISABLE_NUMBA=1 to force the fallbacks.
"""

from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - exercised implicitly by which path runs
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("CASCADERANK_DISABLE_NUMBA", "") != "1"


def _greedy_select_numpy(x_mat, schur_inv, cross_rows, cov_weights, base, static_width, gamma, k):
    """Greedy optimistic selection; ties go to the first (lowest-id) maximizer."""
    n_items, dim = x_mat.shape
    ids = np.empty(k, dtype=np.int64)
    chosen = []
    ncov = np.ones(dim)
    om = np.empty_like(x_mat)
    diff = np.empty_like(x_mat)
    folded = np.empty_like(x_mat)
    width = np.empty(n_items)
    gain_mean = np.empty(n_items)
    scores = np.empty(n_items)
    for pos in range(k):
        np.multiply(x_mat, ncov, out=om)
        np.subtract(om, cross_rows, out=diff)
        np.dot(diff, schur_inv, out=folded)
        np.einsum("ij,ij->i", folded, diff, out=width)
        np.add(width, static_width, out=width)
        np.maximum(width, 0.0, out=width)
        np.sqrt(width, out=width)
        np.dot(om, cov_weights, out=gain_mean)
        np.multiply(width, gamma, out=width)
        np.add(width, base, out=scores)
        np.add(scores, gain_mean, out=scores)
        scores[chosen] = -np.inf
        best = int(np.argmax(scores))
        ids[pos] = best
        chosen.append(best)
        ncov *= 1.0 - x_mat[best]
    return ids


def _fold_observations_numpy(
    rel_gram, rel_gram_inv, cross_gram, cov_gram, rel_clicks, cov_clicks, gains, rel_rows, clicked_row
):
    """Fold observed (gain, relevance) feature pairs into the running sums.

    The relevance Gram inverse is kept current by one rank-one correction
    per observed item.
    """
    n_obs, dim_cov = gains.shape
    dim_rel = rel_rows.shape[1]
    for i in range(n_obs):
        w = gains[i]
        z = rel_rows[i]
        if dim_rel:
            mz = rel_gram_inv @ z
            rel_gram_inv -= np.outer(mz, mz) / (1.0 + z @ mz)
            rel_gram += np.outer(z, z)
            if dim_cov:
                cross_gram += np.outer(w, z)
        if dim_cov:
            cov_gram += np.outer(w, w)
        if i == clicked_row:
            rel_clicks += z
            cov_clicks += w


def _list_gains_numpy(topic_rows):
    out = np.empty_like(topic_rows)
    ncov = np.ones(topic_rows.shape[1])
    for i in range(topic_rows.shape[0]):
        np.multiply(ncov, topic_rows[i], out=out[i])
        ncov *= 1.0 - topic_rows[i]
    return out


def _mixed_attraction_numpy(topics, relevance, ids, topic_prefs, rel_prefs, lam):
    """Raw (unclamped) attraction of each displayed position."""
    gains = _list_gains_numpy(topics[ids])
    return lam * (relevance[ids] @ rel_prefs) + (1.0 - lam) * (gains @ topic_prefs)


if USE_NUMBA:

    @numba.njit(cache=True)
    def _greedy_select_jit(x_mat, schur_inv, cross_rows, cov_weights, base, static_width, gamma, k):  # pragma: no cover - compiled
        n_items, dim = x_mat.shape
        ids = np.empty(k, dtype=np.int64)
        ncov = np.ones(dim)
        om = np.empty((n_items, dim))
        diff = np.empty((n_items, dim))
        taken = np.zeros(n_items, numba.boolean)
        for pos in range(k):
            for a in range(n_items):
                for j in range(dim):
                    e = x_mat[a, j] * ncov[j]
                    om[a, j] = e
                    diff[a, j] = e - cross_rows[a, j]
            folded = np.dot(diff, schur_inv)
            gain_mean = np.dot(om, cov_weights)
            best = -1
            best_score = -np.inf
            for a in range(n_items):
                if taken[a]:
                    continue
                s = static_width[a]
                for j in range(dim):
                    s += folded[a, j] * diff[a, j]
                if s < 0.0:
                    s = 0.0
                score = gain_mean[a] + base[a] + gamma * np.sqrt(s)
                if score > best_score:
                    best_score = score
                    best = a
            ids[pos] = best
            taken[best] = True
            for j in range(dim):
                ncov[j] *= 1.0 - x_mat[best, j]
        return ids

    @numba.njit(cache=True)
    def _fold_observations_jit(
        rel_gram, rel_gram_inv, cross_gram, cov_gram, rel_clicks, cov_clicks, gains, rel_rows, clicked_row
    ):  # pragma: no cover - compiled
        n_obs, dim_cov = gains.shape
        dim_rel = rel_rows.shape[1]
        mz = np.empty(dim_rel)
        for i in range(n_obs):
            if dim_rel:
                z = rel_rows[i]
                for r in range(dim_rel):
                    acc = 0.0
                    for c in range(dim_rel):
                        acc += rel_gram_inv[r, c] * z[c]
                    mz[r] = acc
                denom = 1.0
                for r in range(dim_rel):
                    denom += z[r] * mz[r]
                for r in range(dim_rel):
                    for c in range(dim_rel):
                        rel_gram_inv[r, c] -= mz[r] * mz[c] / denom
                        rel_gram[r, c] += z[r] * z[c]
                for r in range(dim_cov):
                    for c in range(dim_rel):
                        cross_gram[r, c] += gains[i, r] * z[c]
            for r in range(dim_cov):
                for c in range(dim_cov):
                    cov_gram[r, c] += gains[i, r] * gains[i, c]
            if i == clicked_row:
                for r in range(dim_rel):
                    rel_clicks[r] += rel_rows[i, r]
                for r in range(dim_cov):
                    cov_clicks[r] += gains[i, r]

    @numba.njit(cache=True)
    def _list_gains_jit(topic_rows):  # pragma: no cover - compiled
        n_rows, dim = topic_rows.shape
        out = np.empty((n_rows, dim))
        ncov = np.ones(dim)
        for i in range(n_rows):
            for j in range(dim):
                out[i, j] = ncov[j] * topic_rows[i, j]
                ncov[j] *= 1.0 - topic_rows[i, j]
        return out

    @numba.njit(cache=True)
    def _mixed_attraction_jit(topics, relevance, ids, topic_prefs, rel_prefs, lam):  # pragma: no cover - compiled
        k = ids.shape[0]
        dim_cov = topics.shape[1]
        dim_rel = relevance.shape[1]
        out = np.empty(k)
        ncov = np.ones(dim_cov)
        for i in range(k):
            a = ids[i]
            novelty = 0.0
            for j in range(dim_cov):
                novelty += ncov[j] * topics[a, j] * topic_prefs[j]
            rel = 0.0
            for j in range(dim_rel):
                rel += relevance[a, j] * rel_prefs[j]
            out[i] = lam * rel + (1.0 - lam) * novelty
            for j in range(dim_cov):
                ncov[j] *= 1.0 - topics[a, j]
        return out

    greedy_select = _greedy_select_jit
    fold_observations = _fold_observations_jit
    list_gains = _list_gains_jit
    mixed_attraction = _mixed_attraction_jit
else:
    greedy_select = _greedy_select_numpy
    fold_observations = _fold_observations_numpy
    list_gains = _list_gains_numpy
    mixed_attraction = _mixed_attraction_numpy
