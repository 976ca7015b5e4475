"""Dynamic time warping, DTW barycenter averaging and DTW k-means."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .exceptions import EmptyInput, TooFewWindows
from .signals import standardize_array


@dataclass(frozen=True)
class DtwResult:
    cost: float
    path: list  # [(i, j), ...] from (0, 0) to (n-1, m-1)


@numba.njit(cache=True)
def _accumulate(a, b, band):
    n, m = a.size, b.size
    inf = np.inf
    D = np.full((n, m), inf)
    width = max(band, abs(n - m)) if band >= 0 else max(n, m)
    for i in range(n):
        lo = max(0, i - width)
        hi = min(m, i + width + 1)
        for j in range(lo, hi):
            c = abs(a[i] - b[j])
            if i == 0 and j == 0:
                D[i, j] = c
                continue
            best = inf
            if i > 0 and j > 0:
                best = D[i - 1, j - 1]
            if j > 0 and D[i, j - 1] < best:
                best = D[i, j - 1]
            if i > 0 and D[i - 1, j] < best:
                best = D[i - 1, j]
            D[i, j] = c + best
    return D


@numba.njit(cache=True)
def _cost_only(a, b, band):
    n, m = a.size, b.size
    inf = np.inf
    width = max(band, abs(n - m)) if band >= 0 else max(n, m)
    prev = np.full(m, inf)
    cur = np.full(m, inf)
    for i in range(n):
        lo = max(0, i - width)
        hi = min(m, i + width + 1)
        for j in range(m):
            cur[j] = inf
        for j in range(lo, hi):
            c = abs(a[i] - b[j])
            if i == 0 and j == 0:
                cur[j] = c
                continue
            best = inf
            if i > 0 and j > 0:
                best = prev[j - 1]
            if j > 0 and cur[j - 1] < best:
                best = cur[j - 1]
            if i > 0 and prev[j] < best:
                best = prev[j]
            cur[j] = c + best
        prev, cur = cur, prev
    return prev[m - 1]


@numba.njit(cache=True)
def _backtrack(D):
    n, m = D.shape
    i, j = n - 1, m - 1
    out = np.empty((n + m - 1, 2), dtype=np.int64)
    k = 0
    out[k, 0] = i
    out[k, 1] = j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = D[i - 1, j - 1]
            left = D[i, j - 1]
            up = D[i - 1, j]
            # ties: diagonal, then (0, 1) step, then (1, 0) step
            if diag <= left and diag <= up:
                i -= 1
                j -= 1
            elif left <= up:
                j -= 1
            else:
                i -= 1
        k += 1
        out[k, 0] = i
        out[k, 1] = j
    return out[: k + 1][::-1]


def _as_seq(x) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyInput("DTW needs non-empty sequences")
    return x


def dtw_distance(a, b, band: int | None = None) -> DtwResult:
    """Optimal alignment under absolute local cost and steps (1,0), (0,1), (1,1).

    ``band`` optionally restricts the alignment to ``|i - j| <= band``
    (widened to the length difference so a path always exists).
    """
    a, b = _as_seq(a), _as_seq(b)
    D = _accumulate(a, b, -1 if band is None else int(band))
    path = [(int(i), int(j)) for i, j in _backtrack(D)]
    return DtwResult(float(D[-1, -1]), path)


def dtw_cost(a, b, band: int | None = None) -> float:
    """Same cost as :func:`dtw_distance` without storing the path."""
    return float(_cost_only(_as_seq(a), _as_seq(b), -1 if band is None else int(band)))


def dba_barycenter(members: Sequence, init, iterations: int = 10, band: int | None = None,
                   tol: float = 1e-9) -> np.ndarray:
    """DTW barycenter averaging.

    Every member is aligned to the current center; each center sample becomes
    the mean of the member samples aligned to it.
    """
    if len(members) == 0:
        raise EmptyInput("no members")
    center = _as_seq(init).copy()
    members = [_as_seq(m) for m in members]
    for _ in range(iterations):
        sums = np.zeros_like(center)
        counts = np.zeros_like(center)
        for m in members:
            D = _accumulate(center, m, -1 if band is None else int(band))
            path = _backtrack(D)
            np.add.at(sums, path[:, 0], m[path[:, 1]])
            np.add.at(counts, path[:, 0], 1.0)
        new = sums / counts
        change = float(np.max(np.abs(new - center)))
        center = new
        if change < tol:
            break
    return center


def znormalize(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return standardize_array(x, float(x.mean()), float(x.std()))


@dataclass
class Clustering:
    k: int
    centers: list
    labels: np.ndarray
    inertia: float
    inertia_history: list = field(default_factory=list)
    n_iter: int = 0

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)

    def to_dict(self) -> dict:
        return {"k": self.k, "inertia": self.inertia, "labels": [int(v) for v in self.labels],
                "centers": [list(map(float, c)) for c in self.centers]}

    def save(self, path, provenance=None) -> None:
        payload = self.to_dict()
        if provenance:
            payload["provenance"] = dict(provenance)
        Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def _distances(windows, centers, band):
    b = -1 if band is None else int(band)
    out = np.empty((len(windows), len(centers)))
    # fixed loop order keeps results bit-stable
    for i, w in enumerate(windows):
        for c, center in enumerate(centers):
            out[i, c] = _cost_only(w, center, b)
    return out


def _kmeanspp(windows, k, rng, band):
    n = len(windows)
    chosen = [int(rng.integers(n))]
    closest = _distances(windows, [windows[chosen[0]]], band)[:, 0]
    while len(chosen) < k:
        weights = closest**2
        weights[chosen] = 0.0
        total = weights.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=weights / total))
        else:
            rest = [i for i in range(n) if i not in chosen]
            nxt = int(rest[int(rng.integers(len(rest)))])
        chosen.append(nxt)
        closest = np.minimum(closest, _distances(windows, [windows[nxt]], band)[:, 0])
    return [windows[i].copy() for i in chosen]


def _kmeans_once(windows, k, rng, max_iters, dba_iters, band):
    centers = _kmeanspp(windows, k, rng, band)
    dist = _distances(windows, centers, band)
    labels = np.argmin(dist, axis=1)
    inertia = float(dist[np.arange(len(windows)), labels].sum())
    history = [inertia]
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        # recenter; a DBA update is kept only when it lowers the cluster cost
        for c in range(k):
            idx = np.flatnonzero(labels == c)
            if idx.size == 0:
                continue
            members = [windows[i] for i in idx]
            old_cost = float(dist[idx, c].sum())
            cand = dba_barycenter(members, centers[c], dba_iters, band)
            cand_cost = float(_distances(members, [cand], band)[:, 0].sum())
            if cand_cost < old_cost:
                centers[c] = cand
        dist = _distances(windows, centers, band)
        new_labels = np.argmin(dist, axis=1)
        inertia = float(dist[np.arange(len(windows)), new_labels].sum())
        history.append(inertia)
        stable = np.array_equal(new_labels, labels)
        labels = new_labels
        if stable:
            break
    return Clustering(k, centers, labels, inertia, history, n_iter)


def dtw_kmeans(windows: Sequence, k: int, seed: int = 0, max_iters: int = 30, *, n_init: int = 1,
               dba_iters: int = 5, band: int | None = None) -> Clustering:
    """k-means under DTW with k-means++ seeding and DBA recentering.

    Windows are expected to be z-normalized by the caller. With ``n_init > 1``
    the lowest-inertia run is returned (earliest on ties).
    """
    windows = [_as_seq(w) for w in windows]
    if k < 1 or len(windows) < k:
        raise TooFewWindows(f"need at least k={k} windows, got {len(windows)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    best = None
    for _ in range(max(1, n_init)):
        run = _kmeans_once(windows, k, rng, max_iters, dba_iters, band)
        if best is None or run.inertia < best.inertia:
            best = run
    return best


def dtw_ball_filter(windows: Sequence, center, radius: float, band: int | None = None) -> list[int]:
    """Indices of windows within DTW cost ``radius`` of ``center``."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    center = _as_seq(center)
    return [i for i, w in enumerate(windows) if dtw_cost(w, center, band) <= radius]
