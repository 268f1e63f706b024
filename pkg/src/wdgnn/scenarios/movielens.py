"""Movie recommendation on an item-similarity graph.

Each user is a graph signal over movies (rating, or 0 when unrated). The
model predicts the rating of one target movie, read at that movie's node,
from the user's other ratings.
"""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass
from os import PathLike
from pathlib import Path

import numpy as np

from ..architecture import WdGnnParams, wdgnn_forward
from ..graph import Gso, normalize_adjacency
from ..online import OnlineRecord, OnlineTrace, centralized_online_step
from ..training import Dataset, Regression

logger = logging.getLogger(__name__)

ENV_PATH = "WDGNN_MOVIELENS"
STAR_WARS, CONTACT, RETURN_OF_THE_JEDI = 50, 258, 181
N_MOVIES = 400
TOP_K = 10


class RatingsError(ValueError):
    pass


@dataclass(frozen=True)
class RatingsMatrix:
    """Users x movies ratings; ``mask`` marks observed entries.

    ``movie_ids`` are the original item ids of the columns.
    """

    values: np.ndarray
    mask: np.ndarray
    movie_ids: np.ndarray
    titles: tuple[str, ...] | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        m = np.asarray(self.mask, dtype=bool)
        if v.shape != m.shape or v.ndim != 2:
            raise RatingsError("values and mask must be matching 2-D arrays")
        if np.any((v[m] < 1) | (v[m] > 5)):
            raise RatingsError("observed ratings must lie in [1, 5]")
        if np.any(v[~m] != 0):
            raise RatingsError("unobserved entries must be zero")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "movie_ids", np.asarray(self.movie_ids, dtype=int))

    @property
    def n_users(self) -> int:
        return self.values.shape[0]

    @property
    def n_movies(self) -> int:
        return self.values.shape[1]

    def column(self, movie_id: int) -> int:
        hits = np.flatnonzero(self.movie_ids == movie_id)
        if len(hits) == 0:
            raise RatingsError(f"movie {movie_id} is not among the kept movies")
        return int(hits[0])

    def restrict(self, columns) -> "RatingsMatrix":
        columns = np.asarray(columns)
        titles = None if self.titles is None else tuple(self.titles[c] for c in columns)
        return RatingsMatrix(
            self.values[:, columns], self.mask[:, columns], self.movie_ids[columns], titles
        )


def default_path() -> Path | None:
    p = os.environ.get(ENV_PATH)
    return Path(p) if p else None


def _read_titles(item_path: Path) -> dict[int, str]:
    titles = {}
    with open(item_path, encoding="latin-1") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("|")
            if len(parts) >= 2 and parts[0].strip().isdigit():
                titles[int(parts[0])] = parts[1]
    return titles


def parse_movielens(path: str | PathLike, n_movies: int = N_MOVIES) -> RatingsMatrix:
    """Read tab-separated ``user item rating timestamp`` rows.

    Keeps all users and the ``n_movies`` items with the most ratings (ties
    broken by item id). Titles are read from a sibling ``u.item`` if present.
    """
    path = Path(path)
    rows = []
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise RatingsError(f"line {lineno}: expected 4 tab-separated fields")
            try:
                user, item, rating, _ = (int(p) for p in parts)
            except ValueError:
                raise RatingsError(f"line {lineno}: non-integer field") from None
            if not 1 <= rating <= 5:
                raise RatingsError(f"line {lineno}: rating {rating} outside 1-5")
            rows.append((user, item, rating))
    if not rows:
        raise RatingsError(f"{path} holds no ratings")
    data = np.array(rows)
    users = np.unique(data[:, 0])
    items, counts = np.unique(data[:, 1], return_counts=True)
    order = np.lexsort((items, -counts))
    kept = np.sort(items[order[:n_movies]])
    col = {m: j for j, m in enumerate(kept)}
    row = {u: i for i, u in enumerate(users)}
    values = np.zeros((len(users), len(kept)))
    mask = np.zeros_like(values, dtype=bool)
    for user, item, rating in data:
        j = col.get(item)
        if j is not None:
            values[row[user], j] = rating
            mask[row[user], j] = True
    titles = None
    item_file = path.with_name("u.item")
    if item_file.exists():
        names = _read_titles(item_file)
        titles = tuple(names.get(int(m), str(m)) for m in kept)
    return RatingsMatrix(values, mask, kept, titles)


def pearson_similarity(ratings: RatingsMatrix, min_common: int = 2) -> np.ndarray:
    """Pearson correlation of every movie pair over co-rating users.

    Pairs with fewer than ``min_common`` co-ratings or zero variance get
    ``nan``. The diagonal is ``nan``.
    """
    r = ratings.values
    m = ratings.mask.astype(float)
    n = m.T @ m
    s1 = r.T @ m  # s1[a, b] = sum of a's ratings over users who rated b
    s2 = (r**2).T @ m
    p = r.T @ r
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = p - s1 * s1.T / n
        var_a = s2 - s1**2 / n
        corr = cov / np.sqrt(var_a * var_a.T)
    bad = (n < min_common) | ~np.isfinite(corr) | (var_a <= 1e-12) | (var_a.T <= 1e-12)
    corr = np.where(bad, np.nan, np.clip(corr, -1.0, 1.0))
    np.fill_diagonal(corr, np.nan)
    return corr


def build_similarity_graph(
    ratings: RatingsMatrix, top_k: int = TOP_K
) -> tuple[Gso, np.ndarray]:
    """Top-``k`` Pearson graph, symmetrized by union and normalized.

    Returns the graph and the kept column indices; movies with no defined
    correlation to any other movie are dropped with a warning.
    """
    if ratings.n_movies < 2:
        raise RatingsError("need at least two movies")
    corr = pearson_similarity(ratings)
    keep = np.flatnonzero(np.any(np.isfinite(corr), axis=1))
    if len(keep) < ratings.n_movies:
        warnings.warn(
            f"dropping {ratings.n_movies - len(keep)} movies without defined similarities",
            RuntimeWarning,
        )
    corr = corr[np.ix_(keep, keep)]
    n = len(keep)
    w = np.zeros((n, n))
    filled = np.where(np.isfinite(corr), corr, -np.inf)
    for i in range(n):
        finite = np.isfinite(filled[i])
        k = min(top_k, int(finite.sum()))
        # stable order: highest weight first, then lower index
        order = np.lexsort((np.arange(n), -filled[i]))[:k]
        w[i, order] = corr[i, order]
    w = np.where(w != 0, w, w.T)  # union; Pearson is symmetric so values agree
    return normalize_adjacency(Gso(w)), keep


def user_signals(ratings: RatingsMatrix, target_col: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Signals with the target zeroed, ratings of the target, and user rows."""
    users = np.flatnonzero(ratings.mask[:, target_col])
    x = ratings.values[users].copy()
    y = x[:, target_col].copy()
    x[:, target_col] = 0.0
    return x[:, :, None], y, users


def recommendation_dataset(
    ratings: RatingsMatrix, graph: Gso, target_col: int, users=None
) -> Dataset:
    x, y, rows = user_signals(ratings, target_col)
    if users is not None:
        sel = np.isin(rows, users)
        x, y = x[sel], y[sel]
    return Dataset(x, y[:, None, None], graph)


def recommendation_task(target_col: int) -> Regression:
    return Regression(nodes=(target_col,))


def split_users(ratings: RatingsMatrix, target_col: int, test_fraction=0.1, seed=None):
    """Shuffle the target's raters and cut off a test fraction."""
    _, _, rows = user_signals(ratings, target_col)
    rows = np.random.default_rng(seed).permutation(rows)
    n_test = max(1, int(round(test_fraction * len(rows))))
    return rows[n_test:], rows[:n_test]


def run_recommendation(
    model: WdGnnParams,
    ratings: RatingsMatrix,
    graph: Gso,
    target_col: int,
    mode: str = "offline",
    gamma: float = 5e-3,
    users=None,
) -> tuple[float, OnlineTrace]:
    """RMSE at ``target_col`` over the given users (all raters by default).

    In ``online`` mode each user is predicted first, then one gradient step
    on the wide taps uses the revealed rating.
    """
    if mode not in ("offline", "online"):
        raise RatingsError(f"unknown mode {mode!r}")
    data = recommendation_dataset(ratings, graph, target_col, users)
    if len(data) == 0:
        raise RatingsError("no test ratings for the target movie")
    task = recommendation_task(target_col)
    trace = OnlineTrace()
    errors = []
    params = model
    for t in range(len(data)):
        x, y = data.signals[t], data.targets[t]
        if mode == "offline":
            out, _ = wdgnn_forward(graph, x, params)
            loss = task.loss(out, y)[0]
        else:
            params, loss, out = centralized_online_step(
                params, graph, x, lambda o: task.loss(o, y), gamma
            )
        err = float(out[target_col, 0] - y[0, 0])
        errors.append(err)
        trace.records.append(OnlineRecord(t, float(loss), abs(err), 0.0, None, float(gamma)))
    return float(np.sqrt(np.mean(np.square(errors)))), trace


def synthetic_ratings(
    n_users: int = 300,
    n_items: int = 60,
    rank: int = 3,
    density: float = 0.4,
    seed=None,
) -> np.ndarray:
    """Low-rank ratings in MovieLens row format ``(user, item, rating, ts)``.

    Item ids start at 1; popularity decreases with id so the most-rated
    selection is predictable.
    """
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(n_users, rank))
    v = rng.normal(size=(n_items, rank))
    scores = 3 + u @ v.T / np.sqrt(rank) + 0.3 * rng.normal(size=(n_users, n_items))
    ratings = np.clip(np.rint(scores), 1, 5).astype(int)
    popularity = np.linspace(1.0, 0.3, n_items) * density / 0.65
    seen = rng.uniform(size=(n_users, n_items)) < popularity
    seen[:, 0] = True  # at least one rating per user
    users, items = np.nonzero(seen)
    return np.column_stack(
        [users + 1, items + 1, ratings[users, items], np.arange(len(users)) + 874_000_000]
    )


def write_ratings(rows: np.ndarray, path: str | PathLike) -> None:
    with open(path, "w") as fh:
        for r in rows:
            fh.write("\t".join(str(int(v)) for v in r) + "\n")
