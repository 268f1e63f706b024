"""Graph shift operators, perturbations, permutations and consensus weights.

Graph signals are plain ``numpy`` arrays of shape ``(n_nodes, n_features)``
(or ``(n_samples, n_nodes, n_features)`` when batched). Row ``i`` holds the
feature vector of node ``i``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from os import PathLike
from typing import Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

logger = logging.getLogger(__name__)

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
RESONANCE_TOL = 1e-10


class GraphError(ValueError):
    """Raised on malformed graphs or impossible graph constructions."""


@dataclass(frozen=True)
class Gso:
    """Graph shift operator: a dense ``n x n`` matrix respecting a graph's sparsity.

    The edge set is the off-diagonal support of ``entries``; ``entries[i, j]``
    nonzero means node ``i`` reads from node ``j``.
    """

    entries: np.ndarray
    symmetric: bool = True

    def __post_init__(self):
        a = np.array(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError(f"GSO must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise GraphError("GSO has non-finite entries")
        if self.symmetric and not np.array_equal(a, a.T):
            raise GraphError("GSO flagged symmetric but entries are not")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def adjacency(self) -> np.ndarray:
        """Boolean edge pattern without self-loops."""
        mask = self.entries != 0
        np.fill_diagonal(mask, False)
        return mask

    @property
    def n_edges(self) -> int:
        """Number of undirected edges (directed count if not symmetric)."""
        count = int(self.adjacency.sum())
        return count // 2 if self.symmetric else count

    def is_connected(self) -> bool:
        adj = self.adjacency
        n_comp, _ = connected_components(adj | adj.T, directed=False)
        return n_comp == 1

    @classmethod
    def from_array(cls, a) -> "Gso":
        a = np.asarray(a, dtype=float)
        return cls(a, symmetric=bool(np.array_equal(a, a.T)))


@dataclass(frozen=True)
class Permutation:
    """A node relabelling; ``as_matrix()[i, mapping[i]] == 1``."""

    mapping: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=int)
        if m.ndim != 1 or not np.array_equal(np.sort(m), np.arange(m.size)):
            raise GraphError("mapping is not a permutation of range(n)")
        m.setflags(write=False)
        object.__setattr__(self, "mapping", m)

    @property
    def n(self) -> int:
        return self.mapping.size

    @property
    def inverse(self) -> np.ndarray:
        return np.argsort(self.mapping)

    def as_matrix(self) -> np.ndarray:
        p = np.zeros((self.n, self.n))
        p[np.arange(self.n), self.mapping] = 1.0
        return p

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    @classmethod
    def random(cls, n: int, seed=None) -> "Permutation":
        return cls(np.random.default_rng(seed).permutation(n))


@dataclass(frozen=True)
class ConsensusWeights:
    """Doubly stochastic mixing matrix supported on a graph plus self-loops."""

    entries: np.ndarray
    epsilon_floor: float

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def check(self, gso: Gso | None = None, atol: float = 1e-12) -> None:
        """Raise ``GraphError`` if any consensus-weight invariant fails."""
        w = self.entries
        if np.any(w < 0):
            raise GraphError("negative consensus weight")
        if not np.allclose(w.sum(axis=1), 1.0, rtol=0, atol=atol):
            raise GraphError("rows of W do not sum to 1")
        if not np.allclose(w.sum(axis=0), 1.0, rtol=0, atol=atol):
            raise GraphError("columns of W do not sum to 1")
        nz = w[w > 0]
        if nz.size and nz.min() < self.epsilon_floor:
            raise GraphError(
                f"nonzero weight {nz.min():.3g} below floor {self.epsilon_floor:.3g}"
            )
        if gso is not None:
            allowed = gso.adjacency | np.eye(gso.n, dtype=bool)
            if np.any((w > 0) & ~allowed):
                raise GraphError("W has support outside the graph and self-loops")


@dataclass(frozen=True)
class RelativeError:
    """Symmetric ``E`` with ``S_hat = S + E S + S E`` and its spectral norm."""

    matrix: np.ndarray
    operator_norm: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "operator_norm", float(np.linalg.norm(self.matrix, 2))
        )

    def reconstruct(self, s: Gso) -> np.ndarray:
        a, e = s.entries, self.matrix
        return a + e @ a + a @ e


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def sbm_generate(
    n: int,
    communities: int,
    p_intra: float,
    p_inter: float,
    seed=None,
    max_retries: int = 100,
) -> Gso:
    """Draw a connected stochastic block model graph.

    Nodes are assigned to contiguous, equally sized blocks. The draw is
    repeated from the same generator until the graph is connected.

    Raises
    ------
    GraphError
        If ``communities`` does not divide ``n`` or no connected graph is
        found within ``max_retries`` draws.
    """
    if communities < 1 or n % communities:
        raise GraphError(f"{communities} communities do not divide {n} nodes")
    for p in (p_intra, p_inter):
        if not 0.0 <= p <= 1.0:
            raise GraphError(f"probability {p} outside [0, 1]")
    rng = np.random.default_rng(seed)
    labels = community_labels(n, communities)
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, p_intra, p_inter)
    iu = np.triu_indices(n, k=1)
    for _ in range(max_retries):
        draw = rng.random(iu[0].size) < prob[iu]
        a = np.zeros((n, n))
        a[iu] = draw
        a = a + a.T
        g = Gso(a)
        if g.is_connected():
            return g
    raise GraphError(f"no connected SBM graph after {max_retries} draws")


def community_labels(n: int, communities: int) -> np.ndarray:
    return np.repeat(np.arange(communities), n // communities)


def normalize_adjacency(a: Gso) -> Gso:
    """Scale a symmetric GSO so its spectral radius is one."""
    if not a.symmetric:
        raise GraphError("normalize_adjacency requires a symmetric GSO")
    evals, _ = symmetric_eigendecomposition(a)
    rho = float(np.max(np.abs(evals)))
    if rho == 0.0:
        raise GraphError("cannot normalize a GSO with zero spectrum")
    out = a.entries / rho
    # keep exact symmetry after floating-point division
    out = 0.5 * (out + out.T)
    return Gso(out, symmetric=True)


def graph_shift(s: Gso, x: np.ndarray) -> np.ndarray:
    """Return ``S @ X``; accepts a single signal or a batch ``(B, N, F)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim < 2 or x.shape[-2] != s.n:
        raise GraphError(f"signal with shape {x.shape} does not fit {s.n} nodes")
    return s.entries @ x


def drop_edges(s: Gso, p: float, seed=None) -> Gso:
    """Remove every undirected edge independently with probability ``p``."""
    if not s.symmetric:
        raise GraphError("drop_edges requires a symmetric GSO")
    if not 0.0 <= p <= 1.0:
        raise GraphError(f"drop probability {p} outside [0, 1]")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(s.n, k=1)
    keep = rng.random(iu[0].size) >= p
    upper = np.zeros((s.n, s.n), dtype=bool)
    upper[iu] = keep
    mask = upper | upper.T | np.eye(s.n, dtype=bool)
    return Gso(np.where(mask, s.entries, 0.0), symmetric=True)


def permute_graph(s: Gso, perm: Permutation) -> Gso:
    """Return ``P^T S P``."""
    if perm.n != s.n:
        raise GraphError("permutation size does not match the graph")
    inv = perm.inverse
    return Gso(s.entries[np.ix_(inv, inv)], symmetric=s.symmetric)


def permute_signal(x: np.ndarray, perm: Permutation) -> np.ndarray:
    """Return ``P^T X`` (node axis is ``-2``)."""
    x = np.asarray(x)
    if x.shape[-2] != perm.n:
        raise GraphError("permutation size does not match the signal")
    return np.take(x, perm.inverse, axis=-2)


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------


def _round_robin_pairs(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Chess-tournament ordering: n-1 rounds of n/2 disjoint index pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p = np.array(players[: m // 2])
        q = np.array(players[m // 2 :][::-1])
        keep = (p < n) & (q < n)
        lo, hi = np.minimum(p, q)[keep], np.maximum(p, q)[keep]
        rounds.append((lo, hi))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(
    a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS
) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi eigensolver for a real symmetric matrix.

    Each sweep visits every off-diagonal pair once, grouped into rounds of
    disjoint pairs so that one round's rotations commute and are applied in
    a single vectorized update. Iteration stops when the off-diagonal
    Frobenius norm falls below ``tol * ||A||_F``.

    Returns eigenvalues in ascending order and the matching orthonormal
    eigenvectors as columns.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    if n < 2:
        return np.diag(a).copy(), v
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    rounds = _round_robin_pairs(n)

    def off_norm(m):
        return np.linalg.norm(m - np.diag(np.diag(m)))

    for _ in range(max_sweeps):
        if off_norm(a) <= tol * scale:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t[theta == 0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            sn = t * c
            # A <- J^T A J with J acting on columns (p, q) of every pair
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - sn * aq
            a[:, q] = sn * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - sn[:, None] * aq
            a[q, :] = sn[:, None] * ap + c[:, None] * aq
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - sn * vq
            v[:, q] = sn * vp + c * vq
    else:
        if off_norm(a) > tol * scale:
            logger.warning("Jacobi did not converge in %d sweeps", max_sweeps)
    evals = np.diag(a).copy()
    order = np.argsort(evals, kind="stable")
    return evals[order], v[:, order]


def symmetric_eigendecomposition(s: Gso | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric GSO."""
    a = s.entries if isinstance(s, Gso) else np.asarray(s, dtype=float)
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max(initial=0))):
        raise GraphError("eigendecomposition requires a symmetric matrix")
    return jacobi_eigh(0.5 * (a + a.T))


def relative_error_from_perturbation(s: Gso, s_hat: Gso) -> RelativeError:
    """Solve ``S_hat - S = E S + S E`` for symmetric ``E`` (identity permutation).

    In the eigenbasis of ``S`` the equation decouples entrywise:
    ``(V^T E V)_ij = (V^T (S_hat - S) V)_ij / (lambda_i + lambda_j)``.

    Raises
    ------
    GraphError
        On a resonant pair ``|lambda_i + lambda_j| < 1e-10`` whose right-hand
        side is nonzero; no symmetric ``E`` exists in that case.
    """
    if s.n != s_hat.n:
        raise GraphError("graphs differ in size")
    if not (s.symmetric and s_hat.symmetric):
        raise GraphError("relative error requires symmetric GSOs")
    lam, v = symmetric_eigendecomposition(s)
    delta = v.T @ (s_hat.entries - s.entries) @ v
    denom = lam[:, None] + lam[None, :]
    resonant = np.abs(denom) < RESONANCE_TOL
    scale = max(1.0, np.abs(delta).max(initial=0.0))
    if np.any(resonant & (np.abs(delta) > 1e-12 * scale)):
        i, j = np.argwhere(resonant & (np.abs(delta) > 1e-12 * scale))[0]
        raise GraphError(
            f"resonant eigenvalue pair ({lam[i]:.3g}, {lam[j]:.3g}): "
            "no symmetric relative error exists"
        )
    safe = np.where(resonant, 1.0, denom)
    e_tilde = np.where(resonant, 0.0, delta / safe)
    e = v @ e_tilde @ v.T
    return RelativeError(0.5 * (e + e.T))


# ---------------------------------------------------------------------------
# consensus
# ---------------------------------------------------------------------------


def metropolis_weights(s: Gso, epsilon_floor: float = 0.0) -> ConsensusWeights:
    """Metropolis-Hastings mixing weights supported on ``s`` plus self-loops."""
    if not s.symmetric:
        raise GraphError("metropolis_weights requires a symmetric GSO")
    adj = s.adjacency
    deg = adj.sum(axis=1)
    w = np.where(adj, 1.0 / (1.0 + np.maximum(deg[:, None], deg[None, :])), 0.0)
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    weights = ConsensusWeights(w, float(epsilon_floor))
    weights.check(s)
    return weights


def smallest_weight(w: ConsensusWeights) -> float:
    """Largest admissible floor: the smallest positive entry of ``w``."""
    return float(w.entries[w.entries > 0].min())


def check_union_connectivity(graphs: Sequence[Gso], window: int) -> bool:
    """True iff every window of ``window`` consecutive graphs has a connected union."""
    if not graphs:
        raise GraphError("empty graph sequence")
    if window < 1:
        raise GraphError("window must be at least 1")
    n = graphs[0].n
    if any(g.n != n for g in graphs):
        raise GraphError("graphs differ in size")
    masks = [g.adjacency | g.adjacency.T for g in graphs]
    last_start = max(len(graphs) - window, 0)
    for t in range(last_start + 1):
        union = np.logical_or.reduce(masks[t : t + window])
        if connected_components(union, directed=False)[0] != 1:
            return False
    return True


# ---------------------------------------------------------------------------
# edge-list text format
# ---------------------------------------------------------------------------


def write_edge_list(s: Gso, path: str | PathLike) -> None:
    """Write ``N`` then one ``i j w`` line per nonzero entry (0-indexed)."""
    rows, cols = np.nonzero(s.entries)
    with open(path, "w") as fh:
        fh.write(f"{s.n}\n")
        for i, j in zip(rows, cols):
            fh.write(f"{i} {j} {float(s.entries[i, j])!r}\n")


def read_edge_list(path: str | PathLike, symmetric: bool | None = None) -> Gso:
    """Read the edge-list format; symmetry is inferred unless given."""
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    if not lines or len(lines[0]) != 1:
        raise GraphError("edge list must start with a node-count line")
    n = int(lines[0][0])
    a = np.zeros((n, n))
    for lineno, parts in enumerate(lines[1:], start=2):
        if len(parts) != 3:
            raise GraphError(f"line {lineno}: expected 'i j w'")
        i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"line {lineno}: node index out of range")
        a[i, j] = w
    if symmetric is None:
        symmetric = bool(np.array_equal(a, a.T))
    return Gso(a, symmetric=symmetric)
