"""Closed-form stability and convergence bounds, and empirical checks of them.

Stability of the WD-GNN to relative graph perturbations is bounded by
``2 C_L C_Psi (1 + 8 sqrt(N)) ||X|| eps`` to first order. Online tracking
with constant step ``gamma`` contracts at rate
``m_t = max(|1 - gamma C_{t,s}|, |1 - gamma C_{t,c}|)`` and the distributed
version pays an extra consensus term scaled by ``C_eps``.
"""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import asdict, dataclass
from os import PathLike
from typing import Sequence

import numpy as np

from .architecture import (
    FilterTaps,
    GnnParams,
    WdGnnParams,
    all_filters,
    frequency_response,
    integral_lipschitz_estimate,
    shift_stack,
    wdgnn_forward,
)
from .graph import (
    ConsensusWeights,
    Gso,
    RelativeError,
    normalize_adjacency,
    relative_error_from_perturbation,
    sbm_generate,
    smallest_weight,
    symmetric_eigendecomposition,
)

logger = logging.getLogger(__name__)

STABILITY_SLACK = 10.0


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------


def stability_constant(params: WdGnnParams) -> float:
    """``|alpha_D| L prod_{l<L} F_l + |alpha_W|`` for an ``L``-layer deep part."""
    c = abs(params.alpha_w) if params.wide is not None else 0.0
    if params.deep is not None:
        hidden = params.deep.dims[1:-1]
        c += abs(params.alpha_d) * params.deep.n_layers * float(np.prod(hidden))
    return float(c)


def stability_bound(c_l: float, c_psi: float, n: int, x_norm: float, eps: float) -> float:
    """First-order term ``2 C_L C_Psi (1 + 8 sqrt(N)) ||X|| eps``."""
    if min(c_l, c_psi, n, x_norm, eps) < 0:
        raise AnalysisError("stability bound inputs must be nonnegative")
    return float(2.0 * c_l * c_psi * (1.0 + 8.0 * np.sqrt(n)) * x_norm * eps)


def filter_stability_bound(c_l: float, n: int, x_norm: float, eps: float) -> float:
    return stability_bound(c_l, 1.0, n, x_norm, eps)


@dataclass
class StabilityReport:
    epsilon: float
    empirical_diff: float
    bound: float
    c_l: float
    c_psi: float
    n: int
    x_norm: float
    slack: float = STABILITY_SLACK

    @property
    def allowance(self) -> float:
        """Bound plus the second-order slack ``slack * eps^2 * bound / eps``."""
        return self.bound * (1.0 + self.slack * self.epsilon)

    @property
    def dominated(self) -> bool:
        return self.empirical_diff <= self.allowance


def spectral_interval(*graphs) -> tuple[float, float]:
    lo, hi = np.inf, -np.inf
    for s in graphs:
        lam, _ = symmetric_eigendecomposition(s)
        lo, hi = min(lo, lam[0]), max(hi, lam[-1])
    return float(lo), float(hi)


def stability_report(
    params: WdGnnParams, s: Gso, s_hat: Gso, x: np.ndarray, rel: RelativeError | None = None
) -> StabilityReport:
    """Measure the output change from ``S`` to ``S_hat`` against the bound.

    ``C_L`` is the largest integral Lipschitz estimate among all filters on
    an interval covering both spectra.
    """
    rel = relative_error_from_perturbation(s, s_hat) if rel is None else rel
    lo, hi = spectral_interval(s, s_hat)
    c_l = max(integral_lipschitz_estimate(f, lo, hi) for f in all_filters(params))
    c_psi = stability_constant(params)
    y, _ = wdgnn_forward(s, x, params)
    y_hat, _ = wdgnn_forward(s_hat, x, params)
    x_norm = float(np.linalg.norm(x, 2))
    eps = rel.operator_norm
    return StabilityReport(
        epsilon=eps,
        empirical_diff=float(np.linalg.norm(y - y_hat, 2)),
        bound=stability_bound(c_l, c_psi, s.n, x_norm, eps),
        c_l=c_l,
        c_psi=c_psi,
        n=s.n,
        x_norm=x_norm,
    )


def _bounded_filter(k_order: int, lo: float, hi: float, rng) -> FilterTaps:
    """Random scalar filter rescaled so ``max |h(lambda)| <= 1`` on ``[lo, hi]``."""
    taps = FilterTaps(rng.normal(size=(k_order + 1, 1, 1)))
    peak = np.abs(frequency_response(taps, np.linspace(lo, hi, 1001))).max()
    return FilterTaps(taps.taps / max(peak, 1e-12))


def random_single_feature_wdgnn(
    k_order: int, n_layers: int, lo: float, hi: float, rng, nonlinearity: str = "relu"
) -> WdGnnParams:
    """Single-feature WD-GNN whose filters all have ``|h| <= 1`` on ``[lo, hi]``."""
    wide = _bounded_filter(k_order, lo, hi, rng)
    deep = GnnParams(
        tuple(_bounded_filter(k_order, lo, hi, rng) for _ in range(n_layers)), nonlinearity
    )
    return WdGnnParams(
        wide, deep, alpha_w=rng.uniform(-1, 1), alpha_d=rng.uniform(-1, 1), beta=0.0
    )


def relative_perturbation(s: Gso, eps: float, rng) -> tuple[Gso, np.ndarray]:
    """``S_hat = S + E S + S E`` for a random symmetric ``E`` with ``||E|| = eps``."""
    e = rng.normal(size=(s.n, s.n))
    e = (e + e.T) / 2
    e *= eps / np.linalg.norm(e, 2)
    s_hat = s.entries + e @ s.entries + s.entries @ e
    return Gso((s_hat + s_hat.T) / 2), e


def stability_trial(
    n: int, eps: float, seed=None, k_order: int = 3, n_layers: int = 2
) -> StabilityReport:
    """One random instance: SBM graph, relative perturbation, random model."""
    rng = np.random.default_rng(seed)
    communities = 2 if n % 2 == 0 else 1
    s = normalize_adjacency(sbm_generate(n, communities, 0.6, 0.2, seed=rng))
    s_hat, _ = relative_perturbation(s, eps, rng)
    lo, hi = spectral_interval(s, s_hat)
    params = random_single_feature_wdgnn(k_order, n_layers, lo, hi, rng)
    x = rng.normal(size=(n, 1))
    return stability_report(params, s, s_hat, x)


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------


def convergence_rate(gamma: float, c_s: float, c_c: float) -> float:
    """``max(|1 - gamma c_s|, |1 - gamma c_c|)``; requires ``gamma in (0, 2/c_s)``."""
    if not (c_s >= c_c > 0):
        raise AnalysisError(f"need c_s >= c_c > 0, got c_s={c_s}, c_c={c_c}")
    if not 0 < gamma < 2.0 / c_s:
        raise AnalysisError(f"gamma={gamma} outside (0, {2.0 / c_s})")
    return max(abs(1 - gamma * c_s), abs(1 - gamma * c_c))


def _check_rates(rates) -> np.ndarray:
    m = np.asarray(rates, dtype=float)
    if m.ndim != 1 or len(m) == 0:
        raise AnalysisError("need a nonempty sequence of rates")
    if np.any(m < 0) or np.any(m >= 1):
        raise AnalysisError("every rate must lie in [0, 1)")
    return m


def centralized_tracking_bound(initial_err: float, rates, c_b: float) -> np.ndarray:
    """Bound on ``||A_{t+1} - A*_{t+1}||`` for ``t = 0 .. len(rates) - 1``.

    Entry ``t`` is ``prod_{tau<=t} m_tau * e_0 + (1 - mhat^{t+1})/(1 - mhat) C_B``
    with ``mhat`` the largest rate up to ``t``.
    """
    m = _check_rates(rates)
    prods = np.cumprod(m)
    m_hat = np.maximum.accumulate(m)
    steps = np.arange(1, len(m) + 1)
    return prods * initial_err + (1 - m_hat**steps) / (1 - m_hat) * c_b


def c_epsilon_constant(n: int, epsilon_floor: float, c_d: int) -> float:
    """Consensus constant of the distributed bound; ``inf`` when it degenerates."""
    if not 0 < epsilon_floor < 1:
        raise AnalysisError("epsilon_floor must lie in (0, 1)")
    if c_d < 1 or n < 2:
        raise AnalysisError("need c_d >= 1 and n >= 2")
    c_hat = c_d * (n - 1)
    e = epsilon_floor**c_hat
    denom = 1 - (1 - e) ** (1.0 / c_hat)
    if e >= 1 or denom <= 0:
        warnings.warn("C_eps degenerates numerically; returning inf", RuntimeWarning)
        return float("inf")
    with np.errstate(over="ignore"):
        value = 1 + n / denom * (1 + epsilon_floor ** (-c_hat)) / (1 - e)
    return float(value)


def distributed_tracking_bound(
    initial_mean_err: float,
    rates,
    c_b: float,
    gamma: float,
    lipschitz_l: float,
    c_s: float,
    c_eps: float,
) -> np.ndarray:
    """Bound on every node's ``||A_{i,t+1} - A*_{t+1}||``, one entry per step."""
    m = _check_rates(rates)
    prods = np.cumprod(m)
    m_hat = np.maximum.accumulate(m)
    consensus = 2 * gamma * c_eps * lipschitz_l * (gamma * c_s / (1 - m_hat) + 1)
    return prods * initial_mean_err + consensus + c_b / (1 - m_hat)


def lemma_bound(n: int, epsilon_floor: float, c_d: int, length: int) -> float:
    """``2 (1 + eps^-C) / (1 - eps^C) * (1 - eps^C)^(length / C)``, ``C = c_d (n-1)``."""
    if not 0 < epsilon_floor < 1:
        raise AnalysisError("epsilon_floor must lie in (0, 1)")
    c_hat = c_d * (n - 1)
    e = epsilon_floor**c_hat
    with np.errstate(over="ignore"):
        return float(2 * (1 + epsilon_floor ** (-c_hat)) / (1 - e) * (1 - e) ** (length / c_hat))


def weight_product_deviation(
    weights: Sequence[ConsensusWeights], c_d: int = 1
) -> tuple[float, float]:
    """``max |Lambda_ij - 1/N|`` for ``Lambda = W_T ... W_1`` and the consensus product bound.

    The bound uses the smallest nonzero weight seen in the sequence (or the
    declared floor, if larger) as ``eps``.
    """
    if len(weights) == 0:
        raise AnalysisError("empty weight sequence")
    n = weights[0].n
    prod = np.eye(n)
    eps = np.inf
    for w in weights:
        if w.n != n:
            raise AnalysisError("weight matrices differ in size")
        prod = w.entries @ prod
        eps = min(eps, max(smallest_weight(w), w.epsilon_floor))
    dev = float(np.abs(prod - 1.0 / n).max())
    return dev, lemma_bound(n, min(eps, 1 - 1e-15), c_d, len(weights))


def estimate_drift_constant(optima: Sequence[np.ndarray]) -> float:
    """Largest step ``||A*_{t+1} - A*_t||`` along a sequence of optima."""
    if len(optima) < 2:
        raise AnalysisError("need at least two optima")
    return float(
        max(np.linalg.norm(np.asarray(b) - np.asarray(a)) for a, b in zip(optima, optima[1:]))
    )


def gram_curvature(stack: np.ndarray, params: WdGnnParams, nodes=None) -> tuple[float, float]:
    """Extreme eigenvalues of the wide-tap Gram matrix of one sample.

    For a loss that is a sum of per-node terms in the outputs read at
    ``nodes``, the Hessian in the wide taps is the output-space curvature
    times ``alpha_W^2 (sum_d z_d z_d^T) kron (W_r W_r^T)``, where ``z_d`` is
    the flattened ``(K+1) F`` shifted input at node ``d``. The extreme
    eigenvalues of a Kronecker product of PSD factors are products of the
    factors' extremes.
    """
    z = np.moveaxis(stack, 0, -2)  # (N, K+1, F)
    z = z.reshape(z.shape[0], -1)
    if nodes is not None:
        z = z[list(nodes)]
    lam_z = np.linalg.eigvalsh(z.T @ z)
    lam_w = np.linalg.eigvalsh(params.readout_w @ params.readout_w.T)
    a2 = params.alpha_w**2
    return float(a2 * lam_z[-1] * lam_w[-1]), float(max(a2 * lam_z[0] * lam_w[0], 0.0))


def smoothness_from_data(
    params: WdGnnParams, s, signals: np.ndarray, nodes=None, output_curvature: float = 1.0
) -> float:
    """Largest ``C_{t,s}`` over a set of samples (shared graph).

    ``output_curvature`` bounds the loss Hessian in each read output row;
    for cross-entropy averaged over ``d`` rows it is ``1 / (2 d)``.
    """
    k = params.wide.k_order
    c_s = 0.0
    for x in signals:
        c_s = max(c_s, gram_curvature(shift_stack(s, x, k), params, nodes)[0])
    return output_curvature * c_s


@dataclass
class ConvergenceRow:
    t: int
    tracking_error: float
    bound: float
    m_t: float
    c_b: float
    c_s: float
    c_c: float
    c_eps: float
    c_d: int
    gamma: float
    lipschitz_l: float
    disagreement: float = 0.0


def write_rows_csv(rows: Sequence, path: str | PathLike) -> None:
    """Dataclass rows to CSV; floats written with ``repr`` for exact reruns."""
    if not rows:
        raise AnalysisError("nothing to write")
    fields = list(asdict(rows[0]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
