"""Likelihood and priors of the moment-based Poisson mixture.

For a mixing distribution rescaled to ``[0, u]`` with moments
``u^k m_k`` the count probabilities are

    h_k = (u^k m_k / k!) / sum_{j=0}^{K} u^j m_j / j!,    k = 0..K,

with ``m_0 = 1`` and ``m = canonical_to_ordinary(c)``.  Everything here
works on log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .freq_data import FrequencyTable
from .moments import canonical_to_ordinary, log_jacobian_canonical_to_ordinary

__all__ = [
    "ModelParams",
    "PriorConfig",
    "N_PRIORS",
    "MODES",
    "count_probabilities",
    "log_count_probabilities",
    "log_likelihood",
    "log_penalized_likelihood",
    "log_det_normalization_jacobian",
    "log_det_scaling_jacobian",
    "log_prior_moments",
    "log_prior_u",
    "log_prior_N",
    "log_star2",
    "log_posterior",
]

N_PRIORS = ("uniform", "reciprocal", "rissanen")
MODES = ("full_bayes", "penalized")
_LOG2 = math.log(2.0)


@dataclass(frozen=True)
class PriorConfig:
    n_prior: str = "uniform"
    u_lower: float = 0.5
    u_upper: Optional[float] = 1000.0
    n_upper: Optional[int] = None

    def __post_init__(self):
        if self.n_prior not in N_PRIORS:
            raise ValueError(f"n_prior must be one of {N_PRIORS}, got {self.n_prior!r}")
        if not self.u_lower > 0:
            raise ValueError(f"u_lower must be positive, got {self.u_lower}")
        if self.u_upper is not None and not self.u_upper > self.u_lower:
            raise ValueError("u_upper must exceed u_lower")
        if self.n_upper is not None and self.n_upper < 1:
            raise ValueError("n_upper must be a positive integer")

    def check_data(self, data: FrequencyTable):
        if self.n_upper is not None and self.n_upper < data.n:
            raise ValueError(f"n_upper={self.n_upper} is below the observed n={data.n}")


@dataclass(frozen=True)
class ModelParams:
    N: int
    u: float
    c: Sequence[float]

    @property
    def m_star(self) -> int:
        return len(self.c)


def _log_y(c, u):
    """``log(u^k m_k / k!)`` for ``k = 0..K``."""
    m = canonical_to_ordinary(c)
    log_u = math.log(u)
    out = [0.0]
    for k, mk in enumerate(m, start=1):
        out.append(k * log_u + math.log(mk) - math.lgamma(k + 1) if mk > 0 else -math.inf)
    return out


def _logsumexp(xs):
    top = max(xs)
    return top + math.log(math.fsum(math.exp(x - top) for x in xs))


def log_count_probabilities(c, u: float) -> np.ndarray:
    """``log h_k`` for ``k = 0..K``."""
    if not u > 0:
        raise ValueError(f"u must be positive, got {u!r}")
    log_y = _log_y(c, u)
    log_d = _logsumexp(log_y)
    return np.array([ly - log_d for ly in log_y])


def count_probabilities(c, u: float) -> np.ndarray:
    """Cell probabilities ``h_0..h_K`` of the truncated moment model."""
    return np.exp(log_count_probabilities(c, u))


def _cells(params: ModelParams, data: FrequencyTable):
    K = params.m_star
    if data.M > K:
        raise ValueError(f"data has {data.M} cells but the model has only K={K}; truncate first")
    if params.N < data.n:
        raise ValueError(f"N={params.N} is below the observed n={data.n}")
    return [params.N - data.n] + data.padded(K)


def _log_binom(N, n):
    return math.lgamma(N + 1) - math.lgamma(n + 1) - math.lgamma(N - n + 1)


def log_likelihood(params: ModelParams, data: FrequencyTable) -> float:
    """``log[C(N, n) prod_k h_k^{f_k}]`` with ``f_0 = N - n``."""
    f = _cells(params, data)
    log_h = log_count_probabilities(params.c, params.u)
    return _log_binom(params.N, data.n) + sum(fk * lh for fk, lh in zip(f, log_h) if fk)


def log_penalized_likelihood(params: ModelParams, data: FrequencyTable) -> float:
    """As :func:`log_likelihood` with every cell exponent lowered by 1/2."""
    f = _cells(params, data)
    log_h = log_count_probabilities(params.c, params.u)
    return _log_binom(params.N, data.n) + sum((fk - 0.5) * lh for fk, lh in zip(f, log_h))


def log_det_normalization_jacobian(y) -> float:
    """``log |det dx/dy|`` for ``x_k = y_k / D``, ``D = 1 + sum_k y_k``.

    The Jacobian is ``I/D - x 1^T / D`` (``y_0 = 1`` held fixed), a rank-one
    update of a scaled identity, so ``det = D^{-K} (1 - sum x_k) = D^{-(K+1)}``.
    """
    y = np.asarray(y, dtype=float)
    return -(len(y) + 1) * math.log1p(float(np.sum(y)))


def log_det_scaling_jacobian(u: float, m_star: int) -> float:
    """``log prod_{k=1}^{K} u^k / k!`` for ``y_k = u^k m_k / k!``."""
    return sum(k * math.log(u) - math.lgamma(k + 1) for k in range(1, m_star + 1))


def log_prior_moments(c, u: float) -> float:
    """Unnormalized log Jeffreys prior carried over to the canonical chart."""
    K = len(c)
    log_y = _log_y(c, u)
    log_d = _logsumexp(log_y)
    jeffreys = -0.5 * sum(ly - log_d for ly in log_y)
    log_jg = -(K + 1) * log_d
    return (jeffreys + log_jg + log_det_scaling_jacobian(u, K)
            + log_jacobian_canonical_to_ordinary(c))


def log_prior_u(u: float, m_star: int, cfg: PriorConfig) -> float:
    """``-K(K+1)/2 log u`` on ``[u_lower, u_upper]``, ``-inf`` elsewhere."""
    if u < cfg.u_lower or (cfg.u_upper is not None and u > cfg.u_upper):
        return -math.inf
    return -0.5 * m_star * (m_star + 1) * math.log(u)


def log_star2(N: int) -> float:
    """Iterated base-2 logarithm ``log2 N + log2 log2 N + ...`` (positive terms)."""
    total = 0.0
    x = math.log2(N)
    while x > 0:
        total += x
        x = math.log2(x)
    return total


def log_prior_N(N: int, cfg: PriorConfig) -> float:
    if N < 1:
        raise ValueError(f"N must be at least 1, got {N}")
    if cfg.n_upper is not None and N > cfg.n_upper:
        return -math.inf
    if cfg.n_prior == "uniform":
        return 0.0
    if cfg.n_prior == "reciprocal":
        return -math.log(N)
    return -log_star2(N) * _LOG2


def log_posterior(params: ModelParams, data: FrequencyTable, cfg: PriorConfig,
                  mode: str = "full_bayes") -> float:
    """Unnormalized log posterior of ``(N, u, c)``.

    ``penalized`` uses the half-lowered exponents with a flat prior on the
    ordinary moments (expressed on the canonical chart) instead of the
    Jeffreys prior.
    """
    lp = log_prior_u(params.u, params.m_star, cfg) + log_prior_N(params.N, cfg)
    if lp == -math.inf:
        return lp
    if mode == "full_bayes":
        return log_likelihood(params, data) + log_prior_moments(params.c, params.u) + lp
    if mode == "penalized":
        return (log_penalized_likelihood(params, data)
                + log_jacobian_canonical_to_ordinary(params.c) + lp)
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
