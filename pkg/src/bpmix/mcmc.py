"""Metropolis-within-Gibbs sampling of ``(N, u, c_1..c_K)``.

A sweep updates ``u`` by a random walk on ``log u``, then each ``c_k`` in
turn by a Gaussian random walk reflected into ``[EPS, 1 - EPS]``, then
draws ``N`` from its full conditional given ``h_0``.

By default (``collapse_N=True``) the ``u`` and ``c`` moves target the
posterior with ``N`` summed out.  For a flat prior the sum is

    sum_{N >= n} C(N, n) h_0^{N-n} = (1 - h_0)^{-(n+1)},

and ``(1 - h_0)^{-n} / n`` under ``1/N``; a cap on ``N`` multiplies these
by a negative binomial CDF.  Rissanen's prior has no closed form, so each
move proposes ``N`` jointly from the ``1/N`` conditional and corrects by
``N * prior(N)``.  Conditioning on ``N`` instead (``collapse_N=False``)
leaves ``(c, u)`` pinned by the huge ``f_0`` cell and mixes very slowly.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import special, stats

from .freq_data import DataError, FrequencyTable
from .model import MODES, ModelParams, PriorConfig, log_count_probabilities, log_prior_N
from .moments import EPS, _forward

__all__ = [
    "SamplerConfig",
    "Chain",
    "SamplerError",
    "draw_unseen",
    "gibbs_update_N",
    "mh_update_u",
    "mh_update_c",
    "run_sampler",
    "run_chains",
    "initial_state",
    "acf",
    "ess",
]


class SamplerError(RuntimeError):
    """Numerical failure inside the sampler (e.g. a non-finite start)."""


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 110_000
    burn_in: int = 10_000
    thin: int = 1
    seed: int = 0
    step_c: float = 0.1
    step_log_u: float = 0.3
    n_chains: int = 1
    store_c: bool = False
    collapse_N: bool = True

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if (self.iterations - self.burn_in) % self.thin:
            raise ValueError("thin must divide iterations - burn_in")
        if not (self.step_c > 0 and self.step_log_u > 0):
            raise ValueError("proposal scales must be positive")
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")

    @property
    def n_samples(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class Chain:
    """Post burn-in, thinned draws of one chain."""

    samples_N: np.ndarray
    samples_u: np.ndarray
    samples_m1: np.ndarray
    iters: np.ndarray
    acceptance_rates: dict
    seed: int
    config: dict = field(default_factory=dict)
    samples_c: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.samples_N)

    def columns(self) -> dict:
        cols = {"iter": self.iters, "N": self.samples_N, "u": self.samples_u, "m1": self.samples_m1}
        if self.samples_c is not None:
            for k in range(self.samples_c.shape[1]):
                cols[f"c{k + 1}"] = self.samples_c[:, k]
        return cols

    def to_csv(self, path):
        cols = self.columns()
        names = list(cols)
        fmt = {name: (str if cols[name].dtype.kind in "iu" else repr) for name in names}
        with open(path, "w", newline="") as fh:
            fh.write(",".join(names) + "\n")
            for row in zip(*(cols[n].tolist() for n in names)):
                fh.write(",".join(fmt[n](v) for n, v in zip(names, row)) + "\n")

    @classmethod
    def from_csv(cls, path) -> "Chain":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty chain file") from None
            rows = list(reader)
        required = {"iter", "N", "u", "m1"}
        if not required.issubset(header):
            raise DataError(f"{path}: chain file needs columns {sorted(required)}")
        try:
            data = np.array(rows, dtype=float).reshape(len(rows), len(header))
        except ValueError as exc:
            raise DataError(f"{path}: malformed chain file ({exc})") from None
        col = {name: data[:, i] for i, name in enumerate(header)}
        c_names = [h for h in header if h.startswith("c") and h[1:].isdigit()]
        samples_c = np.column_stack([col[h] for h in c_names]) if c_names else None
        return cls(samples_N=col["N"].astype(np.int64), samples_u=col["u"],
                   samples_m1=col["m1"], iters=col["iter"].astype(np.int64),
                   acceptance_rates={}, seed=-1, samples_c=samples_c)

    def thinned(self, thin: int) -> "Chain":
        """Every ``thin``-th draw."""
        if thin < 1:
            raise ValueError("thin must be at least 1")
        sl = slice(thin - 1, None, thin)
        return replace(self, samples_N=self.samples_N[sl], samples_u=self.samples_u[sl],
                       samples_m1=self.samples_m1[sl], iters=self.iters[sl],
                       samples_c=None if self.samples_c is None else self.samples_c[sl])


# --- N update -----------------------------------------------------------------

def _nb_draw(r, p, cap, rng, size=None):
    if cap is None:
        return rng.negative_binomial(r, p, size=size)
    # Inverse-CDF draw from the negative binomial truncated to [0, cap].
    top = stats.nbinom.cdf(cap, r, p)
    q = rng.random(size=size) * top
    out = np.maximum(stats.nbinom.ppf(q, r, p), 0).astype(np.int64)
    return out if size is not None else int(out)


def _accept(log_alpha, rng) -> bool:
    # random() lies in [0, 1), so compare on the probability scale
    return log_alpha >= 0 or rng.random() < math.exp(log_alpha)


def _log_weight(N, prior):
    # Rissanen prior relative to 1/N.
    return log_prior_N(N, prior) + math.log(N)


def draw_unseen(h0: float, n: int, prior: PriorConfig, rng, current_N=None, size=None):
    """Draw ``f_0 = N - n`` given the zero-cell probability ``h0``.

    With ``C(N, n) h0^{N-n}`` in the likelihood, a flat prior on ``N``
    gives ``f_0 ~ NegBin(n + 1, 1 - h0)`` and ``1/N`` gives
    ``NegBin(n, 1 - h0)``, both truncated at ``n_upper - n`` when capped.
    Rissanen's prior uses the ``1/N`` draw as an independence proposal
    weighted by ``N * prior(N)``, so it needs ``current_N`` and a scalar draw.
    """
    if not 0 <= h0 < 1:
        raise SamplerError(f"zero-cell probability h0={h0} must lie in [0, 1)")
    p = 1.0 - h0
    cap = None if prior.n_upper is None else prior.n_upper - n
    if prior.n_prior == "uniform":
        return _nb_draw(n + 1, p, cap, rng, size)
    if prior.n_prior == "reciprocal":
        return _nb_draw(n, p, cap, rng, size)
    if current_N is None or size is not None:
        raise ValueError("Rissanen's prior needs the current N and a scalar draw")
    f0 = int(_nb_draw(n, p, cap, rng))
    if _accept(_log_weight(n + f0, prior) - _log_weight(current_N, prior), rng):
        return f0
    return current_N - n


def gibbs_update_N(state: ModelParams, data: FrequencyTable, prior: PriorConfig, rng) -> int:
    """New population size given the mixture state."""
    h0 = math.exp(log_count_probabilities(state.c, state.u)[0])
    return data.n + int(draw_unseen(h0, data.n, prior, rng, current_N=state.N))


# --- (u, c) updates -------------------------------------------------------------

class _Target:
    """Log posterior of ``(c, u)``, up to terms free of ``(c, u)``.

    Conditional on ``N`` when ``collapsed`` is false, otherwise with ``N``
    summed out (for Rissanen's prior: summed out under ``1/N``, the
    remaining weight is handled by :meth:`propose_N`).
    """

    def __init__(self, data: FrequencyTable, prior: PriorConfig, mode: str, m_star: int,
                 collapsed: bool = True):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.f = [float(v) for v in data.padded(m_star)]
        self.n = data.n
        self.K = m_star
        self.prior = prior
        self.penalized = mode == "penalized"
        self.collapsed = collapsed
        self.joint_N = collapsed and prior.n_prior == "rissanen"
        self.r = data.n + 1 if prior.n_prior == "uniform" else data.n
        self.cap = None if prior.n_upper is None else prior.n_upper - data.n
        self.log_fact = [math.lgamma(k + 1) for k in range(m_star + 1)]
        self.u_upper = math.inf if prior.u_upper is None else prior.u_upper
        self.last_log_h0 = None

    def _log_y(self, c, u):
        m = _forward(c)
        log_u = math.log(u)
        log_y = [0.0]
        for k in range(1, self.K + 1):
            mk = m[k - 1]
            if mk <= 0.0:
                return None
            log_y.append(k * log_u + math.log(mk) - self.log_fact[k])
        return log_y

    def log_h0(self, c, u) -> float:
        log_y = self._log_y(c, u)
        return -_logsumexp(log_y)

    def __call__(self, c, u, N) -> float:
        if not self.prior.u_lower <= u <= self.u_upper:
            return -math.inf
        K = self.K
        log_y = self._log_y(c, u)
        if log_y is None:
            return -math.inf
        log_d = _logsumexp(log_y)
        self.last_log_h0 = -log_d
        log_jac = 0.0
        for j in range(K - 1):
            cj = c[j]
            log_jac += (K - 1 - j) * (math.log(cj) + math.log1p(-cj))

        data_term = 0.0
        sum_log_h = 0.0
        for k in range(1, K + 1):
            log_h = log_y[k] - log_d
            data_term += self.f[k - 1] * log_h
            sum_log_h += log_h
        if self.collapsed:
            log_1m_h0 = _logsumexp(log_y[1:]) - log_d
            data_term -= self.r * log_1m_h0
            if self.cap is not None:
                data_term += math.log(special.betainc(self.r, self.cap + 1, math.exp(log_1m_h0)))
            # f_0 carries no count once N is summed out; h_0 enters below.
            f0 = 0.0
        else:
            f0 = float(N - self.n)
        data_term += f0 * (-log_d)

        if self.penalized:
            # Exponents f_k - 1/2 for every cell, flat measure on m.
            data_term -= 0.5 * (sum_log_h - log_d)
            return data_term + log_jac - 0.5 * K * (K + 1) * math.log(u)
        # Jeffreys: -1/2 sum_k log h_k - (K+1) log D + log|J_h| + log jac,
        # where log|J_h| cancels the u prior up to a constant.
        return data_term - 0.5 * (sum_log_h - log_d) - (K + 1) * log_d + log_jac

    def propose_N(self, N, rng):
        """Joint ``N`` proposal after a ``(c, u)`` proposal was evaluated.

        Returns ``(N_new, log_ratio_term)``; a no-op unless ``joint_N``.
        """
        if not self.joint_N:
            return N, 0.0
        h0 = math.exp(self.last_log_h0)
        N_new = self.n + int(_nb_draw(self.n, 1.0 - h0, self.cap, rng))
        return N_new, _log_weight(N_new, self.prior) - _log_weight(N, self.prior)


def _logsumexp(xs):
    top = max(xs)
    return top + math.log(sum(math.exp(v - top) for v in xs))


def _reflect(x, lower, upper):
    width = upper - lower
    d = x - lower
    k = math.floor(d / width)
    r = d - k * width
    return lower + r if k % 2 == 0 else upper - r


def mh_update_u(state: ModelParams, target, step: float, rng, current=None):
    """Random-walk step on ``log u``.

    Returns ``(u, N, log_target, accepted)``; ``N`` changes only for joint
    moves under Rissanen's prior.
    """
    c = list(state.c)
    lp = target(c, state.u, state.N) if current is None else current
    u_new = state.u * math.exp(step * rng.standard_normal())
    lp_new = target(c, u_new, state.N)
    if lp_new == -math.inf:
        return state.u, state.N, lp, False
    N_new, log_w = target.propose_N(state.N, rng)
    # log-scale walk: the proposal density ratio contributes u_new / u.
    log_alpha = lp_new - lp + log_w + math.log(u_new) - math.log(state.u)
    if _accept(log_alpha, rng):
        return u_new, N_new, lp_new, True
    return state.u, state.N, lp, False


def mh_update_c(state: ModelParams, target, step: float, rng, current=None):
    """Sweep the canonical moments in index order.

    Returns ``(c, N, log_target, n_accepted)``.
    """
    c = list(state.c)
    N = state.N
    lp = target(c, state.u, N) if current is None else current
    accepted = 0
    for k in range(len(c)):
        old = c[k]
        c[k] = _reflect(old + step * rng.standard_normal(), EPS, 1.0 - EPS)
        lp_new = target(c, state.u, N)
        if lp_new > -math.inf:
            N_new, log_w = target.propose_N(N, rng)
            if _accept(lp_new - lp + log_w, rng):
                lp, N = lp_new, N_new
                accepted += 1
                continue
        c[k] = old
    return c, N, lp, accepted


# --- driver -----------------------------------------------------------------------

def initial_state(data: FrequencyTable, prior: PriorConfig, m_star: int) -> ModelParams:
    """``N = 2n``, ``u = max(1, K/2)`` and every ``c_k = 1/2``, clipped to the prior support."""
    N = 2 * data.n
    if prior.n_upper is not None:
        N = min(N, prior.n_upper)
    u = max(1.0, m_star / 2.0, prior.u_lower)
    if prior.u_upper is not None:
        u = min(u, prior.u_upper)
    return ModelParams(N=N, u=u, c=[0.5] * m_star)


def run_sampler(data: FrequencyTable, prior: PriorConfig = PriorConfig(),
                sampler: SamplerConfig = SamplerConfig(), mode: str = "full_bayes",
                m_star: Optional[int] = None, chain_index: int = 0) -> Chain:
    """Run one chain; deterministic given ``sampler.seed + chain_index``."""
    if data.tail:
        raise DataError(f"{data.label or 'table'} has an open-ended last cell; right_truncate first")
    m_star = data.M if m_star is None else int(m_star)
    if m_star < data.M:
        raise DataError(f"m_star={m_star} is below the table's M={data.M}; right_truncate first")
    prior.check_data(data)
    if prior.n_prior == "uniform" and prior.n_upper is None and m_star <= 2:
        # near c_1 = 0 the density behaves like c_1^(M*/2 - 2), not integrable for M* <= 2
        raise ValueError(f"flat prior on N without n_upper gives an improper posterior for "
                         f"m_star={m_star}; set n_upper or use more moments")
    seed = sampler.seed + chain_index
    rng = np.random.default_rng(seed)
    target = _Target(data, prior, mode, m_star, collapsed=sampler.collapse_N)

    state = initial_state(data, prior, m_star)
    N, u, c = state.N, state.u, list(state.c)
    lp = target(c, u, N)
    if not math.isfinite(lp):
        raise SamplerError(f"log posterior at the initial state {state} is {lp}")

    n_keep = sampler.n_samples
    out_N = np.empty(n_keep, dtype=np.int64)
    out_u = np.empty(n_keep)
    out_m1 = np.empty(n_keep)
    out_it = np.empty(n_keep, dtype=np.int64)
    out_c = np.empty((n_keep, m_star)) if sampler.store_c else None
    acc_N = acc_u = acc_c = 0
    j = 0
    for it in range(1, sampler.iterations + 1):
        u, N, lp, ok = mh_update_u(ModelParams(N, u, c), target, sampler.step_log_u, rng, lp)
        acc_u += ok
        c, N, lp, k_ok = mh_update_c(ModelParams(N, u, c), target, sampler.step_c, rng, lp)
        acc_c += k_ok
        h0 = math.exp(target.log_h0(c, u))
        N_new = data.n + int(draw_unseen(h0, data.n, prior, rng, current_N=N))
        acc_N += N_new != N
        if N_new != N and not target.collapsed:
            lp = target(c, u, N_new)
        N = N_new
        if it > sampler.burn_in and (it - sampler.burn_in) % sampler.thin == 0:
            out_N[j], out_u[j], out_m1[j], out_it[j] = N, u, c[0], it
            if out_c is not None:
                out_c[j] = c
            j += 1

    total = sampler.iterations
    rates = {"N": acc_N / total, "u": acc_u / total, "c": acc_c / (total * m_star)}
    config = {"prior": asdict(prior), "sampler": asdict(sampler), "mode": mode,
              "m_star": m_star, "label": data.label, "chain_index": chain_index}
    return Chain(samples_N=out_N, samples_u=out_u, samples_m1=out_m1, iters=out_it,
                 acceptance_rates=rates, seed=seed, config=config, samples_c=out_c)


def _run_one(args):
    return run_sampler(*args)


def run_chains(data: FrequencyTable, prior: PriorConfig = PriorConfig(),
               sampler: SamplerConfig = SamplerConfig(), mode: str = "full_bayes",
               m_star: Optional[int] = None, max_workers: Optional[int] = None) -> list[Chain]:
    """``sampler.n_chains`` independent chains with seeds ``seed, seed+1, ...``."""
    jobs = [(data, prior, sampler, mode, m_star, i) for i in range(sampler.n_chains)]
    workers = min(len(jobs), max_workers or os.cpu_count() or 1)
    if workers <= 1:
        return [_run_one(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


# --- diagnostics --------------------------------------------------------------------

def acf(series, max_lag: Optional[int] = None) -> np.ndarray:
    """Sample autocorrelation ``rho_0..rho_max_lag`` (1/L normalization, as R's ``acf``)."""
    x = np.asarray(series, dtype=float)
    L = len(x)
    if L < 2:
        raise ValueError("need at least two values")
    max_lag = L - 1 if max_lag is None else min(int(max_lag), L - 1)
    x = x - x.mean()
    var = np.dot(x, x)
    if var == 0:
        raise ValueError("autocorrelation is undefined for a constant series")
    size = 1 << int(2 * L - 1).bit_length()
    spec = np.fft.rfft(x, size)
    cov = np.fft.irfft(spec * np.conj(spec), size)[: max_lag + 1]
    return cov / cov[0]


def ess(series) -> float:
    """Effective sample size from Geyer's initial positive sequence.

    Clamped to ``[1, L]``; a constant series counts as one draw.
    """
    x = np.asarray(series, dtype=float)
    L = len(x)
    if L < 2 or np.all(x == x[0]):
        return 1.0
    rho = acf(x)
    tau = -1.0
    for m in range(L // 2):
        pair = rho[2 * m] + (rho[2 * m + 1] if 2 * m + 1 < L else 0.0)
        if pair <= 0:
            break
        tau += 2.0 * pair
    if tau <= 0:
        return float(L)
    return float(min(max(L / tau, 1.0), L))
