import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from bpmix.freq_data import FrequencyTable, load_dataset
from bpmix.model import (
    ModelParams, PriorConfig, count_probabilities, log_count_probabilities,
    log_det_normalization_jacobian, log_det_scaling_jacobian, log_likelihood,
    log_penalized_likelihood, log_posterior, log_prior_moments, log_prior_N, log_prior_u,
    log_star2,
)
from bpmix.moments import canonical_to_ordinary, log_jacobian_canonical_to_ordinary

canon = st.lists(st.floats(0.01, 0.99), min_size=1, max_size=15)
scale = st.floats(0.5, 50.0)


def test_point_mass_probabilities():
    h = count_probabilities([1.0, 0.5], 2.0)
    np.testing.assert_allclose(h, [0.2, 0.4, 0.4], rtol=1e-14)


@settings(max_examples=300)
@given(canon, scale)
def test_probabilities_normalized(c, u):
    h = count_probabilities(c, u)
    assert len(h) == len(c) + 1
    assert np.all(h > 0)
    assert math.fsum(h) == pytest.approx(1.0, abs=1e-12)


def test_arcsine_probabilities_by_quadrature():
    def y(k):
        val, _ = integrate.quad(lambda x: x ** k / math.pi, 0, 1, weight="alg", wvar=(-0.5, -0.5))
        return val / math.factorial(k)
    oracle = np.array([y(k) for k in range(5)])
    np.testing.assert_allclose(count_probabilities([0.5] * 4, 1.0), oracle / oracle.sum(),
                               rtol=1e-12)


def test_one_cell_likelihood_by_hand():
    data = FrequencyTable((2,))
    for c1, u in [(0.3, 1.0), (0.8, 4.5)]:
        h1 = u * c1 / (1 + u * c1)
        expected = math.log(3) + math.log(1 - h1) + 2 * math.log(h1)
        assert log_likelihood(ModelParams(3, u, [c1]), data) == pytest.approx(expected, rel=1e-14)
        pen = math.log(3) + 0.5 * math.log(1 - h1) + 1.5 * math.log(h1)
        assert log_penalized_likelihood(ModelParams(3, u, [c1]), data) == pytest.approx(pen, rel=1e-14)


def test_likelihood_at_N_equal_n():
    data = load_dataset("traffic")
    c, u = [0.4, 0.3, 0.5, 0.6, 0.5, 0.5, 0.5], 1.5
    log_h = log_count_probabilities(c, u)
    expected = sum(f * lh for f, lh in zip(data.freqs, log_h[1:]))
    assert log_likelihood(ModelParams(data.n, u, c), data) == pytest.approx(expected, rel=1e-13)


def direct_likelihood(N, c, u, data):
    # exact binomial coefficient and product at 50 digits
    with mpmath.workdps(50):
        m = [mpmath.mpf(1)] + [mpmath.mpf(float(v)) for v in canonical_to_ordinary(c)]
        y = [mpmath.mpf(u) ** k * m[k] / math.factorial(k) for k in range(len(m))]
        D = sum(y)
        f = [N - data.n] + data.padded(len(c))
        val = mpmath.mpf(math.comb(N, data.n))
        for fk, yk in zip(f, y):
            val *= (yk / D) ** fk
        return val


def test_traffic_likelihood_ratio_direct_product():
    data = load_dataset("traffic")
    a = ModelParams(4000, 1.3, [0.3, 0.4, 0.5, 0.6, 0.4, 0.5, 0.5])
    b = ModelParams(6500, 2.1, [0.2, 0.5, 0.3, 0.6, 0.7, 0.5, 0.4])
    ratio = direct_likelihood(a.N, a.c, a.u, data) / direct_likelihood(b.N, b.c, b.u, data)
    diff = log_likelihood(a, data) - log_likelihood(b, data)
    assert diff == pytest.approx(float(mpmath.log(ratio)), rel=1e-10)


def test_likelihood_rejects():
    data = FrequencyTable((5, 2, 1))
    with pytest.raises(ValueError, match="below"):
        log_likelihood(ModelParams(7, 1.0, [0.5] * 3), data)
    with pytest.raises(ValueError, match="truncate"):
        log_likelihood(ModelParams(10, 1.0, [0.5] * 2), data)


@settings(max_examples=200)
@given(canon, scale, st.integers(0, 500), st.data())
def test_penalized_identity(c, u, extra, data):
    freqs = data.draw(st.lists(st.integers(0, 50), min_size=len(c), max_size=len(c)))
    freqs[-1] += 1
    table = FrequencyTable(tuple(freqs))
    params = ModelParams(table.n + extra, u, c)
    diff = log_penalized_likelihood(params, table) - log_likelihood(params, table)
    expected = -0.5 * math.fsum(log_count_probabilities(c, u))
    assert diff == pytest.approx(expected, rel=1e-12, abs=1e-9)


def numeric_jacobian_g(y):
    # x_i = y_i / (1 + sum y): entries (D - y_i)/D^2 on the diagonal, -y_i/D^2 off it
    D = 1 + y.sum()
    J = -np.outer(y, np.ones_like(y)) / D ** 2
    J[np.diag_indices_from(J)] += 1 / D
    return J


def test_normalization_jacobian_one_cell():
    y1 = 2.5
    assert log_det_normalization_jacobian([y1]) == pytest.approx(-2 * math.log(1 + y1))


def test_normalization_jacobian_numeric_determinant():
    rng = np.random.default_rng(5)
    for _ in range(50):
        y = rng.uniform(0.01, 3.0, 6)
        sign, logdet = np.linalg.slogdet(numeric_jacobian_g(y))
        assert sign > 0
        assert log_det_normalization_jacobian(y) == pytest.approx(logdet, rel=1e-8)


def test_normalization_jacobian_finite_differences():
    rng = np.random.default_rng(6)
    g = lambda y: y / (1 + y.sum())
    for K in range(1, 9):
        y = rng.uniform(0.05, 2.0, K)
        h = 1e-6
        J = np.column_stack([(g(y + h * e) - g(y - h * e)) / (2 * h) for e in np.eye(K)])
        assert log_det_normalization_jacobian(y) == pytest.approx(np.linalg.slogdet(J)[1], rel=1e-6)


def test_scaling_jacobian():
    assert log_det_scaling_jacobian(1.0, 4) == pytest.approx(-math.log(1 * 2 * 6 * 24))
    assert log_det_scaling_jacobian(2.0, 3) == pytest.approx(math.log(2 * 4 / 2 * 8 / 6))


def fisher_log_det(c, u, h=1e-6):
    # multinomial Fisher information in the canonical coordinates, by central differences
    c = np.asarray(c, dtype=float)
    p = count_probabilities(c, u)
    grads = []
    for j in range(len(c)):
        e = np.zeros_like(c)
        e[j] = h
        grads.append((count_probabilities(c + e, u) - count_probabilities(c - e, u)) / (2 * h))
    G = np.array(grads)
    info = (G / p) @ G.T
    return np.linalg.slogdet(info)[1]


def test_jeffreys_prior_is_root_fisher_information():
    rng = np.random.default_rng(8)
    for _ in range(30):
        K = int(rng.integers(1, 6))
        c = rng.uniform(0.1, 0.9, K)
        u = float(rng.uniform(0.5, 8.0))
        assert log_prior_moments(c, u) == pytest.approx(0.5 * fisher_log_det(c, u), abs=1e-5)


def test_u_prior_cancels_scaling_jacobian():
    for K in (1, 3, 7, 10):
        vals = [log_prior_u(u, K, PriorConfig(u_upper=None)) + log_det_scaling_jacobian(u, K)
                for u in (0.5, 1.0, 2.0, 5.0)]
        assert max(vals) - min(vals) == pytest.approx(0.0, abs=1e-12)


def test_u_prior_values():
    cfg = PriorConfig()
    assert log_prior_u(1.0, 4, cfg) == 0.0
    assert log_prior_u(0.4, 4, cfg) == -math.inf
    assert log_prior_u(1001.0, 4, cfg) == -math.inf
    assert log_prior_u(2.0, 7, cfg) == pytest.approx(-28 * math.log(2))


def test_N_prior_values():
    assert log_prior_N(10 ** 6, PriorConfig()) == 0.0
    assert log_prior_N(100, PriorConfig(n_prior="reciprocal")) == pytest.approx(-math.log(100))
    riss = PriorConfig(n_prior="rissanen")
    assert log_prior_N(2, riss) == pytest.approx(-math.log(2))
    assert log_prior_N(1, riss) == 0.0
    # log2 16 = 4, log2 4 = 2, log2 2 = 1
    assert log_star2(16) == pytest.approx(7.0)
    assert log_prior_N(31, PriorConfig(n_upper=30)) == -math.inf
    with pytest.raises(ValueError):
        log_prior_N(0, PriorConfig())


def test_prior_config_validation():
    with pytest.raises(ValueError):
        PriorConfig(n_prior="flat")
    with pytest.raises(ValueError):
        PriorConfig(u_lower=0)
    with pytest.raises(ValueError):
        PriorConfig(u_lower=2, u_upper=1)
    with pytest.raises(ValueError):
        PriorConfig(n_upper=100).check_data(load_dataset("traffic"))


@pytest.mark.parametrize("n_prior", ["uniform", "reciprocal", "rissanen"])
def test_posterior_additivity(n_prior):
    data = load_dataset("traffic")
    cfg = PriorConfig(n_prior=n_prior)
    p = ModelParams(9000, 1.7, [0.35, 0.4, 0.6, 0.5, 0.45, 0.5, 0.55])
    full = (log_likelihood(p, data) + log_prior_moments(p.c, p.u)
            + log_prior_u(p.u, 7, cfg) + log_prior_N(p.N, cfg))
    assert log_posterior(p, data, cfg) == pytest.approx(full, rel=1e-14)
    pen = (log_penalized_likelihood(p, data) + log_jacobian_canonical_to_ordinary(p.c)
           + log_prior_u(p.u, 7, cfg) + log_prior_N(p.N, cfg))
    assert log_posterior(p, data, cfg, mode="penalized") == pytest.approx(pen, rel=1e-14)
    assert log_posterior(ModelParams(9000, 0.3, p.c), data, cfg) == -math.inf
    with pytest.raises(ValueError):
        log_posterior(p, data, cfg, mode="other")


def test_posterior_ratio_direct_product():
    data = load_dataset("traffic")
    cfg = PriorConfig(n_prior="reciprocal")
    a = ModelParams(5000, 1.2, [0.3, 0.4, 0.5, 0.6, 0.4, 0.5, 0.5])
    b = ModelParams(8000, 2.0, [0.25, 0.45, 0.5, 0.55, 0.45, 0.5, 0.6])

    def direct(p):
        lik = direct_likelihood(p.N, p.c, p.u, data)
        with mpmath.workdps(50):
            x = [mpmath.mpf(float(v)) for v in count_probabilities(p.c, p.u)]
            jeff = 1 / mpmath.sqrt(mpmath.fprod(x))
            # |J_g| |J_h| |dm/dc| u^{-K(K+1)/2} / N
            D = 1 + sum(mpmath.mpf(p.u) ** k * mpmath.mpf(float(m)) / math.factorial(k)
                        for k, m in enumerate(canonical_to_ordinary(p.c), start=1))
            jg = D ** -(len(p.c) + 1)
            jh = mpmath.fprod(mpmath.mpf(p.u) ** k / math.factorial(k) for k in range(1, 8))
            jc = mpmath.fprod((mpmath.mpf(cj) * (1 - mpmath.mpf(cj))) ** (7 - j)
                              for j, cj in enumerate(p.c[:-1], start=1))
            return lik * jeff * jg * jh * jc * mpmath.mpf(p.u) ** -28 / p.N

    with mpmath.workdps(50):
        expected = float(mpmath.log(direct(a) / direct(b)))
    diff = log_posterior(a, data, cfg) - log_posterior(b, data, cfg)
    assert diff == pytest.approx(expected, rel=1e-9)
