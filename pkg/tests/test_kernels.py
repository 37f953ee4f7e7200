"""The compiled kernels must agree with their numpy twins."""
import numpy as np
import pytest

from opsurv import kernels
from opsurv._accel import HAVE_NUMBA
from opsurv.quadrature import build_rule

needs_numba = pytest.mark.skipif(
    not HAVE_NUMBA, reason="numba not installed or disabled by OPSURV_DISABLE_NUMBA")


@needs_numba
@pytest.mark.parametrize("weighted", [False, True])
def test_hermite_table_backends_agree(weighted):
    t = np.linspace(-30, 30, 501)
    a = kernels._hermite_table_numpy(t, 20, weighted)
    b = kernels._hermite_table_numba(t, 20, weighted)
    np.testing.assert_allclose(b, a, rtol=1e-14, atol=1e-300)


def _ranking_inputs(seed, n=12, e=2, j=4):
    rng = np.random.default_rng(seed)
    s = rng.uniform(0.1, 4, n)
    s[3] = s[5]                                   # a tie
    rule = build_rule(8)
    gram = kernels.gram_matrices(s, rule.nodes, rule.weights, j)
    coeffs = rng.normal(size=(n, e, j + 1))
    alphas = rng.dirichlet(np.ones(e), size=n)
    events = rng.integers(0, e + 1, n)
    return gram, coeffs, alphas, s, events


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_ranking_backends_agree(seed):
    args = _ranking_inputs(seed)
    la, ca, aa = kernels._ranking_numpy(*args, 1e-12)
    lb, cb, ab = kernels._ranking_numba(*args, 1e-12)
    assert lb == pytest.approx(la, rel=1e-12)
    np.testing.assert_allclose(cb, ca, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(ab, aa, rtol=1e-10, atol=1e-13)


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_concordance_backends_agree(seed):
    rng = np.random.default_rng(seed)
    n = 40
    risk = rng.integers(0, 5, (n, n)).astype(float)      # plenty of ties
    times = rng.integers(0, 10, n).astype(float)
    case = rng.random(n) < 0.6
    assert kernels._concordance_numpy(risk, times, case) == kernels._concordance_numba(risk, times, case)


def test_gram_matches_direct_quadrature():
    rule = build_rule(20)
    t = np.array([0.0, 0.7, 4.2])
    g = kernels.gram_matrices(t, rule.nodes, rule.weights, 5)
    for m, tm in enumerate(t):
        u = 0.5 * tm * (rule.nodes + 1)
        phi = kernels.hermite_table(u, 5, weighted=True)
        direct = 0.5 * tm * (phi.T * rule.weights) @ phi
        np.testing.assert_allclose(g[m], direct, rtol=1e-13, atol=1e-16)
