import os
import subprocess
import sys

import numpy as np
import pytest

from resmpc import kernels
from resmpc._accel import ENV_FLAG, HAVE_NUMBA

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


def random_case(seed, H=24, K=37):
    g = np.random.default_rng(seed)
    q = g.uniform(0, 200, (K, H))
    base = np.ascontiguousarray(g.uniform(0, 1e7) + 3600.0 * np.cumsum(q, axis=1))
    weights = np.full(K, 1.0 / K)
    return base, weights, g.uniform(0, 150, H), g.uniform(0, 120, H)


@needs_numba
@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("mu", [0.0, 1e-3])
def test_son_backends_agree(seed, mu):
    base, weights, u, w = random_case(seed)
    args = (base, weights, u, w, 0.0, 1e7, 1e-4, mu * 1e7, mu * 150.0)
    g1, g2 = np.empty(u.size), np.empty(u.size)
    f1 = kernels.son_value_grad_numba(*args, g1)
    f2 = kernels.son_value_grad_numpy(*args, g2)
    assert f1 == pytest.approx(f2, rel=1e-12)
    assert np.allclose(g1, g2, rtol=1e-9, atol=1e-12)
    assert kernels.son_value_numba(*args) == pytest.approx(f1, rel=1e-14)
    assert kernels.son_value_numpy(*args) == pytest.approx(f2, rel=1e-14)


@needs_numba
@pytest.mark.parametrize("seed", range(10))
def test_quad_backends_agree(seed):
    base, weights, u, w = random_case(seed)
    g1, g2 = np.empty(u.size), np.empty(u.size)
    f1 = kernels.quad_value_grad_numba(base, weights, u, w, 0.0, 1e7, 0.5, g1)
    f2 = kernels.quad_value_grad_numpy(base, weights, u, w, 0.0, 1e7, 0.5, g2)
    assert f1 == pytest.approx(f2, rel=1e-12)
    assert np.allclose(g1, g2, rtol=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_son_gradient_matches_finite_differences(seed):
    base, weights, u, w = random_case(seed, H=8, K=5)
    mu = (1e-2 * 1e7, 1e-2 * 150.0)
    g = np.empty(u.size)
    kernels.son_value_grad_numpy(base, weights, u, w, 0.0, 1e7, 1e-4, *mu, g)
    h = 1e-5
    fd = np.array([
        (kernels.son_value_numpy(base, weights, u + h * e, w, 0.0, 1e7, 1e-4, *mu)
         - kernels.son_value_numpy(base, weights, u - h * e, w, 0.0, 1e7, 1e-4, *mu)) / (2 * h)
        for e in np.eye(u.size)
    ])
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_smoothing_bounds_exact_value_from_above():
    base, weights, u, w = random_case(3)
    exact = kernels.son_value_numpy(base, weights, u, w, 0.0, 1e7, 1e-4, 0.0, 0.0)
    prev = np.inf
    for mu in (1e-2, 1e-3, 1e-4, 1e-6):
        v = kernels.son_value_numpy(base, weights, u, w, 0.0, 1e7, 1e-4, mu * 1e7, mu * 150.0)
        assert exact <= v <= prev
        prev = v


@needs_numba
def test_mfista_backends_agree():
    base, weights, u, w = random_case(4, H=12, K=9)
    mus = np.array([1e-2, 1e-3, 1e-4])
    results = []
    for loop in (kernels.mfista_son_numba, kernels.mfista_son_numpy):
        x = np.full(12, 0.5)
        hist = np.empty(5000)
        out = loop(base, weights, w, 0.0, 1e7, 1e-4, 0.0, 150.0, 1.0, x, mus, 1e-9, 4000, 1.0, hist)
        results.append((x, out))
    (x1, o1), (x2, o2) = results
    assert np.allclose(x1, x2, atol=1e-8)
    assert o1[2] == o2[2]


def test_env_flag_selects_numpy_backend():
    env = {**os.environ, ENV_FLAG: "1"}
    code = "from resmpc import kernels; print(kernels.BACKEND, kernels.son_value is kernels.son_value_numpy)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


def test_solve_identical_plan_on_numpy_backend():
    code = (
        "import numpy as np\n"
        "from resmpc.controller import MpcProblem, solve\n"
        "g = np.random.default_rng(1)\n"
        "p = MpcProblem(5e6, g.uniform(0, 150, (24, 30)), g.uniform(0, 120, 24), 0.0, 100.0, 0.0, 1e7)\n"
        "print(repr(solve(p).objective_value))\n"
    )
    vals = []
    for flag in ("1", "0"):
        env = {**os.environ, ENV_FLAG: flag}
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        vals.append(float(out.stdout))
    assert vals[0] == pytest.approx(vals[1], rel=1e-9)
