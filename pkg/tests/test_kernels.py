import os
import subprocess
import sys

import numpy as np
import pytest
import sympy as sp

from hormander_mp import kernels
from hormander_mp.flows import compiled_fields, compiled_flow, exponential_map
from hormander_mp.operator_core import PRESETS, preset

IMPL = kernels.implementations()
needs_ext = pytest.mark.skipif(IMPL["cython"] is None, reason="compiled extension not built")


def test_backend_selection():
    code = "import hormander_mp.kernels as k; print(k.BACKEND)"
    pure = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                          env=dict(os.environ, HORMANDER_MP_PURE="1"), check=True)
    assert pure.stdout.strip() == "python"
    env = {k: v for k, v in os.environ.items() if k != "HORMANDER_MP_PURE"}
    auto = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True)
    assert auto.stdout.strip() == ("python" if IMPL["cython"] is None else "cython")


def test_heisenberg_exponential_closed_form():
    # exp(w1 X1 + w2 X2)(s) = s + (w1, w2, (s1 w2 - s2 w1) / 2)
    flows = exponential_map(preset("heisenberg"))
    s1, s2, s3, w1, w2 = sp.symbols("s1 s2 s3 w1 w2")
    names = {"x1": s1, "x2": s2, "x3": s3, "x4": w1, "x5": w2}
    got = [sp.sympify(f.to_string(), locals=names) for f in flows]
    want = [s1 + w1, s2 + w2, s3 + (s1 * w2 - s2 * w1) / 2]
    assert all(sp.expand(a - b) == 0 for a, b in zip(got, want))


def test_flow_matches_rk4():
    spec = preset("grushin3")
    f = compiled_flow(spec)
    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(5, 3))
    W = rng.normal(size=(5, 1, 3))
    end = kernels.flow_chain(x0, W, f.exps, f.coefs, f.out_index, f.max_degree, False)
    end = end[0] if isinstance(end, tuple) else end
    exps, coefs, comp, fld = compiled_fields(spec)
    norms = np.linalg.norm(W[:, 0], axis=1)
    ctrl = (W[:, 0] / norms[:, None])[:, None, :]
    rk = kernels.rk4_paths(x0.copy(), norms[:, None], ctrl, 400, exps, coefs, comp, fld, int(exps.max()))
    assert np.allclose(end, rk, atol=1e-10)


@needs_ext
@pytest.mark.parametrize("name", sorted(PRESETS))
def test_backends_agree(name):
    spec = preset(name)
    f = compiled_flow(spec)
    rng = np.random.default_rng(1)
    x0 = rng.normal(size=(50, spec.N))
    W = rng.normal(size=(50, 6, spec.m)) / 6
    py = IMPL["python"].flow_chain(x0, W, f.exps, f.coefs, f.out_index, f.max_degree, True)
    cy = IMPL["cython"].flow_chain(x0, W, f.exps, f.coefs, f.out_index, f.max_degree, True)
    for a, b in zip(py, cy):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    exps, coefs, comp, fld = compiled_fields(spec)
    dur = rng.uniform(0.1, 0.5, size=(4, 3))
    ctrl = rng.normal(size=(4, 3, spec.m))
    ctrl /= np.linalg.norm(ctrl, axis=2, keepdims=True)
    deg = int(exps.max(initial=0))
    a = IMPL["python"].rk4_paths(x0[:4].copy(), dur, ctrl, 30, exps, coefs, comp, fld, deg)
    b = IMPL["cython"].rk4_paths(x0[:4].copy(), dur, ctrl, 30, exps, coefs, comp, fld, deg)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_jacobian_finite_difference():
    spec = preset("heisenberg")
    f = compiled_flow(spec)
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=(1, 3))
    W = rng.normal(size=(1, 4, 2))
    end, J = kernels.flow_chain(x0, W, f.exps, f.coefs, f.out_index, f.max_degree, True)
    eps = 1e-6
    for k in range(8):
        Wp = W.copy().reshape(1, 8)
        Wp[0, k] += eps
        e2 = kernels.flow_chain(x0, Wp.reshape(1, 4, 2), f.exps, f.coefs, f.out_index, f.max_degree, False)
        e2 = e2[0] if isinstance(e2, tuple) else e2
        assert np.allclose((e2 - end)[0] / eps, J[0][:, k], atol=1e-5)

