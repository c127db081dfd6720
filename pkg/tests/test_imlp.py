import warnings

import numpy as np
import pytest

from hopmix.imlp import (
    FpaTrace,
    IMlpModule,
    NonContractiveWarning,
    convergence_probe,
    fixed_point_iterate,
    local_lipschitz,
    module_levels,
    nested_fpa,
    to_hopfield_system,
)
from hopmix.nn_core import Tensor, add, gelu_np, grad_check, matmul, mul, no_grad, tsum
from hopmix.specnorm import power_iteration, set_frozen
from oracles import affine_fixed_point, fd_jacobian


def module(seed=0, d_vis=6, d_mid=8, d_hid=16, n_iter=3, mode="spec"):
    return IMlpModule(d_vis, d_mid, d_hid, n_iter=n_iter, mode=mode, seed=seed)


def test_hidden_width_rounding():
    assert IMlpModule.hidden_width(64, 1.0) == 64
    assert IMlpModule.hidden_width(10, 0.25) == 3  # 2.5 rounds half up
    assert IMlpModule.hidden_width(7, 0.5) == 4


def test_zero_iterations_return_z():
    m = module()
    z = np.random.default_rng(0).standard_normal((3, 8))
    x, trace = m.fpa(z, n=0, record=True)
    np.testing.assert_array_equal(x.data, z)
    assert trace.n == 0
    with pytest.raises(ValueError):
        fixed_point_iterate(m.contractive_f, Tensor(z), -1)


def test_affine_fixed_point_limit():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((5, 5))
    a *= 0.5 / np.linalg.norm(a, 2)
    b = rng.standard_normal(5)
    z = rng.standard_normal(5)
    f = lambda x: add(matmul(x, Tensor(a.T)), Tensor(b))
    x, _ = fixed_point_iterate(f, Tensor(z), 80)
    np.testing.assert_allclose(x.data, affine_fixed_point(a, b, z), atol=1e-12)


def test_trace_diagnostics():
    its = [np.array([1.0, 0.0]), np.array([1.0, 1.0]), np.array([1.0, 1.0])]
    tr = FpaTrace(its)
    np.testing.assert_allclose(tr.norm, [1 / np.sqrt(2), 0.0])
    np.testing.assert_allclose(tr.cos, [1 / np.sqrt(2), 1.0])
    tr0 = FpaTrace([np.zeros(2), np.zeros(2)])
    assert tr0.cos[0] == 1.0


def test_residual_forward_inverts_fpa():
    m = module(n_iter=60).eval()
    set_frozen(m)
    z = np.random.default_rng(2).standard_normal((4, 8))
    x, _ = m.fpa(z)
    np.testing.assert_allclose(m.residual_forward(x).data, z, atol=1e-12)


def test_local_lipschitz_matches_finite_differences():
    m = module(seed=3)
    for layer in (m.fc_sn1, m.fc_sn2):
        layer.weight.data *= 20.0
        for _ in range(50):
            layer.update()
    x = np.random.default_rng(4).standard_normal(8)
    f = lambda r: m.contractive_f(Tensor(r[None, :])).data[0]
    ref = np.linalg.norm(fd_jacobian(f, x), 2)
    assert local_lipschitz(m, x[None, :]) == pytest.approx(ref, rel=1e-7)
    assert local_lipschitz(m, x[None, :]) < 0.81 * 1.13**2  # |gelu'| <= 1.13, two 0.9-capped layers


def test_forward_structure():
    m = module(seed=5).eval()
    set_frozen(m)
    v = np.random.default_rng(6).standard_normal((2, 6))
    out = m(v).data
    x = m.inner_state(v)
    np.testing.assert_allclose(out, v + gelu_np(x) @ m.fc2.weight.data.T + m.fc2.bias.data, atol=1e-13)


def test_module_gradients():
    m = module(seed=7).eval()
    set_frozen(m)
    v = Tensor(np.random.default_rng(8).standard_normal((3, 6)))
    w = np.random.default_rng(9).standard_normal((3, 6))
    res = grad_check(lambda: tsum(mul(m(v), Tensor(w))), m.parameters(), step=1e-3, order=4,
                     tolerance=1e-7)
    assert res.ok, res.per_param


def test_training_forward_refreshes_power_iteration_once():
    m = module(seed=10)
    before = dict(m.named_buffers())["fc_sn1.u"].copy()
    _, expected, _ = power_iteration(m.fc_sn1.weight.data, before, m.fc_sn1.n_power)
    m.train()
    m(np.random.default_rng(0).standard_normal((2, 6)))
    np.testing.assert_array_equal(dict(m.named_buffers())["fc_sn1.u"], expected)


def test_convergence_probe_is_geometric():
    m = module(seed=11, n_iter=8).eval()
    traces = convergence_probe(m, np.random.default_rng(1).standard_normal((3, 6)))
    assert len(traces) == 3
    for tr in traces:
        assert tr.n == 8
        assert np.all(tr.norm[1:] <= tr.norm[:-1] * 0.95 + 1e-15)
        assert tr.cos[-1] > 0.999


def test_nested_fpa_single_level_equals_flat():
    m = module(seed=12, n_iter=5).eval()
    z = Tensor(np.random.default_rng(2).standard_normal((2, 8)))
    with no_grad():
        flat, _ = m.fpa(z)
        nested = nested_fpa(module_levels(m), z, [5])
    np.testing.assert_array_equal(flat.data, nested.data)


def test_nested_fpa_warns_when_not_contractive():
    f = lambda x: mul(x, 2.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        nested_fpa([(f, lambda y: y)], Tensor(np.ones(3)), [4])
    assert any(issubclass(w.category, NonContractiveWarning) for w in caught)
    with pytest.raises(ValueError):
        nested_fpa([], Tensor(np.ones(3)), [])


def test_to_hopfield_requires_plain_module():
    m = module(seed=13)
    m.fc1.bias.data[0] = 0.1
    with pytest.raises(ValueError):
        to_hopfield_system(m)
    with pytest.raises(ValueError):
        to_hopfield_system(module(mode="none"))
