import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_diff, rel_err
from mktcn.errors import DimensionError, StateError
from mktcn.kan import (BSplineBasis, KanEdge, KanLayer, KanNetwork, bspline_eval, kan_backward, kan_forward,
                       phi_eval, swish)
from mktcn.numeric import make_rng


def cox_de_boor(i, p, t, x):
    """Textbook scalar recursion, half-open intervals."""
    if p == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    left = (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(i, p - 1, t, x)
    right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(i + 1, p - 1, t, x)
    return left + right


def test_knot_vector():
    b = BSplineBasis(3, 5)
    assert len(b.knots) == 5 + 1 + 2 * 3
    assert b.n_basis == 8
    np.testing.assert_allclose(np.diff(b.knots), 0.4)
    np.testing.assert_allclose(b.knots[[3, -4]], [-1.0, 1.0])


@pytest.mark.parametrize("order", [1, 2, 3])
@pytest.mark.parametrize("grid", [3, 4, 5, 6, 7, 8])
def test_partition_of_unity_and_nonnegative(order, grid):
    b = BSplineBasis(order, grid)
    B = b.eval(np.linspace(-1, 1, 1000))
    assert np.all(np.abs(B.sum(axis=1) - 1.0) <= 1e-10)
    assert np.all(B >= 0)


@pytest.mark.parametrize("order,grid", [(1, 2), (2, 4), (3, 5)])
def test_matches_scalar_recursion(order, grid):
    b = BSplineBasis(order, grid)
    for x in np.linspace(-0.999, 0.999, 37):
        expect = [cox_de_boor(i, order, b.knots, x) for i in range(b.n_basis)]
        np.testing.assert_allclose(bspline_eval(b, x), expect, atol=1e-13)


def test_symmetry_at_midpoint():
    b = BSplineBasis(3, 6)
    v = bspline_eval(b, 0.0)
    np.testing.assert_allclose(v, v[::-1], atol=1e-14)


def test_linear_hat_values():
    # order 1, G=2 on [-1, 1]: knots -2,-1,0,1,2; hats centred on -1, 0, 1
    b = BSplineBasis(1, 2)
    np.testing.assert_allclose(bspline_eval(b, -0.5), [0.5, 0.5, 0.0], atol=1e-15)
    hat = lambda c, x: max(0.0, 1.0 - abs(x - c))
    for x in np.linspace(-1, 1, 21):
        np.testing.assert_allclose(bspline_eval(b, x), [hat(c, x) for c in (-1, 0, 1)], atol=1e-14)


def test_clamping():
    b = BSplineBasis()
    np.testing.assert_array_equal(bspline_eval(b, 5.0), bspline_eval(b, 1.0))
    np.testing.assert_array_equal(bspline_eval(b, -7.0), bspline_eval(b, -1.0))


def test_derivative_matches_finite_difference():
    b = BSplineBasis(3, 5)
    x = np.linspace(-0.95, 0.95, 41)
    _, dB = b.eval_with_derivative(x)
    fd = (b.eval(x + 1e-6) - b.eval(x - 1e-6)) / 2e-6
    np.testing.assert_allclose(dB, fd, atol=1e-7)


def test_phi_examples():
    b = BSplineBasis()
    assert phi_eval(KanEdge(np.zeros(8), 1.0, 0.0), b, 0.0) == 0.0
    assert abs(phi_eval(KanEdge(np.ones(8), 0.0, 1.7), b, 0.3) - 1.7) < 1e-12
    rng = make_rng(1)
    e = KanEdge(rng.normal(size=8), 0.7, -1.3)
    for x in (-0.9, -0.2, 0.55, 2.0):
        xc = min(max(x, -1.0), 1.0)
        direct = 0.7 * x / (1 + np.exp(-x)) - 1.3 * sum(e.d[i] * cox_de_boor(i, 3, b.knots, xc)
                                                       for i in range(8))
        if xc == 1.0:  # half-open recursion misses the right end; use the limit
            direct = 0.7 * x / (1 + np.exp(-x)) - 1.3 * sum(
                e.d[i] * cox_de_boor(i, 3, b.knots, 1.0 - 1e-13) for i in range(8))
        assert abs(phi_eval(e, b, x) - direct) < 1e-10


def test_kan_forward_examples():
    layer = KanLayer(4, 3, rng=None)
    layer.params["omega_w"][...] = 0.0
    np.testing.assert_array_equal(kan_forward(layer, [0.1, 0.2, -0.3, 0.5]), np.zeros(3))
    rng = make_rng(2)
    one = KanLayer(1, 1, rng=rng)
    for x in (-0.7, 0.0, 0.4):
        assert abs(kan_forward(one, [x])[0] - phi_eval(one.edge(0, 0), one.basis, x)) < 1e-12
    layer = KanLayer(3, 2, rng=rng)
    x = rng.uniform(-1, 1, size=3)
    expect = [sum(phi_eval(layer.edge(j, i), layer.basis, x[i]) for i in range(3)) for j in range(2)]
    np.testing.assert_allclose(kan_forward(layer, x), expect, atol=1e-12)
    with pytest.raises(DimensionError):
        kan_forward(layer, np.zeros(4))


def test_kan_linear_in_coefficients():
    rng = make_rng(3)
    layer = KanLayer(3, 2, rng=rng)
    layer.params["mu"][...] = 0.0
    x = rng.uniform(-1, 1, size=(4, 3))
    d1, d2 = rng.normal(size=layer.params["d"].shape), rng.normal(size=layer.params["d"].shape)

    def out(d):
        layer.params["d"][...] = d
        return kan_forward(layer, x)

    np.testing.assert_allclose(out(2.0 * d1 - 0.5 * d2), 2.0 * out(d1) - 0.5 * out(d2), atol=1e-10)


def test_local_support():
    b = BSplineBasis(3, 5)
    edge = KanEdge(make_rng(4).normal(size=8), 0.0, 1.0)
    xs = np.linspace(-1, 1, 401)
    base = np.array([phi_eval(edge, b, x) for x in xs])
    for i in range(8):
        bumped = KanEdge(edge.d.copy(), 0.0, 1.0)
        bumped.d[i] += 1.0
        changed = np.array([phi_eval(bumped, b, x) for x in xs]) != base
        lo, hi = b.knots[i], b.knots[i + 4]
        assert np.all((xs[changed] >= lo) & (xs[changed] <= hi))


def test_kan_backward_zero_upstream_and_state():
    layer = KanLayer(3, 2, rng=make_rng(0))
    with pytest.raises(StateError):
        kan_backward(layer, np.zeros(2))
    kan_forward(layer, np.zeros((2, 3)))
    assert np.all(kan_backward(layer, np.zeros((2, 2))) == 0)
    assert all(np.all(g == 0) for g in layer.grads.values())


def test_dphi_dmu_is_swish():
    layer = KanLayer(1, 1, rng=make_rng(0))
    for x in (-2.0, -0.3, 0.0, 0.8):
        layer.zero_grad()
        kan_forward(layer, [x])
        kan_backward(layer, [1.0])
        assert layer.grads["mu"][0, 0] == swish(x)


@settings(max_examples=12, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 10_000))
def test_kan_backward_finite_differences(n_in, n_out, seed):
    rng = make_rng(seed)
    layer = KanLayer(n_in, n_out, rng=rng)
    layer.params["omega_w"][...] = rng.normal(size=(n_out, n_in))
    x = rng.uniform(-0.95, 0.95, size=(3, n_in))
    r = rng.normal(size=(3, n_out))

    def loss():
        return float(np.sum(kan_forward(layer, x) * r))

    layer.zero_grad()
    kan_forward(layer, x)
    dx = kan_backward(layer, r)
    for name, p in layer.params.items():
        assert rel_err(layer.grads[name], central_diff(loss, p)).max() < 1e-5, name
    assert rel_err(dx, central_diff(loss, x)).max() < 1e-5


def test_clamped_inputs_only_swish_gradient():
    layer = KanLayer(2, 1, rng=make_rng(0))
    x = np.array([[1.5, -3.0]])
    kan_forward(layer, x)
    dx = kan_backward(layer, np.ones((1, 1)))
    s = 1 / (1 + np.exp(-x))
    np.testing.assert_allclose(dx, layer.params["mu"] * (s + x * s * (1 - s)), atol=1e-14)


def test_deeper_network_composes_layers():
    net = KanNetwork((4, 3, 2), rng=make_rng(5))
    x = make_rng(6).uniform(-1, 1, size=(2, 4))
    manual = net.layers[1].forward(net.layers[0].forward(x))
    np.testing.assert_array_equal(net.forward(x), manual)
