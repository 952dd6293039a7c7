import numpy as np
import pytest

from sthdg import fe


def test_gauss_exactness():
    # n-point Gauss integrates monomials exactly up to degree 2n - 1
    for n in range(1, 8):
        x, w = fe.gauss_1d(n)
        for k in range(2 * n):
            exact = 2.0 / (k + 1) if k % 2 == 0 else 0.0
            assert abs(w @ x**k - exact) < 1e-13


def test_gauss_rejects_zero_points():
    with pytest.raises(ValueError):
        fe.gauss_1d(0)


def test_lobatto_nodes():
    for p in range(1, 6):
        nodes = fe.lobatto_nodes(p)
        assert len(nodes) == p + 1
        assert nodes[0] == -1.0 and nodes[-1] == 1.0
        assert np.all(np.diff(nodes) > 0)
        # symmetric about the origin
        assert np.allclose(nodes, -nodes[::-1], atol=1e-14)


def test_tensor_rule_shapes_and_weights():
    r = fe.tensor_rule((3, 4))
    assert r.points.shape == (12, 2)
    assert abs(r.weights.sum() - 4.0) < 1e-13  # measure of [-1,1]^2

    point_rule = fe.tensor_rule(())
    assert point_rule.points.shape == (1, 0)
    assert point_rule.weights.tolist() == [1.0]


def test_basis_is_nodal(rng):
    for degrees in ((1,), (2, 1), (1, 2, 2)):
        basis = fe.get_basis(degrees)
        vals = basis.eval(basis.nodes).values
        assert np.allclose(vals, np.eye(basis.n_basis), atol=1e-12)


def test_partition_of_unity(rng):
    for degrees in ((1, 1), (1, 2), (1, 3, 2)):
        basis = fe.get_basis(degrees)
        pts = rng.uniform(-1, 1, size=(40, len(degrees)))
        bv = basis.eval(pts)
        assert np.allclose(bv.values.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(bv.grad.sum(axis=1), 0.0, atol=1e-11)


def test_gradient_matches_finite_differences(rng):
    # central differences with step 1e-6 must agree to 1e-8
    h = 1e-6
    for degrees in ((1, 2), (2, 2, 1)):
        basis = fe.get_basis(degrees)
        pts = rng.uniform(-0.9, 0.9, size=(15, len(degrees)))
        bv = basis.eval(pts)
        for a in range(len(degrees)):
            pp = pts.copy(); pp[:, a] += h
            pm = pts.copy(); pm[:, a] -= h
            fd = (basis.eval(pp).values - basis.eval(pm).values) / (2 * h)
            assert np.max(np.abs(bv.grad[:, :, a] - fd)) < 1e-8


def test_second_derivative_matches_finite_differences(rng):
    h = 1e-4
    for degrees in ((1, 3), (1, 2, 2)):
        basis = fe.get_basis(degrees)
        pts = rng.uniform(-0.8, 0.8, size=(10, len(degrees)))
        bv = basis.eval(pts)
        for a in range(len(degrees)):
            pp = pts.copy(); pp[:, a] += h
            pm = pts.copy(); pm[:, a] -= h
            fd = (basis.eval(pp).values - 2 * bv.values
                  + basis.eval(pm).values) / h**2
            assert np.max(np.abs(bv.second[:, :, a] - fd)) < 1e-6


def test_box_jacobian():
    lo = np.array([0.0, 0.0, -1.0])
    hi = np.array([2.0, 1.0, 1.0])
    # volume of the box divided by the reference volume 2^3
    assert abs(fe.box_jacobian(lo, hi) - 4.0 / 8.0) < 1e-15


def test_degree_zero_axis():
    basis = fe.get_basis((0, 1))
    pts = np.array([[0.3, -0.2], [-0.7, 0.5]])
    bv = basis.eval(pts)
    assert basis.n_basis == 2
    assert np.allclose(bv.grad[:, :, 0], 0.0)
