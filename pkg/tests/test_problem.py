import numpy as np
import pytest

from sthdg.problem import (
    check_divergence_free,
    from_symbolic,
    get_problem,
)

from oracles import fd_source, fd_gradient


def _interior_points(spec, n, rng, margin=0.08):
    lo = np.concatenate(([0.0], spec.x_lo))
    hi = np.concatenate(([spec.t_final], spec.x_hi))
    span = hi - lo
    return lo + span * (margin + (1 - 2 * margin) * rng.random((n, spec.d + 1)))


def test_get_problem_dispatch():
    assert get_problem("linear", 1.0, d=1).name == "linear-1d"
    assert get_problem("sine", 0.1, d=2).name == "sine-2d"
    assert get_problem("rotating-pulse", 1e-3).has_exact()
    with pytest.raises(ValueError):
        get_problem("rotating-pulse", 1e-3, d=1)
    with pytest.raises(ValueError):
        get_problem("no-such-problem", 1.0)


def test_spacetime_beta_has_unit_time_component(rng):
    spec = get_problem("rotating-pulse", 1e-2)
    pts = _interior_points(spec, 17, rng)
    b = spec.beta(pts)
    assert b.shape == (17, 3)
    assert np.all(b[:, 0] == 1.0)
    assert np.allclose(b[:, 1], -4 * pts[:, 2])
    assert np.allclose(b[:, 2], 4 * pts[:, 1])


def test_builtin_advection_is_divergence_free():
    for name in ("rotating-pulse", "boundary-layer", "interior-layer"):
        assert check_divergence_free(get_problem(name, 1e-2)) < 1e-8
    skew = from_symbolic(
        "skew", 1, 1.0, "t + x1", ["x1"], x_lo=[0.0], x_hi=[1.0]
    )
    assert check_divergence_free(skew) > 0.9


def test_manufactured_source_matches_finite_differences(rng):
    cases = [
        ("linear", 1.0, 1, 1e-9),
        ("linear", 1.0, 2, 1e-9),
        ("sine", 0.1, 2, 1e-8),
        ("boundary-layer", 0.2, 2, 1e-6),
        ("interior-layer", 0.2, 2, 1e-6),
    ]
    for name, eps, d, tol in cases:
        spec = get_problem(name, eps, d=d)
        pts = _interior_points(spec, 25, rng)
        fd = fd_source(spec, pts, h=1e-3)
        scale = max(1.0, np.max(np.abs(fd)))
        assert np.max(np.abs(spec.f(pts) - fd)) < tol * scale, name


def test_pulse_solves_homogeneous_equation(rng):
    # the source is identically zero and the exact solution really does
    # satisfy the equation with f = 0
    spec = get_problem("rotating-pulse", 1e-3)
    pts = _interior_points(spec, 30, rng)
    assert np.all(spec.f(pts) == 0.0)
    assert np.max(np.abs(fd_source(spec, pts, h=2e-3))) < 1e-5


def test_exact_gradient_and_dt(rng):
    spec = get_problem("sine", 0.3, d=2)
    pts = _interior_points(spec, 20, rng)
    g = fd_gradient(spec.exact, pts)
    assert np.allclose(spec.exact_grad(pts), g[:, 1:], atol=1e-8)
    assert np.allclose(spec.exact_dt(pts), g[:, 0], atol=1e-8)


def test_boundary_data_defaults(rng):
    spec = get_problem("sine", 0.1, d=1)
    pts = _interior_points(spec, 12, rng)
    pts[:, 0] = 0.0
    assert np.allclose(spec.initial_data(pts), spec.exact(pts))
    assert np.allclose(spec.dirichlet_data(pts), spec.exact(pts))


def test_neumann_data_by_plane(rng):
    spec = get_problem("sine", 0.2, d=2)
    pts = _interior_points(spec, 10, rng)

    n_init = np.array([-1.0, 0.0, 0.0])
    pts0 = pts.copy(); pts0[:, 0] = 0.0
    assert np.allclose(spec.neumann_data(pts0, n_init), spec.initial_data(pts0))

    n_final = np.array([1.0, 0.0, 0.0])
    ptsT = pts.copy(); ptsT[:, 0] = spec.t_final
    assert np.all(spec.neumann_data(ptsT, n_final) == 0.0)

    # lateral outflow face x1 = 1: beta.n = 1 > 0 so only the diffusive
    # flux survives
    n_lat = np.array([0.0, 1.0, 0.0])
    ptsL = pts.copy(); ptsL[:, 1] = 1.0
    want = spec.eps * spec.exact_grad(ptsL)[:, 0]
    assert np.allclose(spec.neumann_data(ptsL, n_lat), want, atol=1e-12)

    # inflow face x1 = 0: beta.n = -1 < 0 adds the advective term
    n_in = np.array([0.0, -1.0, 0.0])
    ptsI = pts.copy(); ptsI[:, 1] = 0.0
    bn = spec.beta(ptsI) @ n_in
    want = -spec.exact(ptsI) * bn - spec.eps * spec.exact_grad(ptsI)[:, 0]
    assert np.allclose(spec.neumann_data(ptsI, n_in), want, atol=1e-12)


def test_from_symbolic_nondivfree_source(rng):
    # manufactured source uses the conservative form, so a compressible
    # field needs the u * div(beta) correction relative to fd_source
    spec = from_symbolic(
        "compress", 1, 0.5, "t*t + x1", ["1 + x1"], x_lo=[0.0], x_hi=[1.0]
    )
    pts = _interior_points(spec, 15, rng)
    fd = fd_source(spec, pts, h=1e-4) + spec.exact(pts) * spec.beta_div(pts)
    assert np.allclose(spec.f(pts), fd, atol=1e-7)


def test_problem_domains():
    pulse = get_problem("rotating-pulse", 1e-2)
    assert np.allclose(pulse.x_lo, [-0.5, -0.5])
    assert np.allclose(pulse.x_hi, [0.5, 0.5])
    layer = get_problem("boundary-layer", 1e-2)
    assert np.allclose(layer.x_lo, [0.0, 0.0])
    assert layer.t_final == 1.0
    assert layer.dirichlet_lateral
