import numpy as np
import pytest

from triscale.errors import (A0Singular, AmplitudeEscape, InsufficientSampling, StepCollapse,
                             UnsupportedSystem)
from triscale.solver import (AffineCoefficient, StepPolicy, SystemSpec, norm_report,
                             ode_example_derivative_norms, ode_example_exact,
                             ode_example_system, rhs_eval, simulate, time_derivs_at_zero)
from triscale.spectral import GridSpec, SpectralState, derivative, sobolev_norm, to_coeffs
from triscale.symbols import OperatorSymbol, build_wellprepared

Z2 = np.zeros((2, 2))
L_EX = OperatorSymbol(2, None, [np.diag([1.0, 0.0]), Z2])
M_EX = OperatorSymbol(2, None, [Z2, np.array([[0.0, 1.0], [1.0, 0.0]])])


def toy(eps, delta, grid):
    z = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    s = np.array([[0, 0, 0], [0, 0, 1], [0, 1, 0]], dtype=float)
    L = OperatorSymbol(3, z, [np.zeros((3, 3))])
    M = OperatorSymbol(3, None, [s])
    A0 = AffineCoefficient(np.eye(3), {2: np.eye(3)})
    A1 = AffineCoefficient(np.zeros((3, 3)), {2: np.eye(3)})
    return SystemSpec(3, 1, L, M, eps, delta, A0=A0, A_list=[A1], c0=0.5, b0=0.5)


def toy_data(sys, grid, amp=0.2):
    x = grid.points[0]
    seed = SpectralState.from_values(np.stack([0 * x, 0 * x, amp * np.cos(x)]), grid)
    return build_wellprepared(sys.Lsym, sys.Msym, grid, 1, seed, sys.delta, sys.eps)[0]


def random_state(grid, n, seed=0, modes=6):
    """Real smooth field: a few random cosines with decaying amplitudes."""
    rng = np.random.default_rng(seed)
    vals = np.zeros((n,) + grid.shape)
    for c in range(n):
        for _ in range(modes):
            k = rng.integers(-4, 5, grid.d)
            phase = np.tensordot(k, grid.points, axes=1) + rng.uniform(0, 2 * np.pi)
            vals[c] += rng.normal() / (1 + k @ k) * np.cos(phase)
    return SpectralState.from_values(vals, grid)


def test_affine_coefficient():
    a = AffineCoefficient(np.eye(2), {1: np.diag([2.0, 0.0])})
    v = np.array([[0.0, 1.0], [0.5, -0.5]])
    m = a(v)
    np.testing.assert_allclose(m[0], np.diag([2.0, 1.0]))
    np.testing.assert_allclose(m[1], np.diag([0.0, 1.0]))
    assert a.is_diagonal and not a.is_constant
    with pytest.raises(ValueError):
        AffineCoefficient(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_a0_definiteness_checked():
    with pytest.raises(A0Singular):
        SystemSpec(2, 2, L_EX, M_EX, 0.1, 0.01,
                   A0=AffineCoefficient(np.eye(2), {0: 3 * np.eye(2)}), b0=0.5)


def test_linear_energy_conserved_by_exact_path():
    g = GridSpec(2, 16)
    sys = SystemSpec(2, 2, L_EX, M_EX, 0.1, 0.01)
    u0 = random_state(g, 2)
    tr = simulate(sys, u0, 1.0, StepPolicy(n_out=5))
    assert tr.info["method"] == "exact"
    norms = [sobolev_norm(c, g) for c in tr.coeffs]
    np.testing.assert_allclose(norms, norms[0], rtol=1e-12)


def test_rk4_agrees_with_exact_on_linear_system():
    g = GridSpec(2, 16)
    sys = SystemSpec(2, 2, L_EX, M_EX, 0.5, 0.25)
    u0 = random_state(g, 2, seed=1)
    exact = simulate(sys, u0, 0.2, StepPolicy(n_out=2))
    rk = simulate(sys, u0, 0.2, StepPolicy(n_out=2, method="rk4", dt=1e-3))
    np.testing.assert_allclose(rk.coeffs, exact.coeffs, atol=1e-8)


def test_linear_time_derivatives_are_generator_powers():
    g = GridSpec(2, 8)
    sys = SystemSpec(2, 2, L_EX, M_EX, 0.5, 0.25)
    u0 = random_state(g, 2, seed=2)
    d = time_derivs_at_zero(sys, u0, 2)
    np.testing.assert_allclose(d[1].coeffs, rhs_eval(sys, u0, 0.0).coeffs)
    np.testing.assert_allclose(d[2].coeffs, rhs_eval(sys, d[1], 0.0).coeffs, atol=1e-12)


def test_ode_example_modulus_and_trajectory():
    eps, delta = 0.2, 0.02
    g = GridSpec(1, 64)
    x = g.points[0]
    a = lambda v: 1 + v
    w0 = np.cos
    z = ode_example_exact(delta, eps, a, w0, x, 0.7)
    np.testing.assert_allclose(np.abs(z), delta, rtol=1e-15)
    sys = ode_example_system(eps, delta, g)
    u0 = SpectralState.from_values(np.stack([delta + 0 * x, 0 * x, np.cos(x)]), g)
    tr = simulate(sys, u0, 0.5, StepPolicy(n_out=1, dt=delta / 100, method="rk4"))
    u, v, _ = tr.state(1).values()
    ref = ode_example_exact(delta, eps, a, w0, x, 0.5)
    assert np.abs(u + 1j * v - ref).max() <= 1e-6 * delta


def test_ode_example_norm_scaling():
    a = lambda v: 1 + v
    n2 = [ode_example_derivative_norms(e ** 3, e, a, np.cos, 1.0)[(0, 2)] for e in (0.1, 0.05)]
    assert np.log(n2[1] / n2[0]) / np.log(0.5) == pytest.approx(-1, abs=0.1)
    # cross-check against direct spectral differentiation on a resolving grid
    eps, delta = 0.2, 0.01
    g = GridSpec(1, 512)
    c = to_coeffs(ode_example_exact(delta, eps, a, np.cos, g.points[0], 1.0), g)
    direct = sobolev_norm(derivative(c, g, (2,)), g)
    closed = ode_example_derivative_norms(delta, eps, a, np.cos, 1.0)[(0, 2)]
    assert closed == pytest.approx(direct, rel=1e-8)


def test_second_time_derivative_scale():
    # |z_tt| ~ delta / delta^2 at t = 0
    a = lambda v: 1 + v
    for delta in (1e-2, 1e-3):
        nt = ode_example_derivative_norms(delta, 0.1, a, np.cos, 0.0, max_ell=0, max_k=2)
        assert delta * nt[(2, 0)] == pytest.approx(np.sqrt(2 * np.pi), rel=0.05)


def test_quasilinear_time_derivatives_match_trajectory():
    g = GridSpec(1, 32)
    sys = toy(0.3, 0.3 ** 2, g)
    u0 = toy_data(sys, g)
    d = time_derivs_at_zero(sys, u0, 2)
    np.testing.assert_allclose(d[1].coeffs, rhs_eval(sys, u0, 0.0).coeffs, atol=1e-12)
    h = 1e-4
    tr = simulate(sys, u0, 2 * h, StepPolicy(output_times=[h, 2 * h], dt=h / 10, method="rk4"))
    fd = (-3 * rhs_eval(sys, tr.state(0), 0).coeffs + 4 * rhs_eval(sys, tr.state(1), h).coeffs
          - rhs_eval(sys, tr.state(2), 2 * h).coeffs) / (2 * h)
    scale = np.abs(d[2].coeffs).max()
    assert np.abs(fd - d[2].coeffs).max() < 1e-5 * scale


def test_time_derivatives_reject_general_coefficients():
    g = GridSpec(1, 16)
    base = toy(0.3, 0.09, g)
    sys = SystemSpec(3, 1, base.Lsym, base.Msym, 0.3, 0.09,
                     A0=lambda v: np.broadcast_to(np.eye(3), v.shape[1:] + (3, 3)) *
                     (1 + 0.1 * np.tanh(v[2]))[..., None, None],
                     A_list=base.A_list, b0=0.5)
    with pytest.raises(UnsupportedSystem):
        time_derivs_at_zero(sys, toy_data(base, g), 2)


def test_norm_identity_and_sampling_guard():
    g = GridSpec(1, 32)
    sys = toy(0.3, 0.09, g)
    u0 = toy_data(sys, g)
    h = sys.delta / 5
    tr = simulate(sys, u0, 10 * h, StepPolicy(output_times=np.arange(11) * h, method="rk4"))
    rep = norm_report(tr, sys, 1)
    lhs = rep.weighted_quad ** 2 - rep.weighted_triple ** 2
    np.testing.assert_allclose(lhs, rep.ut_A0 ** 2, rtol=1e-10)
    coarse = simulate(sys, u0, 4 * sys.delta, StepPolicy(n_out=4, method="rk4"))
    with pytest.raises(InsufficientSampling):
        norm_report(coarse, sys, 1)
    assert rep.columns() == ["t", "H0", "H1", "H2", "ut_L2", "triple", "quad"]


def test_dealiasing_removes_high_modes():
    g = GridSpec(1, 32)
    sys = toy(0.3, 0.09, g)
    x = g.points[0]
    u = SpectralState.from_values(np.stack([0 * x, 0 * x, 0.5 * np.cos(10 * x)]), g)
    out = rhs_eval(sys, u, 0.0).coeffs
    high = ~g.dealias_mask
    assert np.abs(out[:, high]).max() == 0.0


def test_amplitude_escape_and_step_collapse():
    g = GridSpec(1, 16)
    sys = toy(0.3, 0.09, g)
    x = g.points[0]
    big = SpectralState.from_values(np.stack([0 * x, 0 * x, 3.0 * np.cos(x)]), g)
    with pytest.raises(AmplitudeEscape):
        rhs_eval(sys, big, 0.0)
    with pytest.raises(StepCollapse):
        simulate(sys, toy_data(sys, g), 0.1, StepPolicy(n_out=1, method="rk4", dt=1e-14))


def test_rk4_fourth_order():
    g = GridSpec(1, 32)
    sys = toy(0.3, 0.09, g)
    u0 = toy_data(sys, g)
    dt = sys.delta / 10
    ends = {m: simulate(sys, u0, 0.05, StepPolicy(n_out=1, dt=dt / m, method="rk4")).coeffs[-1]
            for m in (1, 2, 16)}
    ratio = np.abs(ends[1] - ends[16]).max() / np.abs(ends[2] - ends[16]).max()
    assert ratio >= 14


def test_trajectory_csv(tmp_path):
    g = GridSpec(1, 8)
    sys = SystemSpec(2, 1, OperatorSymbol(2, np.array([[0, 1.0], [-1.0, 0]]), [Z2]),
                     OperatorSymbol(2, None, [Z2]), 0.5, 0.25)
    tr = simulate(sys, random_state(g, 2), 0.1, StepPolicy(n_out=1))
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,component,k_index,re,im"
    assert len(lines) == 1 + 2 * 2 * 8
