import logging

import numpy as np
import pytest

from triscale.errors import ZeroWavenumber
from triscale.limit import (LimitSystem, constraint_defect, dispersive_branches,
                            dispersive_exact, dispersive_limit_exact, solve_limit)
from triscale.solver import AffineCoefficient, StepPolicy, SystemSpec, simulate
from triscale.spectral import GridSpec, SpectralState, derivative, to_coeffs
from triscale.symbols import OperatorSymbol, RateBetween, RateMatch, build_wellprepared

Z2 = np.zeros((2, 2))
L_EX = OperatorSymbol(2, None, [np.diag([1.0, 0.0]), Z2])
M_EX = OperatorSymbol(2, None, [Z2, np.array([[0.0, 1.0], [1.0, 0.0]])])


def setup(eps, N=16):
    g = GridSpec(2, N)
    x, y = g.points
    fh = to_coeffs(np.cos(x) * np.cos(2 * y), g)
    seed = SpectralState(np.stack([np.zeros_like(fh), derivative(fh, g, (1, 0))]), g)
    sys = SystemSpec(2, 2, L_EX, M_EX, eps, eps ** 2)
    u0, chain = build_wellprepared(L_EX, M_EX, g, 1, seed, eps ** 2, eps)
    return g, fh, sys, u0, chain


def test_limit_run_matches_closed_form():
    g, fh, sys, _, chain = setup(0.1)
    lim = LimitSystem.build(sys, RateMatch(1), g)
    tr = solve_limit(lim, chain[0], 1.0, StepPolicy(n_out=10))
    for i, t in enumerate(tr.times):
        for k, ell in ((1, 2), (-1, 2), (1, -2), (-1, -2)):
            idx = g.mode_index((k, ell))
            ref = dispersive_limit_exact(fh[idx], t, k, ell)
            assert abs(tr.coeffs[i][1][idx] - ref) < 1e-12
        assert constraint_defect(lim, tr.coeffs[i]) < 1e-12


def test_rk4_limit_path_agrees_with_exact():
    g, _, sys, _, chain = setup(0.1)
    lin = LimitSystem.build(sys, RateMatch(1), g)
    exact = solve_limit(lin, chain[0], 0.2, StepPolicy(n_out=2))
    lin._cache.clear()
    ql = SystemSpec(2, 2, L_EX, M_EX, 0.1, 0.01,
                    A_list=[AffineCoefficient(Z2, {0: 1e-12 * np.eye(2)}),
                            AffineCoefficient(Z2)])
    rk = solve_limit(LimitSystem.build(ql, RateMatch(1), g), chain[0], 0.2,
                     StepPolicy(n_out=2, dt=1e-3))
    assert rk.info["method"] == "rk4"
    np.testing.assert_allclose(rk.coeffs, exact.coeffs, atol=1e-9)


def test_full_simulation_matches_dispersion_oracle():
    eps = 0.05
    g, fh, sys, u0, _ = setup(eps)
    tr = simulate(sys, u0, 1.0, StepPolicy(n_out=10))
    for i, t in enumerate(tr.times):
        for k, ell in ((1, 2), (-1, -2)):
            idx = g.mode_index((k, ell))
            ref = dispersive_exact(fh[idx], t, k, ell, eps)
            assert abs(tr.coeffs[i][1][idx] - ref) < 1e-8


def test_dispersion_remainder_is_small():
    eps = 0.05
    f = 0.25
    with_r = dispersive_exact(f, 0.7, 1, 2, eps)
    without = dispersive_exact(f, 0.7, 1, 2, eps, include_remainder=False)
    assert 0 < abs(with_r - without) < 10 * eps ** 2
    wp, wm, R = dispersive_branches(1, 2, eps)
    assert wp == pytest.approx(2 ** 2 / 1, rel=0.05)  # slow branch -> ell^2 / k
    assert R == pytest.approx(np.sqrt(1 + 4 * eps ** 2 * 4))


def test_zero_wavenumber_rejected():
    with pytest.raises(ZeroWavenumber):
        dispersive_limit_exact(1.0, 0.1, 0, 2)
    with pytest.raises(ZeroWavenumber):
        dispersive_exact(1.0, 0.1, 0, 2, 0.1)


def test_off_range_data_projected_with_warning(caplog):
    g, _, sys, u0, _ = setup(0.1)
    lim = LimitSystem.build(sys, RateMatch(1), g)
    with caplog.at_level(logging.WARNING):
        tr = solve_limit(lim, u0, 0.1, StepPolicy(n_out=1))
    assert "projecting" in caplog.text
    assert constraint_defect(lim, tr.coeffs[-1]) < 1e-12


def test_between_regime_limit_is_stationary():
    g, _, sys, _, _ = setup(0.1)
    x, y = g.points
    datum = SpectralState.from_values(np.stack([0 * x, np.cos(x)]), g)
    lim = LimitSystem.build(sys, RateBetween(1), g)
    assert lim.table.max_tlim() == 0
    tr = solve_limit(lim, datum, 1.0, StepPolicy(n_out=3))
    np.testing.assert_allclose(tr.coeffs[-1], datum.coeffs, atol=1e-14)
