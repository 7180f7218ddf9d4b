"""The constrained limit system and closed-form oracles for the 2-D example.

The limit solution ``U`` lives in the range of the mode-wise projection ``P``
and satisfies

    P [A0(0) U_t + sum_j A_j(U) U_{x_j} + T_lim U - F] = 0,   (I - P) U = 0.

On ``range P`` the time-derivative coefficient is the compression
``P A0(0) P``, which is invertible there; its pseudo-inverse turns the
projected equation into an explicit evolution.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConstraintDrift, ZeroWavenumber
from .linalg import adjoint, herm_eig
from .solver import (AffineCoefficient, StepPolicy, SystemSpec, Trajectory, _rk4_step)
from .spectral import GridSpec, SpectralState, derivative, to_coeffs, to_values
from .symbols import LimitTable, apply_symbol, limit_table

log = logging.getLogger(__name__)

DRIFT_TOL = 1e-8


@dataclass
class LimitSystem:
    base: SystemSpec
    regime: object
    table: LimitTable
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, base: SystemSpec, regime, grid: GridSpec):
        return cls(base, regime, limit_table(base.Lsym, base.Msym, regime, grid))

    @property
    def grid(self):
        return self.table.grid

    @property
    def a0_zero(self) -> np.ndarray:
        """``A0(0)``."""
        return np.asarray(self.base.A0(np.zeros((self.base.n, 1)))[0], dtype=float)

    @property
    def is_linear(self):
        b = self.base
        return b.G is None and all(
            isinstance(a, AffineCoefficient) and a.is_constant for a in b.A_list)

    def metric(self):
        """Per-mode ``W = (P A0(0) P)^{+1/2}`` and ``W^+ = (P A0(0) P)^{1/2}``."""
        if "metric" not in self._cache:
            P = self.table.P
            C = P @ self.a0_zero @ P
            C = (C + adjoint(C)) / 2
            w, V = herm_eig(C)
            live = w > 1e-12 * max(1.0, float(np.abs(w).max()))
            safe = np.where(live, w, 1.0)
            Vh = adjoint(V)
            W = V @ (np.where(live, 1 / np.sqrt(safe), 0.0)[..., :, None] * Vh)
            Wp = V @ (np.where(live, np.sqrt(safe), 0.0)[..., :, None] * Vh)
            Cinv = V @ (np.where(live, 1 / safe, 0.0)[..., :, None] * Vh)
            self._cache["metric"] = (W, Wp, Cinv)
        return self._cache["metric"]

    def operator_table(self):
        """Per-mode ``P (i k.A + T_lim - H) P`` for constant fluxes."""
        grid = self.grid
        K = self.table.Tlim.copy()
        for j, a in enumerate(self.base.A_list):
            kj = grid.wavevectors[j].astype(float)
            kj = np.where(np.abs(grid.wavevectors[j]) == grid.N // 2, 0.0, kj)
            K = K + 1j * kj[..., None, None] * a.base
        if self.base.H is not None:
            K = K - self.base.H
        P = self.table.P
        return P @ K @ P

    def project(self, coeffs):
        return self.table.project(coeffs)


def constraint_defect(lim: LimitSystem, coeffs) -> float:
    """``|(I - P) U| / |U|`` over all modes."""
    off = coeffs - lim.project(coeffs)
    size = float(np.sqrt(np.sum(np.abs(coeffs) ** 2)))
    return float(np.sqrt(np.sum(np.abs(off) ** 2))) / max(size, 1e-300)


def limit_rhs(lim: LimitSystem, coeffs, t, real=True):
    """``U_t`` of the limit system (already inside ``range P``)."""
    grid = lim.grid
    b = lim.base
    _, _, Cinv = lim.metric()
    total = -apply_symbol(lim.table.Tlim, coeffs)
    if b.H is not None:
        total = total + np.einsum("ij,j...->i...", b.H.astype(complex), coeffs)
    if b.G is not None or b.A_list:
        u = to_values(coeffs, grid, real=real)
        phys = np.zeros_like(u)
        if b.G is not None:
            phys = phys + np.asarray(b.G(t, grid.points))
        for j, a in enumerate(b.A_list):
            alpha = tuple(int(i == j) for i in range(grid.d))
            ux = to_values(derivative(coeffs, grid, alpha), grid, real=real)
            phys = phys - np.einsum("...ij,j...->i...", a(u), ux)
        total = total + to_coeffs(phys, grid)
    return apply_symbol(Cinv, apply_symbol(lim.table.P, total))


def solve_limit(lim: LimitSystem, U00: SpectralState, T_end: float,
                policy: Optional[StepPolicy] = None) -> Trajectory:
    """Integrate the limit system from ``P U00``.

    Linear constant-coefficient systems use the exact per-mode exponential;
    otherwise RK4 with the projection applied after every stage.
    """
    policy = policy or StepPolicy()
    grid = lim.grid
    c0 = U00.coeffs
    proj0 = lim.project(c0)
    off = float(np.sqrt(np.sum(np.abs(c0 - proj0) ** 2)))
    if off > 1e-12 * max(float(np.sqrt(np.sum(np.abs(c0) ** 2))), 1e-300):
        log.warning("limit initial datum not in range(P); projecting (defect %.3e)", off)
    times = policy.times(T_end)
    out = np.empty((len(times),) + c0.shape, dtype=complex)
    if lim.is_linear:
        W, Wp, _ = lim.metric()
        B = W @ lim.operator_table() @ W
        lam, V = herm_eig(1j * (B - adjoint(B)) / 2)  # B = -i V diag(lam) V*
        Vh = adjoint(V)
        y0 = apply_symbol(Vh, apply_symbol(Wp, proj0))
        for i, t in enumerate(times):
            y = np.moveaxis(np.exp(1j * lam * t), -1, 0) * y0
            out[i] = apply_symbol(W @ V, y) if t > 0 else proj0
        info = {"method": "exact"}
    else:
        speed = sum(float(np.abs(a.base).max()) + sum(float(np.abs(m).max()) for m in
                                                      a.slopes.values())
                    for a in lim.base.A_list if isinstance(a, AffineCoefficient))
        omega = lim.table.max_tlim() / min(1.0, float(np.linalg.eigvalsh(lim.a0_zero).min()))
        dt_max = policy.dt or min(policy.c_cfl * grid.dx / max(speed, 1e-300),
                                  1.0 / max(omega, 1e-300), 0.05)

        def f(c, t):
            return lim.project(limit_rhs(lim, c, t, U00.real))

        c = proj0.copy()
        out[0] = c
        t = 0.0
        for i in range(1, len(times)):
            span = float(times[i]) - t
            m = max(1, math.ceil(span / dt_max - 1e-9))
            dt = span / m
            for _ in range(m):
                c = _rk4_step(f, c, t, dt)
                t += dt
            t = float(times[i])
            out[i] = c
        info = {"method": "rk4", "dt": dt_max}
    for i in range(len(times)):
        drift = constraint_defect(lim, out[i])
        if drift > DRIFT_TOL:
            raise ConstraintDrift(f"|(I-P)U| / |U| = {drift:.3e} at t={times[i]}")
    return Trajectory(times, out, grid, U00.real, info)


# -- closed forms for the 2-D example ------------------------------------------------

def dispersive_limit_exact(f_hat, t, k, ell):
    """``V_hat(t) = i k exp(i ell^2 t / k) f_hat`` of the limit equation."""
    if k == 0:
        raise ZeroWavenumber("limit solution vanishes identically at k = 0")
    return 1j * k * np.exp(1j * ell ** 2 * t / k) * f_hat


def dispersive_branches(k, ell, eps):
    """Frequencies ``omega_pm = (-k +- R) / (2 eps^2)`` with ``R = sqrt(k^2 + 4 eps^2 ell^2)``."""
    R = math.sqrt(k * k + 4 * eps * eps * ell * ell)
    return (-k + R) / (2 * eps ** 2), (-k - R) / (2 * eps ** 2), R


def dispersive_exact(f_hat, t, k, ell, eps, include_remainder=True):
    """``V_hat(t)`` of the stiff example for data ``u0 = -eps f_y``, ``v0 = f_x``.

    The two-branch expression ``i k f_hat [e^{i w+ t}(k+R) - e^{i w- t}(k-R)] / (2R)``
    matches ``V_hat(0)`` but not ``V_hat_t(0) = -ell^2 f_hat``; the exact
    solution adds ``(i ell^2 eps^2 f_hat / R)(e^{i w+ t} - e^{i w- t})``, which is
    ``O(eps^2)`` uniformly in ``t``.  ``include_remainder=False`` returns the
    two-branch expression alone.
    """
    if k == 0:
        raise ZeroWavenumber("the two-branch formula needs k != 0")
    wp, wm, R = dispersive_branches(k, ell, eps)
    ep = np.exp(1j * wp * t)
    em = np.exp(1j * wm * t)
    val = 1j * k * f_hat * (ep * (k + R) - em * (k - R)) / (2 * R)
    if include_remainder:
        val = val + 1j * ell ** 2 * eps ** 2 * f_hat / R * (ep - em)
    return val
