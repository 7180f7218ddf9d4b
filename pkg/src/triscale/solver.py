"""Spectral simulation of the stiff two-parameter system on the torus.

The system is

    A0(eps u) u_t + sum_j A_j(u) u_{x_j} + (1/delta) L u + (1/eps) M u = F(t, x, u)

with ``F = G + H u``.  Linear constant-coefficient systems are advanced with
the exact per-mode exponential; everything else uses classical RK4 on the
pseudo-spectral right-hand side with a step restricted by ``delta`` and a CFL
bound.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import (A0Singular, AmplitudeEscape, DimensionMismatch, InsufficientSampling,
                     StepCollapse, UnsupportedSystem)
from .linalg import adjoint, herm_eig
from .spectral import (GridSpec, SpectralState, derivative, multi_indices, sobolev_norm,
                       to_coeffs, to_values)
from .symbols import OperatorSymbol, apply_symbol


@dataclass
class AffineCoefficient:
    """Matrix field ``base + sum_c v_c * slopes[c]`` of a pointwise vector ``v``.

    ``slopes`` maps a component index to an ``n x n`` matrix; components not
    listed do not enter.  All matrices must be real symmetric.
    """

    base: np.ndarray
    slopes: dict = field(default_factory=dict)

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        n = self.base.shape[0]
        self.slopes = {int(c): np.asarray(m, dtype=float) for c, m in self.slopes.items()}
        for m in [self.base, *self.slopes.values()]:
            if m.shape != (n, n):
                raise DimensionMismatch(f"coefficient matrix of shape {m.shape}, expected {(n, n)}")
            if np.abs(m - m.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(m).max()):
                raise ValueError("coefficient matrices must be symmetric")
        for c in self.slopes:
            if not 0 <= c < n:
                raise DimensionMismatch(f"slope for component {c} outside 0..{n - 1}")

    @classmethod
    def constant(cls, m):
        return cls(m, {})

    @property
    def n(self):
        return self.base.shape[0]

    @property
    def is_constant(self):
        return not any(np.any(m) for m in self.slopes.values())

    @property
    def is_diagonal(self):
        mats = [self.base, *self.slopes.values()]
        return all(np.count_nonzero(m - np.diag(np.diag(m))) == 0 for m in mats)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        """Evaluate at pointwise values ``v`` of shape ``(n, *grid)``; returns ``(*grid, n, n)``."""
        out = np.broadcast_to(self.base, v.shape[1:] + self.base.shape).astype(v.dtype)
        out = out.copy()
        for c, m in self.slopes.items():
            out += v[c][..., None, None] * m
        return out


def _as_coefficient(obj, n):
    if obj is None:
        return None
    if isinstance(obj, AffineCoefficient) or callable(obj):
        return obj
    return AffineCoefficient.constant(np.asarray(obj, dtype=float).reshape(n, n))


@dataclass
class SystemSpec:
    """Coefficients and parameters of the stiff system.

    ``A0`` receives ``eps * u`` and ``A_list[j]`` receives ``u``; either may be
    an :class:`AffineCoefficient`, a constant matrix, or a callable mapping
    pointwise values ``(n, *grid)`` to matrices ``(*grid, n, n)``.  ``G`` is a
    callable ``G(t, points)`` returning ``(n, *grid)`` values; ``H`` is a
    constant matrix.
    """

    n: int
    d: int
    Lsym: OperatorSymbol
    Msym: OperatorSymbol
    eps: float
    delta: float
    A0: object = None
    A_list: Sequence = ()
    G: Optional[Callable] = None
    H: Optional[np.ndarray] = None
    c0: float = 0.5
    b0: float = 1.0
    dealias: bool = True
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not (self.eps > 0 and self.delta > 0):
            raise ValueError("eps and delta must be positive")
        if self.Lsym.n != self.n or self.Msym.n != self.n:
            raise DimensionMismatch("symbol component counts differ from n")
        self.A0 = _as_coefficient(self.A0, self.n) or AffineCoefficient.constant(np.eye(self.n))
        A = [_as_coefficient(a, self.n) for a in self.A_list]
        if A and len(A) != self.d:
            raise DimensionMismatch(f"need {self.d} flux matrices, got {len(A)}")
        self.A_list = A
        if self.H is not None:
            self.H = np.asarray(self.H, dtype=float).reshape(self.n, self.n)
        self._check_a0()

    def _check_a0(self):
        """Sample ``A0(v)`` on ``|v| <= b0`` and require eigenvalues ``>= c0``."""
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(self.n, 64))
        pts *= self.b0 * rng.uniform(0, 1, 64) ** (1 / self.n) / np.linalg.norm(pts, axis=0)
        for sign in (1, -1):
            pts = np.concatenate([pts, sign * self.b0 * np.eye(self.n)], axis=1)
        mats = self.A0(pts)
        if np.abs(mats - np.swapaxes(mats, -1, -2)).max() > 1e-12:
            raise ValueError("A0 is not symmetric at sampled points")
        w, _ = herm_eig(mats)
        if float(np.min(w)) < self.c0:
            raise A0Singular(
                f"min eigenvalue {float(np.min(w)):.3e} of A0 below c0={self.c0} on |v|<=b0")

    @property
    def a0_constant(self):
        return isinstance(self.A0, AffineCoefficient) and self.A0.is_constant

    @property
    def is_linear(self):
        """Constant coefficients and no inhomogeneous forcing."""
        fluxes = all(isinstance(a, AffineCoefficient) and a.is_constant for a in self.A_list)
        return self.a0_constant and fluxes and self.G is None

    def with_params(self, eps=None, delta=None):
        """Copy with new small parameters."""
        return SystemSpec(self.n, self.d, self.Lsym, self.Msym,
                          self.eps if eps is None else eps,
                          self.delta if delta is None else delta,
                          self.A0, list(self.A_list), self.G, self.H,
                          self.c0, self.b0, self.dealias)

    # -- per-grid tables -----------------------------------------------------

    def stiff_table(self, grid: GridSpec) -> np.ndarray:
        key = ("stiff", grid)
        if key not in self._cache:
            self._cache[key] = (self.Lsym.on_grid(grid) / self.delta
                                + self.Msym.on_grid(grid) / self.eps)
        return self._cache[key]

    def generator_table(self, grid: GridSpec) -> np.ndarray:
        """Per-mode ``-A0^{-1}(i k.A + L/delta + M/eps - H)`` for linear systems."""
        if not self.is_linear:
            raise UnsupportedSystem("generator table only exists for linear systems")
        key = ("gen", grid)
        if key not in self._cache:
            K = self.stiff_table(grid).copy()
            for j, a in enumerate(self.A_list):
                kj = grid.wavevectors[j].astype(float)
                kj = np.where(np.abs(grid.wavevectors[j]) == grid.N // 2, 0.0, kj)
                K = K + 1j * kj[..., None, None] * a.base
            if self.H is not None:
                K = K - self.H
            a0inv = np.linalg.inv(self.A0.base)
            self._cache[key] = -np.einsum("ij,...jk->...ik", a0inv, K)
        return self._cache[key]


def _solve_a0(sys: SystemSpec, v: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Pointwise ``A0(eps u)^{-1} rhs`` with a definiteness check."""
    if sys.a0_constant:
        return np.einsum("ij,j...->i...", np.linalg.inv(sys.A0.base), rhs)
    mats = sys.A0(sys.eps * v)
    if isinstance(sys.A0, AffineCoefficient) and sys.A0.is_diagonal:
        diag = np.diagonal(mats, axis1=-2, axis2=-1)
        lo = float(diag.min())
        if lo < sys.c0 / 2:
            raise A0Singular(f"A0 eigenvalue {lo:.3e} fell below c0/2")
        return rhs / np.moveaxis(diag, -1, 0)
    w, V = herm_eig(mats)
    lo = float(np.min(w))
    if lo < sys.c0 / 2:
        raise A0Singular(f"A0 eigenvalue {lo:.3e} fell below c0/2")
    r = np.moveaxis(rhs, 0, -1)[..., None]
    sol = V @ ((adjoint(V) @ r) / w[..., None])
    return np.moveaxis(sol[..., 0], -1, 0)


def _physical(c, grid, real):
    return to_values(c, grid, real=real)


def rhs_eval(sys: SystemSpec, state: SpectralState, t: float) -> SpectralState:
    """Time derivative ``u_t`` of the full system at ``state``."""
    grid = state.grid
    if state.n != sys.n:
        raise DimensionMismatch(f"state has {state.n} components, system {sys.n}")
    c = state.coeffs
    if sys.is_linear:
        return state.copy(apply_symbol(sys.generator_table(grid), c), time=t)
    mask = grid.dealias_mask if sys.dealias else None
    if mask is not None:
        c = c * mask
    u = _physical(c, grid, state.real)
    amp = sys.eps * float(np.sqrt(np.sum(np.abs(u) ** 2, axis=0)).max())
    if amp > sys.b0:
        raise AmplitudeEscape(f"max |eps u| = {amp:.3e} exceeds b0 = {sys.b0}")
    total = -apply_symbol(sys.stiff_table(grid), c)
    if sys.H is not None:
        total = total + np.einsum("ij,j...->i...", sys.H.astype(complex), c)
    rhs = _physical(total, grid, state.real)
    if sys.G is not None:
        rhs = rhs + np.asarray(sys.G(t, grid.points))
    for j, a in enumerate(sys.A_list):
        alpha = tuple(1 if i == j else 0 for i in range(grid.d))
        ux = _physical(derivative(c, grid, alpha), grid, state.real)
        rhs = rhs - np.einsum("...ij,j...->i...", a(u), ux)
    ut = _solve_a0(sys, u, rhs)
    out = to_coeffs(ut, grid)
    if mask is not None:
        out = out * mask
    return state.copy(out, time=t)


# -- trajectories ---------------------------------------------------------------

@dataclass
class Trajectory:
    times: np.ndarray
    coeffs: np.ndarray  # (nt, n, *grid)
    grid: GridSpec
    real: bool = True
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def state(self, i) -> SpectralState:
        return SpectralState(self.coeffs[i], self.grid, float(self.times[i]), self.real)

    def to_csv(self, path, float_fmt="{:.17g}"):
        """Write rows ``(t, component, k-index, Re, Im)``; k-index is the flat mode index."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "component", "k_index", "re", "im"])
            flat = self.coeffs.reshape(len(self.times), self.coeffs.shape[1], -1)
            for i, t in enumerate(self.times):
                for comp in range(flat.shape[1]):
                    for kidx, v in enumerate(flat[i, comp]):
                        w.writerow([float_fmt.format(t), comp, kidx,
                                    float_fmt.format(v.real), float_fmt.format(v.imag)])


@dataclass
class StepPolicy:
    """Output times and step control.

    ``dt`` forces a fixed RK4 step (rounded down so output times are hit
    exactly); otherwise ``dt = min(c_stiff * delta, c_cfl * dx / speed)``.
    ``method`` is ``"auto"``, ``"exact"`` or ``"rk4"``.
    """

    output_times: Optional[Sequence[float]] = None
    n_out: int = 10
    c_stiff: float = 0.1
    c_cfl: float = 0.5
    dt: Optional[float] = None
    method: str = "auto"
    min_dt: float = 1e-12

    def times(self, T_end):
        if self.output_times is not None:
            ts = np.asarray(sorted(set(float(t) for t in self.output_times) | {0.0}))
            if ts[-1] > T_end + 1e-15 or ts[0] < 0:
                raise ValueError("output times must lie in [0, T_end]")
            return ts
        return np.linspace(0.0, T_end, self.n_out + 1)


def propagator(sys: SystemSpec, grid: GridSpec):
    """Return ``evolve(coeffs, t)`` applying the exact per-mode exponential.

    With ``A0`` constant positive definite and a skew operator part, the
    generator is similar to a skew-adjoint matrix through ``A0^{1/2}``; it is
    diagonalised once with the Jacobi eigensolver and the exponential is
    formed from eigenvalue phases.  Non-normal generators (a non-skew ``H``)
    fall back to scaling-and-squaring per call.
    """
    gen = sys.generator_table(grid)
    a0 = sys.A0.base
    w0, v0 = np.linalg.eigh(a0)
    half = (v0 * np.sqrt(w0)) @ v0.T
    ihalf = (v0 / np.sqrt(w0)) @ v0.T
    B = np.einsum("ij,...jk,kl->...il", half, gen, ihalf)
    skew = np.abs(B + adjoint(B)).max() <= 1e-12 * max(1.0, np.abs(B).max())
    if skew:
        lam, V = herm_eig(1j * B)  # B = -i V diag(lam) V*
        Vh = adjoint(V)

        def evolve(c, t):
            x = np.einsum("ij,j...->i...", half.astype(complex), c)
            x = np.einsum("...ij,j...->i...", Vh, x)
            x = np.moveaxis(np.exp(-1j * lam * t), -1, 0) * x
            x = np.einsum("...ij,j...->i...", V, x)
            return np.einsum("ij,j...->i...", ihalf.astype(complex), x)

        return evolve

    def evolve(c, t):
        E = scipy.linalg.expm(t * gen)
        return apply_symbol(E, c)

    return evolve


def _rk4_step(f, c, t, dt):
    k1 = f(c, t)
    k2 = f(c + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(c + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(c + dt * k3, t + dt)
    return c + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def wave_speed(sys: SystemSpec, state: SpectralState) -> float:
    """Bound on the first-order characteristic speed, used for the CFL step."""
    speed = 0.0
    if sys.A_list:
        u = state.values()
        for a in sys.A_list:
            m = a(u.real) if callable(a) else a
            w, _ = herm_eig(np.asarray(m, dtype=float).reshape(-1, sys.n, sys.n))
            speed += float(np.abs(w).max())
    for sym, scale in ((sys.Lsym, sys.delta), (sys.Msym, sys.eps)):
        for s in sym.first_order:
            speed += float(np.abs(np.linalg.eigvalsh(s)).max()) / scale
    return speed / sys.c0


def choose_dt(sys: SystemSpec, state: SpectralState, policy: StepPolicy) -> float:
    if policy.dt is not None:
        return float(policy.dt)
    dt = policy.c_stiff * sys.delta
    speed = wave_speed(sys, state)
    if speed > 0:
        dt = min(dt, policy.c_cfl * state.grid.dx / speed)
    return dt


def simulate(sys: SystemSpec, u0: SpectralState, T_end: float,
             policy: Optional[StepPolicy] = None, project=None) -> Trajectory:
    """Integrate from ``u0`` to ``T_end`` and sample at the policy's output times.

    ``project`` (optional) is applied to the coefficients after every RK4
    stage; the limit solver uses it to stay on the constraint subspace.
    """
    if T_end <= 0:
        raise ValueError("T_end must be positive")
    policy = policy or StepPolicy()
    grid = u0.grid
    times = policy.times(T_end)
    method = policy.method
    if method == "auto":
        method = "exact" if sys.is_linear and project is None else "rk4"
    out = np.empty((len(times),) + u0.coeffs.shape, dtype=complex)
    if method == "exact":
        evolve = propagator(sys, grid)
        for i, t in enumerate(times):
            out[i] = evolve(u0.coeffs, t) if t > 0 else u0.coeffs
        return Trajectory(times, out, grid, u0.real, {"method": "exact"})

    proj = project or (lambda c: c)

    def f(c, t):
        return proj(rhs_eval(sys, SpectralState(c, grid, t, u0.real), t).coeffs)

    c = proj(u0.coeffs.copy())
    if sys.dealias and not sys.is_linear:
        c = c * grid.dealias_mask
    out[0] = c
    t = float(times[0])
    dt_max = choose_dt(sys, u0, policy)
    nsteps = 0
    for i in range(1, len(times)):
        span = float(times[i]) - t
        m = max(1, math.ceil(span / dt_max - 1e-9))
        dt = span / m
        if dt < policy.min_dt:
            raise StepCollapse(f"step {dt:.3e} below {policy.min_dt}")
        for _ in range(m):
            c = _rk4_step(f, c, t, dt)
            t += dt
        t = float(times[i])
        nsteps += m
        out[i] = c
        if not np.all(np.isfinite(c)):
            raise StepCollapse(f"non-finite state at t={t}")
    return Trajectory(times, out, grid, u0.real, {"method": "rk4", "dt": dt_max, "steps": nsteps})


# -- the explicit ODE example ------------------------------------------------------------

def ode_example_exact(delta, eps, a, w0, x, t, amplitude=None):
    """``z = u + i v`` for the rotating ODE ``a(eps w) z_t = -i z / delta``.

    ``amplitude`` is the initial value of ``u`` (``delta`` for well-prepared
    data, 1 for the ill-prepared variant).
    """
    amp = delta if amplitude is None else amplitude
    x = np.asarray(x, dtype=float)
    return amp * np.exp(-1j * t / (delta * a(eps * w0(x))))


def ode_example_derivative_norms(delta, eps, a, w0, t, grid_n=256, max_ell=2, max_k=0,
                                 amplitude=None):
    """``L^2`` norms of ``d_x^ell d_t^k z`` on the circle, as a dict ``{(k, ell): norm}``.

    With ``psi = 1/(delta a(eps w0))`` and ``z = amp exp(-i t psi)`` one has
    ``d_x^ell d_t^k z = amp Q_ell exp(-i t psi)`` where ``Q_0 = (-i psi)^k``
    and ``Q_{ell+1} = Q_ell' - i t psi' Q_ell``.  Every ``Q_ell`` is smooth
    with no fast oscillation, so it is differentiated spectrally and
    ``|Q_ell|^2`` is integrated by the trapezoid rule on ``grid_n`` points.
    """
    amp = delta if amplitude is None else amplitude
    grid = GridSpec(1, grid_n)
    x = grid.points[0]
    psi = 1.0 / (delta * a(eps * w0(x)))

    def dx(f):
        return to_values(derivative(to_coeffs(f, grid), grid, (1,)), grid)

    dpsi = dx(psi.astype(complex))
    out = {}
    for k in range(max_k + 1):
        q = (-1j * psi) ** k
        for ell in range(max_ell + 1):
            out[(k, ell)] = float(abs(amp) * np.sqrt(np.sum(np.abs(q) ** 2) * grid.dx))
            q = dx(q) - 1j * t * dpsi * q
    return out


def ode_example_system(eps, delta, grid: GridSpec, a_slope=1.0, c0=0.5, b0=None):
    """The three-component ODE example ``(u, v, w)`` as a system on ``grid``.

    ``a(v) = 1 + a_slope * v`` multiplies the time derivatives of ``u`` and
    ``v``; the large term rotates ``(u, v)``.
    """
    n = 3
    Z = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]], dtype=float)
    L = OperatorSymbol(n, Z, [np.zeros((n, n))] * grid.d)
    M = OperatorSymbol(n, None, [np.zeros((n, n))] * grid.d)
    A0 = AffineCoefficient(np.eye(n), {2: a_slope * np.diag([1.0, 1.0, 0.0])})
    b0 = 0.5 / abs(a_slope) if b0 is None else b0
    return SystemSpec(n, grid.d, L, M, eps, delta, A0=A0, c0=c0, b0=b0, dealias=False)


# -- norms ---------------------------------------------------------------------

def _weighted_sq(c, grid, weights_phys, ell, real):
    """``sum_{|alpha| <= ell} int (D^alpha v)^* A0 (D^alpha v) dx`` on the grid."""
    total = 0.0
    cell = grid.dx ** grid.d
    for order in range(ell + 1):
        for alpha in multi_indices(grid.d, order):
            dv = to_values(derivative(c, grid, alpha), grid, real=real)
            if weights_phys is None:
                total += float(np.sum(np.abs(dv) ** 2)) * cell
            else:
                q = np.einsum("i...,...ij,j...->...", dv.conj(), weights_phys, dv)
                total += float(np.sum(q.real)) * cell
    return total


@dataclass
class NormReport:
    s0: int
    times: np.ndarray
    Hs_norms: np.ndarray  # (nt, s0 + 2)
    ut_L2: np.ndarray
    weighted_triple: np.ndarray
    weighted_quad: np.ndarray
    ut_A0: np.ndarray
    fullweights: Optional[np.ndarray] = None

    def columns(self):
        cols = ["t"] + [f"H{l}" for l in range(self.s0 + 2)] + ["ut_L2", "triple", "quad"]
        if self.fullweights is not None:
            cols.append("full")
        return cols

    def rows(self):
        for i, t in enumerate(self.times):
            row = [float(t), *map(float, self.Hs_norms[i]), float(self.ut_L2[i]),
                   float(self.weighted_triple[i]), float(self.weighted_quad[i])]
            if self.fullweights is not None:
                row.append(float(self.fullweights[i]))
            yield row


def _fd_derivatives(ut, h, kmax):
    """Time derivatives ``d_t^k u`` for ``k = 2..kmax`` from samples of ``u_t``.

    Second-order centred stencils in the interior, second-order one-sided at
    the ends.  Returns ``{k: array}``.
    """
    nt = ut.shape[0]
    out = {}
    if kmax >= 2:
        d = np.empty_like(ut)
        d[1:-1] = (ut[2:] - ut[:-2]) / (2 * h)
        d[0] = (-3 * ut[0] + 4 * ut[1] - ut[2]) / (2 * h)
        d[-1] = (3 * ut[-1] - 4 * ut[-2] + ut[-3]) / (2 * h)
        out[2] = d
    if kmax >= 3:
        if nt < 4:
            raise InsufficientSampling("need at least four samples for third derivatives")
        d = np.empty_like(ut)
        d[1:-1] = (ut[2:] - 2 * ut[1:-1] + ut[:-2]) / h ** 2
        d[0] = (2 * ut[0] - 5 * ut[1] + 4 * ut[2] - ut[3]) / h ** 2
        d[-1] = (2 * ut[-1] - 5 * ut[-2] + 4 * ut[-3] - ut[-4]) / h ** 2
        out[3] = d
    if kmax >= 4:
        raise InsufficientSampling("finite-difference derivatives implemented up to order 3")
    return out


def norm_report(traj: Trajectory, sys: SystemSpec, s0: int, weights: str = "Simplified",
                derivs: Optional[dict] = None) -> NormReport:
    """Norm series along a trajectory.

    ``u_t`` comes from :func:`rhs_eval`; higher time derivatives (needed up to
    order ``s0 + 1``) from finite differences of the ``u_t`` samples, which
    must be uniformly spaced by at most ``delta / 4``.  ``derivs`` may supply
    precomputed ``{k: (nt, n, *grid) coefficient arrays}`` instead.
    """
    if weights not in ("Simplified", "Full"):
        raise ValueError("weights must be 'Simplified' or 'Full'")
    grid = traj.grid
    s = s0 + 1
    nt = len(traj)
    ut = np.stack([rhs_eval(sys, traj.state(i), float(traj.times[i])).coeffs for i in range(nt)])
    dt_all = {0: traj.coeffs, 1: ut}
    if derivs:
        dt_all.update(derivs)
    missing = [k for k in range(2, s + 1) if k not in dt_all]
    if missing:
        if nt < 3:
            raise InsufficientSampling("need at least three samples for time derivatives")
        steps = np.diff(traj.times)
        h = float(steps[0])
        if np.abs(steps - h).max() > 1e-9 * max(h, 1e-300):
            raise InsufficientSampling("output times must be uniformly spaced")
        if h > sys.delta / 4 * (1 + 1e-9):
            raise InsufficientSampling(
                f"output spacing {h:.3e} exceeds delta/4 = {sys.delta / 4:.3e}")
        dt_all.update({k: v for k, v in _fd_derivatives(ut, h, max(missing)).items()
                       if k in missing})
    Hs = np.zeros((nt, s + 1))
    utl2 = np.zeros(nt)
    triple = np.zeros(nt)
    uta0 = np.zeros(nt)
    full = np.zeros(nt) if weights == "Full" else None
    for i in range(nt):
        c = traj.coeffs[i]
        for ell in range(s + 1):
            Hs[i, ell] = sobolev_norm(c, grid, ell)
        utl2[i] = sobolev_norm(ut[i], grid, 0)
        if sys.a0_constant:
            a0 = None if np.allclose(sys.A0.base, np.eye(sys.n)) else \
                np.broadcast_to(sys.A0.base, grid.shape + (sys.n, sys.n))
        else:
            u = to_values(c, grid, real=traj.real)
            a0 = sys.A0(sys.eps * u)
        tot = 0.0
        for k in range(s + 1):
            tot += sys.eps ** (2 * k) * _weighted_sq(dt_all[k][i], grid, a0, s - k, traj.real)
        uta0[i] = math.sqrt(max(_weighted_sq(ut[i], grid, a0, 0, traj.real), 0.0))
        triple[i] = math.sqrt(max(tot, 0.0))
        if full is not None:
            val = sobolev_norm(c, grid, s)
            for k in range(1, s + 1):
                for order in range(s - k + 1):
                    wgt = sys.delta ** (k + order - 1) / sys.eps ** order
                    for alpha in multi_indices(grid.d, order):
                        val += wgt * sobolev_norm(derivative(dt_all[k][i], grid, alpha), grid, 0)
            full[i] = val
    quad = np.sqrt(triple ** 2 + uta0 ** 2)
    return NormReport(s0, np.asarray(traj.times, float), Hs, utl2, triple, quad, uta0, full)


# -- time derivatives at t = 0 ---------------------------------------------------------

def _series_product(a, b, m):
    """Coefficient ``m`` of the product of two truncated power series."""
    return sum(a[i] * b[m - i] for i in range(m + 1))


def time_derivs_at_zero(sys: SystemSpec, u0: SpectralState, k_max: int):
    """``[u, u_t, ..., d_t^k_max u]`` at ``t = 0`` by differentiating the PDE in time.

    The solution is expanded as a power series ``u = sum_m c_m t^m``; the PDE
    ``A0(eps u) u_t = R(u)`` is matched order by order, so ``c_{m+1}`` follows
    from ``c_0..c_m`` with the already-known lower coefficients of ``u_t``
    kept as they are.  Linear systems use the per-mode generator power.
    Quasilinear systems need affine ``A0`` and fluxes and no forcing ``G``.
    """
    grid = u0.grid
    if sys.is_linear:
        gen = sys.generator_table(grid)
        out = [u0.coeffs]
        for _ in range(k_max):
            out.append(apply_symbol(gen, out[-1]))
        return [u0.copy(c) for c in out]
    coeffs_ok = isinstance(sys.A0, AffineCoefficient) and all(
        isinstance(a, AffineCoefficient) for a in sys.A_list)
    if not coeffs_ok:
        raise UnsupportedSystem("time derivatives need affine A0 and flux coefficients")
    if sys.G is not None and k_max > 1:
        raise UnsupportedSystem("forcing G is only supported for the first derivative")
    real = u0.real
    mask = grid.dealias_mask if sys.dealias else np.ones(grid.shape, bool)
    stiff = sys.stiff_table(grid)
    c = [u0.coeffs * mask]                 # coefficient-space series of u
    v = [to_values(c[0], grid, real)]      # physical-space series of u
    dxs = [[to_values(derivative(c[0], grid, tuple(int(i == j) for i in range(grid.d))),
                      grid, real)] for j in range(grid.d)]
    a0 = [sys.A0(sys.eps * v[0])]
    ut = []                                # physical-space series of u_t
    a0inv = None
    for m in range(k_max):
        R = to_values(-apply_symbol(stiff, c[m]), grid, real)
        if sys.H is not None:
            R = R + np.einsum("ij,j...->i...", sys.H, v[m])
        if sys.G is not None and m == 0:
            R = R + np.asarray(sys.G(0.0, grid.points))
        for j, a in enumerate(sys.A_list):
            # series of A_j(u) is base at order 0 plus slopes times u_m
            Aser = [a(v[0])] + [a(v[i]) - a(np.zeros_like(v[i])) for i in range(1, m + 1)]
            R = R - sum(np.einsum("...ij,j...->i...", Aser[i], dxs[j][m - i])
                        for i in range(m + 1))
        acc = R
        for i in range(1, m + 1):
            acc = acc - np.einsum("...ij,j...->i...", a0[i], ut[m - i])
        if a0inv is None:
            w, V = herm_eig(a0[0])
            if float(np.min(w)) < sys.c0 / 2:
                raise A0Singular("A0 not positive definite at t = 0")
            a0inv = V @ (adjoint(V) / w[..., :, None])
        utm = np.einsum("...ij,j...->i...", a0inv, acc)
        utm = to_values(to_coeffs(utm, grid) * mask, grid, real)
        ut.append(utm)
        cn = to_coeffs(utm, grid) * mask / (m + 1)
        c.append(cn)
        v.append(to_values(cn, grid, real))
        for j in range(grid.d):
            alpha = tuple(int(i == j) for i in range(grid.d))
            dxs[j].append(to_values(derivative(cn, grid, alpha), grid, real))
        a0.append(sys.A0(sys.eps * v[-1]) - sys.A0(np.zeros_like(v[-1])))
    return [u0.copy(math.factorial(m) * cm) for m, cm in enumerate(c)]
