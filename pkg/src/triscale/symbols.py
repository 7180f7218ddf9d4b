"""Constant-coefficient operator symbols and the limit projection per mode.

An operator of order at most one with constant coefficients acts on Fourier
mode ``k`` as the matrix

    L_hat(k) = Z + sum_j i k_j S_j

with ``Z`` skew-adjoint and every ``S_j`` real symmetric, so ``L_hat(k)`` is
skew-adjoint.  A custom callable may replace this rule for pseudodifferential
symbols; it is validated at every evaluated wavevector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ChainUnsolvable, ConfigError, DimensionMismatch, SymbolNotSkew
from .linalg import ADJ_TOL, RANK_TOL, SKEW_ADJOINT, adjoint, spectral_split
from .reduction import SymbolPair, reduce
from .spectral import GridSpec, SpectralState, sobolev_norm


@dataclass
class OperatorSymbol:
    n: int
    zero_order: Optional[np.ndarray] = None
    first_order: Sequence[np.ndarray] = field(default_factory=list)
    custom: Optional[Callable] = None

    def __post_init__(self):
        n = self.n
        z = np.zeros((n, n), dtype=complex) if self.zero_order is None else np.asarray(
            self.zero_order, dtype=complex)
        if z.shape != (n, n):
            raise DimensionMismatch(f"zero-order matrix has shape {z.shape}, expected {(n, n)}")
        tol = ADJ_TOL * max(1.0, float(np.abs(z).max(initial=0.0)))
        if np.abs(z + adjoint(z)).max(initial=0.0) > tol:
            raise SymbolNotSkew("zero-order part must be skew-adjoint")
        firsts = []
        for j, s in enumerate(self.first_order):
            s = np.asarray(s)
            if s.shape != (n, n):
                raise DimensionMismatch(f"first-order matrix {j} has shape {s.shape}")
            if np.iscomplexobj(s) and np.abs(s.imag).max(initial=0.0) > 0:
                raise SymbolNotSkew(f"first-order matrix {j} must be real")
            s = np.real(s).astype(float)
            if np.abs(s - s.T).max(initial=0.0) > ADJ_TOL * max(1.0, np.abs(s).max()):
                raise SymbolNotSkew(f"first-order matrix {j} must be symmetric")
            firsts.append(s)
        self.zero_order = z
        self.first_order = firsts

    @property
    def d(self) -> Optional[int]:
        """Spatial dimension implied by the first-order part (None if absent)."""
        return len(self.first_order) or None

    @property
    def is_real(self) -> bool:
        """Whether the symbol maps real fields to real fields."""
        return self.custom is None and not np.any(self.zero_order.imag)

    def at(self, k) -> np.ndarray:
        """Evaluate the symbol at wavevector ``k`` and check skew-adjointness."""
        k = np.atleast_1d(np.asarray(k, dtype=float))
        if self.custom is not None:
            m = np.asarray(self.custom(k), dtype=complex)
            if m.shape != (self.n, self.n):
                raise DimensionMismatch(f"custom symbol returned shape {m.shape}")
            tol = ADJ_TOL * max(1.0, float(np.abs(m).max(initial=0.0)))
            if np.abs(m + adjoint(m)).max(initial=0.0) > tol:
                raise SymbolNotSkew(f"custom symbol not skew-adjoint at k={tuple(k)}")
            return m
        if self.first_order and len(k) != len(self.first_order):
            raise DimensionMismatch(
                f"wavevector of length {len(k)} for a symbol in d={len(self.first_order)}")
        m = self.zero_order.copy()
        for kj, s in zip(k, self.first_order):
            m = m + 1j * kj * s
        return m

    def on_grid(self, grid: GridSpec) -> np.ndarray:
        """Symbol at every mode of ``grid``, shape ``grid.shape + (n, n)``.

        The Nyquist index is treated as zero in the first-order part, matching
        :func:`triscale.spectral.derivative`, so real fields stay real.
        """
        if self.custom is not None:
            out = np.empty(grid.shape + (self.n, self.n), dtype=complex)
            for idx, k in grid.symbol_modes():
                out[idx] = self.at(k)
            return out
        if self.first_order and len(self.first_order) != grid.d:
            raise DimensionMismatch("symbol dimension does not match grid")
        out = np.broadcast_to(self.zero_order, grid.shape + (self.n, self.n)).copy()
        for j, s in enumerate(self.first_order):
            kj = grid.wavevectors[j].astype(float)
            kj = np.where(np.abs(grid.wavevectors[j]) == grid.N // 2, 0.0, kj)
            out = out + 1j * kj[..., None, None] * s
        return out


def apply_symbol(table: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    """Multiply coefficients ``(n, *grid)`` by a per-mode matrix table."""
    return np.einsum("...ij,j...->i...", table, coeffs)


@dataclass(frozen=True)
class RateMatch:
    """``delta / eps**(1 + 1/s) -> C`` as both parameters vanish."""

    s: int
    C: float = 1.0

    def __post_init__(self):
        if int(self.s) != self.s or self.s < 1:
            raise ValueError("s must be an integer >= 1")
        if not self.C > 0:
            raise ValueError("C must be positive")

    @property
    def p(self) -> int:
        return self.s + 1

    @property
    def tlim_factor(self) -> float:
        return float(self.C) ** self.s


@dataclass(frozen=True)
class RateBetween:
    """``delta`` between the two rate-matched powers; the limit operator vanishes."""

    s: int

    def __post_init__(self):
        if int(self.s) != self.s or self.s < 1:
            raise ValueError("s must be an integer >= 1")

    @property
    def p(self) -> int:
        return self.s + 2

    @property
    def tlim_factor(self) -> float:
        return 0.0


def mode_pair(Lsym: OperatorSymbol, Msym: OperatorSymbol, k) -> SymbolPair:
    if Lsym.n != Msym.n:
        raise DimensionMismatch(f"symbols have {Lsym.n} and {Msym.n} components")
    return SymbolPair(Lsym.at(k), Msym.at(k), SKEW_ADJOINT)


def limit_projector(Lsym, Msym, regime, k, tau_rank=RANK_TOL):
    """Limit projection and limit operator at wavevector ``k``.

    Returns
    -------
    (P_hat, Tlim_hat)
        ``P_hat`` is the kernel of the reduction hierarchy up to level ``p``;
        ``Tlim_hat`` is ``C**s * T^(p,p)`` in the rate-matched regime and zero
        otherwise.
    """
    out = reduce(mode_pair(Lsym, Msym, k), regime.p, tau_rank)
    P = out.P0_limit
    factor = regime.tlim_factor
    if factor == 0.0:
        return P, np.zeros_like(P)
    T = factor * out.Tpp
    # T^(p,p) already lives inside range(P); re-apply P to remove round-off
    return P, P @ T @ P


@dataclass
class LimitTable:
    """Per-mode limit projection and limit operator on a grid."""

    grid: GridSpec
    P: np.ndarray
    Tlim: np.ndarray

    def project(self, coeffs):
        return apply_symbol(self.P, coeffs)

    def max_tlim(self) -> float:
        """Largest ``|Tlim_hat(k)|`` (operator norm) over the grid."""
        return float(np.linalg.norm(self.Tlim, ord=2, axis=(-2, -1)).max(initial=0.0))


def limit_table(Lsym, Msym, regime, grid: GridSpec, tau_rank=RANK_TOL) -> LimitTable:
    n = Lsym.n
    P = np.empty(grid.shape + (n, n), dtype=complex)
    T = np.empty_like(P)
    for idx, k in grid.symbol_modes():
        P[idx], T[idx] = limit_projector(Lsym, Msym, regime, k, tau_rank)
    return LimitTable(grid, P, T)


def build_wellprepared(Lsym, Msym, grid: GridSpec, m: int, seed: SpectralState,
                       delta: float, eps: float, U0: Optional[SpectralState] = None,
                       tol: float = 1e-8, c: float = 1.0, tau_rank=RANK_TOL):
    """Initial data ``sum_j (delta/eps)**j u_j + delta * U0`` with a solvable chain.

    ``u_0`` is the seed projected onto ``ker L_hat(k)`` and
    ``u_j = -pinv(L_hat) M_hat u_{j-1}`` for ``j = 1..m``.  Each step requires
    ``M_hat u_{j-1}`` to lie in ``range L_hat`` up to ``tol`` relative.  After
    the last step either ``M_hat u_m`` must vanish or ``delta**m <= c eps**(m+1)``
    must hold, otherwise the remainder ``(1/eps)(delta/eps)**m M u_m`` is not
    bounded and :class:`ChainUnsolvable` is raised for step ``m + 1``.

    Returns
    -------
    (u0, chain)
        The assembled state and the list of chain terms ``[u_0, ..., u_m]``.
    """
    if not 0 < delta < eps:
        raise ValueError("need 0 < delta < eps")
    n = Lsym.n
    if seed.n != n:
        raise DimensionMismatch(f"seed has {seed.n} components, symbols have {n}")
    Lt = Lsym.on_grid(grid)
    Mt = Msym.on_grid(grid)
    # per-mode kernel projection and pseudo-inverse of L_hat
    ker = np.empty_like(Lt)
    pinv = np.empty_like(Lt)
    scale = max(1.0, float(np.abs(Lt).max()))
    for idx, _ in grid.iter_modes():
        ker[idx], pinv[idx], _ = spectral_split(Lt[idx], tau_rank, scale)
    chain = [apply_symbol(ker, seed.coeffs)]
    for j in range(1, m + 1):
        rhs = apply_symbol(Mt, chain[-1])
        _check_range(ker, rhs, grid, j, tol)
        chain.append(-apply_symbol(pinv, rhs))
    tail = apply_symbol(Mt, chain[-1])
    tail_norm = np.sqrt(np.sum(np.abs(tail) ** 2, axis=0))
    ref = max(1e-300, float(np.sqrt(np.sum(np.abs(chain[-1]) ** 2, axis=0)).max()))
    if tail_norm.max() > tol * ref and delta ** m > c * eps ** (m + 1):
        idx = np.unravel_index(np.argmax(tail_norm), grid.shape)
        k = tuple(int(grid.wavenumbers[i]) for i in idx)
        raise ChainUnsolvable(m + 1, k, tail_norm[idx])
    ratio = delta / eps
    total = sum(ratio ** j * u for j, u in enumerate(chain))
    if U0 is not None:
        total = total + delta * U0.coeffs
    u0 = SpectralState(total, grid, 0.0, seed.real)
    return u0, [SpectralState(u, grid, 0.0, seed.real) for u in chain]


def _check_range(ker, rhs, grid, j, tol):
    """Raise when the kernel component of ``rhs`` is not negligible."""
    off = apply_symbol(ker, rhs)
    res = np.sqrt(np.sum(np.abs(off) ** 2, axis=0))
    size = np.sqrt(np.sum(np.abs(rhs) ** 2, axis=0))
    bad = res > tol * np.maximum(size, 1e-300)
    bad &= res > 1e-14 * max(1.0, float(size.max()))
    if bad.any():
        idx = np.unravel_index(np.argmax(np.where(bad, res, -1.0)), grid.shape)
        k = tuple(int(grid.wavenumbers[i]) for i in idx)
        raise ChainUnsolvable(j, k, res[idx])


def wellprep_residual(u0: SpectralState, Lsym, Msym, delta, eps, s0) -> float:
    """``H^s0`` norm of ``(1/delta) L u0 + (1/eps) M u0``."""
    grid = u0.grid
    op = Lsym.on_grid(grid) / delta + Msym.on_grid(grid) / eps
    return sobolev_norm(apply_symbol(op, u0.coeffs), grid, s0)


# -- symbol files -----------------------------------------------------------

def _parse_matrix(rows, n, where):
    try:
        m = np.array([[complex(str(v).replace(" ", "")) if isinstance(v, str) else complex(v)
                       for v in row] for row in rows])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: unreadable matrix entries ({exc})") from exc
    if m.shape != (n, n):
        raise ConfigError(f"{where}: expected a {n}x{n} matrix, got shape {m.shape}")
    return m


def symbol_from_dict(n: int, spec, where="symbol") -> OperatorSymbol:
    """Build an :class:`OperatorSymbol` from ``[Z, S_1, ..., S_d]``.

    Entries may be numbers or strings such as ``"5j"`` for the zero-order part.
    """
    if not isinstance(spec, (list, tuple)) or len(spec) < 1:
        raise ConfigError(f"{where}: expected a list [zero_order, S_1, ..., S_d]")
    mats = [_parse_matrix(m, n, f"{where}[{i}]") for i, m in enumerate(spec)]
    try:
        return OperatorSymbol(n, mats[0], mats[1:])
    except (SymbolNotSkew, DimensionMismatch) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def load_symbols(path) -> tuple[OperatorSymbol, OperatorSymbol]:
    """Read ``n``, ``L`` and ``M`` from a YAML or JSON symbol file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        data = json.loads(text)
    else:
        import yaml

        data = yaml.safe_load(text)
    if not isinstance(data, dict) or not {"n", "L", "M"} <= set(data):
        raise ConfigError(f"{path}: symbol file needs keys n, L, M")
    n = int(data["n"])
    L = symbol_from_dict(n, data["L"], f"{path}:L")
    M = symbol_from_dict(n, data["M"], f"{path}:M")
    if L.d and M.d and L.d != M.d:
        raise ConfigError(f"{path}: L and M have different dimensions")
    return L, M


def regime_from_rule(c: float, q: float):
    """Regime implied by ``delta = c * eps**q``.

    Writing ``q = 1 + 1/r``: an integer ``r`` is rate-matched with ``C = c``;
    otherwise ``delta`` lies strictly between the powers for ``s = floor(r)``
    and ``s + 1``.  Exponents ``q >= 2`` with non-integer ``r`` (that is
    ``r < 1``) belong to no regime.
    """
    if not c > 0:
        raise ConfigError("delta rule coefficient must be positive")
    if q <= 1:
        raise ConfigError(f"delta must vanish faster than eps (got q={q})")
    r = 1.0 / (q - 1.0)
    s = round(r)
    if s >= 1 and math.isclose(r, s, rel_tol=0, abs_tol=1e-12):
        return RateMatch(int(s), float(c))
    if r < 1:
        raise ConfigError(f"exponent q={q} is beyond the rate-matched s=1 case")
    return RateBetween(int(math.floor(r)))
