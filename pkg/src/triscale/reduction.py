"""Perturbation reduction of T(mu) = mu**-p (T00 + mu T01).

For a pair of self- or skew-adjoint matrices the reduction produces, level by
level, the projection ``P[j]`` onto the kernel of the reduced operator
``T[j][j]``, the cumulative projection ``Ptilde[j] = Ptilde[j-1] P[j] Ptilde[j-1]``,
and finally the limit projection ``P0_limit`` (the product of all ``P[j]``) and
the limit operator ``Tpp`` acting on its range.

The expansion coefficients of the level ``j+1`` operator are obtained from
those of level ``j`` by the signed sum over index tuples::

    T[j+1][j+n] = -sum_{r=1..n} (-1)**r  sum  S[k1] T[j][j+nu1] S[k2] ... T[j][j+nur] S[k(r+1)]

where ``nu`` runs over compositions of ``n`` into ``r`` positive parts, ``k``
over weak compositions of ``r-1`` into ``r+1`` parts, ``S[0] = -P[j]`` and
``S[l]`` is the ``l``-th power of the pseudo-inverse of ``T[j][j]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import mpmath
import numpy as np

from .errors import AdjointnessViolated, DegenerateThreshold, DimensionMismatch
from .linalg import (
    ADJ_TOL,
    RANK_TOL,
    SELF_ADJOINT,
    SKEW_ADJOINT,
    adjoint,
    adjointness,
    from_mp,
    herm_eig,
    operator_norm,
    spectral_split,
    to_mp,
)


@dataclass(frozen=True)
class SymbolPair:
    """Unperturbed operator ``T00`` and perturbation ``T01`` for one mode."""

    T00: np.ndarray
    T01: np.ndarray
    kind: str = SKEW_ADJOINT

    def __post_init__(self):
        t00 = np.array(self.T00, dtype=complex)
        t01 = np.array(self.T01, dtype=complex)
        if t00.ndim != 2 or t00.shape[0] != t00.shape[1] or t00.shape != t01.shape:
            raise DimensionMismatch(
                f"T00 {t00.shape} and T01 {t01.shape} must be equal square shapes")
        if self.kind not in (SELF_ADJOINT, SKEW_ADJOINT):
            raise ValueError(f"unknown kind {self.kind!r}")
        for name, m in (("T00", t00), ("T01", t01)):
            if not _has_kind(m, self.kind):
                raise AdjointnessViolated(f"{name} is not {self.kind}-adjoint")
        object.__setattr__(self, "T00", t00)
        object.__setattr__(self, "T01", t01)

    @property
    def n(self):
        return self.T00.shape[0]

    @classmethod
    def detect(cls, T00, T01):
        """Build a pair, inferring the adjointness kind from the inputs."""
        kinds = {adjointness(T00), adjointness(T01)}
        zero = np.allclose(T00, 0) and np.allclose(T01, 0)
        if zero:
            return cls(T00, T01, SKEW_ADJOINT)
        for kind in (SKEW_ADJOINT, SELF_ADJOINT):
            if _has_kind(np.asarray(T00, complex), kind) and _has_kind(
                    np.asarray(T01, complex), kind):
                return cls(T00, T01, kind)
        raise AdjointnessViolated(f"inputs have mismatched adjointness {kinds}")

    def operator(self, mu):
        """Return ``T00 + mu * T01``."""
        return self.T00 + mu * self.T01


def _has_kind(m, kind, tol=ADJ_TOL):
    bound = tol * max(1.0, float(np.abs(m).max()) if m.size else 0.0)
    sign = 1 if kind == SELF_ADJOINT else -1
    return float(np.abs(adjoint(m) - sign * m).max()) <= bound if m.size else True


def _enforce_kind(m, kind):
    if kind == SELF_ADJOINT:
        return (m + adjoint(m)) / 2
    return (m - adjoint(m)) / 2


@dataclass
class ReductionLevel:
    P: np.ndarray
    T: np.ndarray
    Ptilde: np.ndarray


@dataclass
class ReductionOutput:
    """Projection hierarchy and reduced operators.

    ``levels[j]`` holds ``P[j]``, ``T[j][j]`` and ``Ptilde[j]`` for
    ``j = 0 .. p-1``.  ``coefficients[(j, k)]`` keeps every expansion
    coefficient ``T[j][k]`` that the recursion produced.
    """

    p: int
    kind: str
    levels: list
    P0_limit: np.ndarray
    Tpp: np.ndarray
    coefficients: dict = field(default_factory=dict, repr=False)

    def T(self, j):
        if j == self.p:
            return self.Tpp
        return self.levels[j].T

    def P(self, j):
        return self.levels[j].P

    def Ptilde(self, j):
        return self.levels[j].Ptilde


@lru_cache(maxsize=None)
def compositions(n, r):
    """All tuples of ``r`` positive integers summing to ``n``, lexicographic."""
    if r == 1:
        return ((n,),) if n >= 1 else ()
    out = []
    for first in range(1, n - r + 2):
        for rest in compositions(n - first, r - 1):
            out.append((first,) + rest)
    return tuple(out)


@lru_cache(maxsize=None)
def weak_compositions(total, parts):
    """All tuples of ``parts`` nonnegative integers summing to ``total``."""
    if parts == 1:
        return ((total,),)
    out = []
    for first in range(total + 1):
        for rest in weak_compositions(total - first, parts - 1):
            out.append((first,) + rest)
    return tuple(out)


def _next_level(coeffs, S, nmax, n):
    """Coefficients ``T[j+1][j+m]`` for ``m = 1..nmax`` from level ``j`` data.

    ``coeffs[nu]`` is ``T[j][j+nu]`` or ``None`` when identically zero; the
    same convention holds for ``S``.  The signed sum is evaluated through the
    suffix sums ``G(a, b, c)`` of ``c`` factors ``T[nu] S[k]`` with total
    ``sum(nu) = a`` and ``sum(k) = b``, so shared tails are multiplied once.
    """
    memo = {}

    def coef(nu):
        return coeffs[nu] if nu < len(coeffs) else None

    def G(a, b, c):
        if c == 0:
            return np.eye(n, dtype=complex) if a == 0 and b == 0 else None
        if a < c:
            return None
        key = (a, b, c)
        if key in memo:
            return memo[key]
        acc = None
        for nu in range(1, a - c + 2):
            t = coef(nu)
            if t is None:
                continue
            for k in range(b + 1):
                if S[k] is None:
                    continue
                tail = G(a - nu, b - k, c - 1)
                if tail is None:
                    continue
                term = t @ S[k] @ tail
                acc = term if acc is None else acc + term
        memo[key] = acc
        return acc

    new = []
    for m in range(1, nmax + 1):
        acc = np.zeros((n, n), dtype=complex)
        for r in range(1, m + 1):
            sign = -((-1) ** r)
            for k1 in range(r):
                if S[k1] is None:
                    continue
                g = G(m, r - 1 - k1, r)
                if g is not None:
                    acc += sign * (S[k1] @ g)
        new.append(acc)
    return new


def reduce(pair, p, tau_rank=RANK_TOL):
    """Run the reduction process for ``p`` levels.

    Parameters
    ----------
    pair : SymbolPair
    p : int
        Number of levels; the limit operator returned is ``T[p][p]``.
    tau_rank : float
        Relative tolerance deciding which eigenvalues of each ``T[j][j]``
        count as zero.  The reference magnitude is the larger of the
        eigenvalue spread and the size of the input pair.

    Returns
    -------
    ReductionOutput
    """
    if not isinstance(pair, SymbolPair):
        raise TypeError("pair must be a SymbolPair")
    if p < 1:
        raise ValueError("p must be a positive integer")
    n = pair.n
    kind = pair.kind
    scale = max(float(np.abs(pair.T00).max()), float(np.abs(pair.T01).max()))
    eye = np.eye(n, dtype=complex)
    zero = np.zeros((n, n), dtype=complex)

    # level-0 coefficients: T[0][0], T[0][1]; T[0][k] = 0 for k >= 2
    coeffs = [pair.T00, pair.T01 if np.any(pair.T01) else None]
    ptilde_prev = eye
    levels = []
    table = {(0, 0): pair.T00, (0, 1): pair.T01}
    collapsed = False
    for j in range(p):
        tjj = coeffs[0] if coeffs[0] is not None else zero
        if collapsed:
            levels.append(ReductionLevel(eye.copy(), zero.copy(), zero.copy()))
            coeffs = [None] * (p - j)
            continue
        pj, pinv, _ = spectral_split(tjj, tau_rank, scale)
        ptilde = ptilde_prev @ pj @ ptilde_prev
        ptilde = (ptilde + adjoint(ptilde)) / 2
        levels.append(ReductionLevel(pj, tjj, ptilde))
        nmax = p - j
        if round(float(np.trace(ptilde).real)) == 0:
            # nothing left to reduce: every later operator vanishes
            collapsed = True
            coeffs = [None] * nmax
            ptilde_prev = ptilde
            continue
        S = [-pj, pinv]
        for _ in range(2, nmax):
            S.append(S[-1] @ pinv)
        S = [x if x.any() else None for x in S]
        new = _next_level(coeffs, S, nmax, n)
        for m, mat in enumerate(new):
            if not _has_kind(mat, kind):
                raise AdjointnessViolated(
                    f"T({j + 1},{j + 1 + m}) is not {kind}-adjoint")
            mat = _enforce_kind(mat, kind)
            new[m] = mat
            table[(j + 1, j + 1 + m)] = mat
        coeffs = new
        ptilde_prev = ptilde
    tpp = coeffs[0] if coeffs and coeffs[0] is not None else zero.copy()
    p0 = ptilde_prev if not collapsed else zero.copy()
    return ReductionOutput(p=p, kind=kind, levels=levels, P0_limit=p0, Tpp=tpp,
                           coefficients=table)


def reduction_defects(out):
    """Largest violations of the structural identities of a reduction.

    Returns a dict with keys ``idempotence``, ``symmetry``, ``orthogonality``
    (pairwise products of the complementary projections), ``product_sum``
    (product of ``P[j]`` versus ``I - sum(I - P[j])``), ``limit_product``
    (``P0_limit`` versus the product) and ``kernel`` (``P[j] T[j][j]``).
    """
    n = out.P0_limit.shape[0]
    eye = np.eye(n)
    d = dict.fromkeys(
        ("idempotence", "symmetry", "orthogonality", "product_sum",
         "limit_product", "kernel"), 0.0)
    comps = []
    prod = eye.astype(complex)
    for lvl in out.levels:
        P = lvl.P
        d["idempotence"] = max(d["idempotence"], np.abs(P @ P - P).max())
        d["symmetry"] = max(d["symmetry"], np.abs(adjoint(P) - P).max())
        d["kernel"] = max(d["kernel"], np.abs(P @ lvl.T).max(), np.abs(lvl.T @ P).max())
        comps.append(eye - P)
        prod = prod @ P
    for a in range(len(comps)):
        for b in range(len(comps)):
            if a != b:
                d["orthogonality"] = max(d["orthogonality"],
                                         np.abs(comps[a] @ comps[b]).max())
    d["product_sum"] = float(np.abs(prod - (eye - sum(comps))).max())
    d["limit_product"] = float(np.abs(prod - out.P0_limit).max())
    return {k: float(v) for k, v in d.items()}


@dataclass
class MuSpectrum:
    """Eigen-split of ``T00 + mu T01`` at the contour radius ``mu**(p-1/2)``."""

    mu: float
    p: int
    kind: str
    eigenvalues: np.ndarray
    vectors: np.ndarray
    inside: np.ndarray
    dps: int | None = None


def mu_spectrum(pair, p, mu, dps=None, band=1e-6):
    """Eigendecompose ``T00 + mu T01`` and mark eigenvalues inside the contour.

    With ``dps`` set the computation runs in mpmath at that many digits and
    the returned arrays hold mpmath numbers.
    """
    if not 0 < mu < 1:
        raise ValueError("mu must lie in (0, 1)")
    if dps is None:
        h = pair.operator(mu)
        if pair.kind == SKEW_ADJOINT:
            h = 1j * h
        w, v = herm_eig(h)
        radius = mu ** (p - 0.5)
        mags = np.abs(w)
    else:
        with mpmath.workdps(dps):
            m = mpmath.mpf(mu)
            h = to_mp(pair.T00) + to_mp(pair.T01) * m
            if pair.kind == SKEW_ADJOINT:
                h = h * mpmath.mpc(0, 1)
            w, v = herm_eig(h)
            radius = float(m ** (p - mpmath.mpf(1) / 2))
            mags = np.array([float(abs(x)) for x in w])
    ratio = mags / radius
    if np.any(np.abs(ratio - 1.0) <= band):
        raise DegenerateThreshold(
            f"eigenvalue within {band:g} of the cut mu^(p-1/2) = {radius:.3e}; perturb mu")
    return MuSpectrum(mu, p, pair.kind, w, v, ratio < 1.0, dps)


def curly_p_mu(pair, p, mu, dps=None):
    """Orthogonal projection onto eigenvectors of ``T00 + mu T01`` with
    ``|lambda| < mu**(p-1/2)``."""
    sp = mu_spectrum(pair, p, mu, dps)
    vin = from_mp(sp.vectors[:, sp.inside])
    return vin @ adjoint(vin)


def _compress(sp, mask):
    """``V diag(lam) V*`` over the selected eigenpairs, in the input's kind,
    scaled by ``mu**-p`` and returned as complex128."""
    v = sp.vectors[:, mask]
    w = sp.eigenvalues[mask]
    if sp.dps is None:
        out = (v * w[None, :]) @ adjoint(v) / sp.mu ** sp.p
        return out if sp.kind == SELF_ADJOINT else -1j * out
    with mpmath.workdps(sp.dps):
        scale = mpmath.mpf(sp.mu) ** sp.p
        out = (v * w[None, :]).dot(adjoint(v)) / scale
        if sp.kind == SKEW_ADJOINT:
            out = out * mpmath.mpc(0, -1)
        return from_mp(out)


@dataclass
class OrderReport:
    mu: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    e: np.ndarray
    commutator: np.ndarray
    rank: np.ndarray
    Tpp: np.ndarray
    monotone: bool

    def rows(self):
        for i in range(len(self.mu)):
            yield (float(self.mu[i]), float(self.b1[i]), float(self.b2[i]),
                   float(self.e[i]), float(self.commutator[i]), int(self.rank[i]))


def spectral_order_report(pair, p, mu_list, dps=None, tau_rank=RANK_TOL, reduction=None):
    """Empirical bounds on the projected operator across a descending ``mu_list``.

    For each ``mu`` reports ``b1 = |P(mu) T(mu) P(mu)|``, ``b2`` the smallest
    singular value of ``(I - P(mu)) T(mu) (I - P(mu))`` on the range of
    ``I - P(mu)`` (``inf`` if that range is empty), ``e = |P(mu) T(mu) - Tpp|``
    and the relative commutator ``max|P T - T P| / |T|``.  ``monotone`` is
    False when ``e`` fails to decrease along the list.  Values below
    ``1e-12 * max(1, |Tpp|)`` count as converged, so an identically zero
    ``e`` is monotone.

    ``dps`` switches the eigensolve to mpmath, which is needed once
    ``mu**p`` approaches double-precision round-off.
    """
    mus = [float(m) for m in mu_list]
    if any(b >= a for a, b in zip(mus, mus[1:])):
        raise ValueError("mu_list must be strictly descending")
    red = reduction if reduction is not None else reduce(pair, p, tau_rank)
    tpp = red.Tpp
    b1, b2, e, comm, rank = [], [], [], [], []
    for mu in mus:
        sp = mu_spectrum(pair, p, mu, dps)
        inside = sp.inside
        pt = _compress(sp, inside)
        b1.append(operator_norm(pt))
        e.append(operator_norm(pt - tpp))
        outside = ~inside
        if outside.any():
            big = _compress(sp, outside)
            vr = from_mp(sp.vectors[:, outside])
            c = adjoint(vr) @ big @ vr
            w, _ = herm_eig(adjoint(c) @ c)
            b2.append(float(np.sqrt(max(float(w[0]), 0.0))))
        else:
            b2.append(float("inf"))
        vin = from_mp(sp.vectors[:, inside])
        proj = vin @ adjoint(vin)
        tmu = pair.operator(mu) / mu ** p
        tn = max(operator_norm(tmu), 1e-300)
        comm.append(float(np.abs(proj @ tmu - tmu @ proj).max()) / tn)
        rank.append(int(inside.sum()))
    e = np.array(e)
    floor = 1e-12 * max(1.0, operator_norm(tpp))
    monotone = bool(np.all((e[1:] < e[:-1]) | (e[1:] <= floor)))
    return OrderReport(np.array(mus), np.array(b1), np.array(b2), e,
                       np.array(comm), np.array(rank), tpp, monotone)


def loglog_slope(x, y):
    """Least-squares slope of ``log y`` against ``log x``."""
    x = np.log(np.asarray(x, dtype=float))
    y = np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
