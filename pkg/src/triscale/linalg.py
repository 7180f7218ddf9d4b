"""Small dense complex linear algebra for per-mode operator symbols.

Everything here works on self-adjoint or skew-adjoint matrices of modest
size (a few to a few dozen rows).  Skew-adjoint input is multiplied by ``i``
before the eigensolve, which leaves eigenvectors and projections unchanged.

The eigensolver is a cyclic Jacobi iteration.  It accepts either
``complex128`` arrays, optionally with leading batch dimensions, or
``object`` arrays of :mod:`mpmath` numbers for extended-precision work.
"""

from __future__ import annotations

import mpmath
import numpy as np

from .errors import NoConvergence, NotNormal, NotSelfAdjoint

RANK_TOL = 1e-10
ADJ_TOL = 1e-10
MAX_SWEEPS = 60

SELF_ADJOINT = "self"
SKEW_ADJOINT = "skew"


def _is_mp(a):
    return isinstance(a, np.ndarray) and a.dtype == object


def _real(x):
    if _is_mp(x):
        return np.vectorize(lambda z: mpmath.re(z), otypes=[object])(x)
    return np.real(x)


def _absmax(a):
    if a.size == 0:
        return 0.0
    return max(np.abs(a).ravel())


def _as_matrix(a):
    a = np.asarray(a)
    if a.dtype != object:
        a = a.astype(complex)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrix, got shape {a.shape}")
    return a


def adjoint(a):
    return np.conjugate(np.swapaxes(a, -1, -2))


def to_mp(a):
    """Copy an array into an object array of ``mpmath.mpc`` (exact for doubles)."""
    a = np.asarray(a)
    out = np.empty(a.shape, dtype=object)
    out.ravel()[:] = [z if isinstance(z, mpmath.mpc) else mpmath.mpc(complex(z))
                      for z in a.ravel()]
    return out


def from_mp(a):
    a = np.asarray(a)
    if a.dtype != object:
        return a.astype(complex)
    return np.vectorize(complex, otypes=[complex])(a)


def adjointness(a, tol=ADJ_TOL):
    """Classify ``a`` as ``"self"``, ``"skew"`` or ``None``.

    The check is relative: ``max|a* -+ a| <= tol * max(1, max|a|)``.
    The zero matrix is reported as self-adjoint.
    """
    a = _as_matrix(a)
    ah = adjoint(a)
    bound = tol * max(1.0, float(_absmax(a)))
    if float(_absmax(ah - a)) <= bound:
        return SELF_ADJOINT
    if float(_absmax(ah + a)) <= bound:
        return SKEW_ADJOINT
    return None


def _hermitian_part(a, kind):
    """Return the self-adjoint matrix whose eigenvectors are those of ``a``."""
    if kind == SELF_ADJOINT:
        return a
    if _is_mp(a):
        return a * mpmath.mpc(0, 1)
    return 1j * a


def _normalize_phase(v):
    # first entry above 1e-8 of the column max is made real-positive
    mags = np.abs(v)
    if _is_mp(v):
        mags = mags.astype(float)
    colmax = mags.max(axis=-2, keepdims=True)
    sig = mags > 1e-8 * np.where(colmax > 0, colmax, 1.0)
    idx = np.argmax(sig, axis=-2)
    lead = np.take_along_axis(v, idx[..., None, :], axis=-2)
    lead_abs = np.abs(lead)
    if _is_mp(v):
        phase = np.where(lead_abs.astype(float) > 0, lead / np.where(
            lead_abs.astype(float) > 0, lead_abs, 1), 1)
        return v * np.conjugate(phase), idx
    phase = np.where(lead_abs > 0, lead / np.where(lead_abs > 0, lead_abs, 1.0), 1.0)
    return v * np.conjugate(phase), idx


def herm_eig(a, tol=None, max_sweeps=MAX_SWEEPS, adj_tol=ADJ_TOL, check=True):
    """Eigendecomposition of a self-adjoint matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    a : array_like, shape (..., n, n)
        Self-adjoint matrix or stack of matrices.  ``object`` arrays of mpmath
        numbers are iterated at the current ``mpmath.mp.dps``.
    tol : float, optional
        Sweeps stop once the off-diagonal Frobenius norm is at most
        ``tol`` times the full Frobenius norm.
    check : bool
        Verify self-adjointness before iterating.

    Returns
    -------
    w : ndarray, shape (..., n)
        Real eigenvalues in ascending order.
    v : ndarray, shape (..., n, n)
        Unitary matrix of eigenvectors (columns).  Each column has its first
        significant entry real and positive; equal eigenvalues are ordered by
        the position of that entry.
    """
    a = _as_matrix(a)
    mp = _is_mp(a)
    if check:
        herm = adjoint(a)
        bound = adj_tol * max(1.0, float(_absmax(a)))
        if float(_absmax(herm - a)) > bound:
            raise NotSelfAdjoint(
                f"max|A* - A| = {float(_absmax(herm - a)):.3e} exceeds {bound:.3e}")
    n = a.shape[-1]
    single = a.ndim == 2
    if single and not mp:
        return _jacobi_single(a, 1e-15 if tol is None else tol, max_sweeps)
    if single:
        a = a[None]
    batch = a.shape[:-2]
    a = (a + adjoint(a)) / 2
    if tol is None:
        tol = mpmath.mpf(10) ** (-(mpmath.mp.dps - 4)) if mp else 1e-15
    tiny = mpmath.mpf(10) ** (-(3 * mpmath.mp.dps)) if mp else 1e-300

    if mp:
        v = np.empty(a.shape, dtype=object)
        v[...] = mpmath.mpc(0)
        for i in range(n):
            v[..., i, i] = mpmath.mpc(1)
        one, zero = mpmath.mpf(1), mpmath.mpf(0)
    else:
        v = np.broadcast_to(np.eye(n, dtype=complex), a.shape).copy()
        one, zero = 1.0, 0.0

    offmask = ~np.eye(n, dtype=bool)

    def converged():
        mags = np.abs(a) ** 2
        off = np.sum(mags[..., offmask], axis=-1)
        full = np.sum(mags.reshape(batch + (n * n,)), axis=-1)
        if mp:
            return all(o <= tol * tol * f for o, f in zip(np.ravel(off), np.ravel(full)))
        return bool(np.all(off <= tol * tol * full))

    sweeps = 0
    while not converged():
        if sweeps >= max_sweeps:
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[..., p, q]
                mag = np.abs(apq)
                active = np.asarray(mag > tiny, dtype=bool)
                if not active.any():
                    continue
                safe = np.where(active, mag, one)
                e = np.where(active, apq / safe, one)
                app = _real(a[..., p, p])
                aqq = _real(a[..., q, q])
                tau = (aqq - app) / (2 * safe)
                sgn = np.where(np.asarray(tau >= 0, dtype=bool), one, -one)
                t = sgn / (np.abs(tau) + (1 + tau * tau) ** 0.5)
                t = np.where(active, t, zero)
                c = 1 / (1 + t * t) ** 0.5
                s = t * c
                se = s * e
                sec = s * np.conjugate(e)

                cp = a[..., :, p].copy()
                cq = a[..., :, q].copy()
                a[..., :, p] = c[..., None] * cp - sec[..., None] * cq
                a[..., :, q] = se[..., None] * cp + c[..., None] * cq
                rp = a[..., p, :].copy()
                rq = a[..., q, :].copy()
                a[..., p, :] = c[..., None] * rp - se[..., None] * rq
                a[..., q, :] = sec[..., None] * rp + c[..., None] * rq
                a[..., p, q] = np.where(active, zero, a[..., p, q])
                a[..., q, p] = np.where(active, zero, a[..., q, p])

                vp = v[..., :, p].copy()
                vq = v[..., :, q].copy()
                v[..., :, p] = c[..., None] * vp - sec[..., None] * vq
                v[..., :, q] = se[..., None] * vp + c[..., None] * vq

    w = _real(np.diagonal(a, axis1=-2, axis2=-1))
    v, lead = _normalize_phase(v)
    wkey = w.astype(float) if mp else w
    if single:
        w, v, wkey, lead = w[0], v[0], wkey[0], lead[0]
        order = _single_order(wkey, lead)
    else:
        order = np.argsort(wkey, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    return w, v


def _jacobi_single(a, tol, max_sweeps):
    # scalar-rotation path for one complex128 matrix; same rotation as above
    n = a.shape[0]
    a = (a + a.conj().T) / 2
    v = np.eye(n, dtype=complex)
    full = float(np.sum(np.abs(a) ** 2))
    sweeps = 0
    while True:
        off = float(np.sum(np.abs(a - np.diag(np.diagonal(a))) ** 2))
        if off <= tol * tol * full:
            break
        if sweeps >= max_sweeps:
            raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = complex(a[p, q])
                mag = abs(apq)
                if mag <= 1e-300:
                    continue
                e = apq / mag
                tau = (a[q, q].real - a[p, p].real) / (2 * mag)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + (1 + tau * tau) ** 0.5)
                c = 1 / (1 + t * t) ** 0.5
                s = t * c
                se = s * e
                sec = se.conjugate()
                cp = a[:, p].copy()
                a[:, p] = c * cp - sec * a[:, q]
                a[:, q] = se * cp + c * a[:, q]
                rp = a[p, :].copy()
                a[p, :] = c * rp - se * a[q, :]
                a[q, :] = sec * rp + c * a[q, :]
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                v[:, p] = c * vp - sec * v[:, q]
                v[:, q] = se * vp + c * v[:, q]
    w = np.diagonal(a).real.copy()
    lead = np.empty(n, dtype=int)
    for col in range(n):
        mags = np.abs(v[:, col])
        i = int(np.argmax(mags > 1e-8 * mags.max()))
        lead[col] = i
        z = v[i, col]
        v[:, col] *= abs(z) / z
    order = _single_order(w, lead)
    return w[order], v[:, order]


def _single_order(w, lead):
    # ascending eigenvalue; near-ties broken by position of the leading entry
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    order = list(np.argsort(w, kind="stable"))
    out = []
    i = 0
    while i < len(order):
        j = i + 1
        while j < len(order) and w[order[j]] - w[order[i]] <= 1e-12 * scale:
            j += 1
        out.extend(sorted(order[i:j], key=lambda m: (int(lead[m]), m)))
        i = j
    return np.array(out, dtype=int)


def _eig_normal(a, adj_tol):
    a = _as_matrix(a)
    kind = adjointness(a, adj_tol)
    if kind is None:
        raise NotNormal("matrix is neither self-adjoint nor skew-adjoint")
    w, v = herm_eig(_hermitian_part(a, kind), check=False)
    return kind, w, v


def _zero_mask(w, tau_rank, scale):
    mags = np.abs(w)
    if _is_mp(w):
        mags = mags.astype(float)
    top = float(mags.max()) if mags.size else 0.0
    ref = max(top, float(scale or 0.0))
    return mags <= tau_rank * ref, ref


def spectral_split(a, tau_rank=RANK_TOL, scale=None, adj_tol=ADJ_TOL):
    """Kernel projection and pseudo-inverse from one eigendecomposition.

    An eigenvalue counts as zero when ``|lam| <= tau_rank * max(max|lam|, scale)``.
    ``scale`` lets callers supply the magnitude of the problem the matrix came
    from, so that round-off residue in an exactly-zero matrix is not mistaken
    for a nonzero spectrum.

    Returns
    -------
    (null_proj, pinv, kind)
    """
    a = _as_matrix(a)
    n = a.shape[-1]
    kind, w, v = _eig_normal(a, adj_tol)
    zero, ref = _zero_mask(w, tau_rank, scale)
    if ref == 0.0:
        return np.eye(n, dtype=complex), np.zeros((n, n), dtype=complex), kind
    vn = v[:, zero]
    null_proj = vn @ adjoint(vn)
    inv = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, w))
    pinv_h = (v * inv[None, :]) @ adjoint(v)
    # pinv(-i H) = i pinv(H)
    pinv = pinv_h if kind == SELF_ADJOINT else 1j * pinv_h
    return null_proj, pinv, kind


def pseudo_inverse(a, tau_rank=RANK_TOL, scale=None, adj_tol=ADJ_TOL):
    """Moore-Penrose inverse of a self- or skew-adjoint matrix.

    Computed in the eigenbasis: reciprocals of the nonzero eigenvalues, zero
    on the numerical kernel.  The zero matrix maps to the zero matrix.
    """
    return spectral_split(a, tau_rank, scale, adj_tol)[1]


def null_projection(a, tau_rank=RANK_TOL, scale=None, adj_tol=ADJ_TOL):
    """Orthogonal projection onto the numerical kernel of ``a``."""
    return spectral_split(a, tau_rank, scale, adj_tol)[0]


def operator_norm(a):
    """Largest singular value, via the eigenvalues of ``a* a``."""
    a = _as_matrix(a)
    if a.shape[-1] == 0:
        return 0.0
    w, _ = herm_eig(adjoint(a) @ a)
    return float(np.sqrt(max(float(w[..., -1].max()), 0.0)))


def projection_defects(p):
    """Return ``(max|P^2 - P|, max|P* - P|)``."""
    p = _as_matrix(p)
    return float(_absmax(p @ p - p)), float(_absmax(adjoint(p) - p))
