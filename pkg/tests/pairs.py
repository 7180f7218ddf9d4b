"""Random skew-adjoint pairs with a nontrivial reduction hierarchy.

The reduction commutes with unitary changes of basis, so every pair can be
brought to a form where ``T00`` is diagonal and the compression of ``T01`` to
``ker T00`` is diagonal too.  Building pairs directly in that form keeps the
prescribed kernels exact in floating point.  A random coordinate permutation
with unit phases (also exact) hides the block layout from the code under test.
"""

import numpy as np

from triscale.reduction import SymbolPair, reduce


def _skew(rng, n):
    g = rng.uniform(-1, 1, (n, n)) + 1j * rng.uniform(-1, 1, (n, n))
    return (g - g.conj().T) / (2 * np.sqrt(2))


def raw_pair(rng, n):
    """Pair with kernels prescribed on the first three levels.

    Coordinates split into blocks ``R0 | R1 | K``.  ``T00`` is invertible on
    ``R0`` only, with a pair of opposite eigenvalues ``+-i*alpha`` on the
    first two coordinates.  The compression of ``T01`` to ``R1 + K`` is
    invertible on ``R1`` only.  When ``K`` couples to ``R0`` solely through
    that opposite pair with equal weights, the second-order term vanishes
    exactly on ``K`` and the hierarchy reaches level three there.
    """
    deep = n >= 4 and rng.random() < 0.7
    r0 = int(rng.integers(2 if deep else 1, n - 1))
    r1 = int(rng.integers(1, n - r0))
    q = n - r0 - r1
    d0 = np.zeros(n, dtype=complex)
    d0[:r0] = 1j * rng.uniform(0.4, 1.0, r0) * rng.choice([-1, 1], r0)
    x = _skew(rng, n)
    x[r0:, r0:] = 0
    x[r0:r0 + r1, r0:r0 + r1] = np.diag(
        1j * rng.uniform(0.4, 1.0, r1) * rng.choice([-1, 1], r1)
    )
    if deep:
        alpha = rng.uniform(0.4, 1.0)
        d0[0], d0[1] = 1j * alpha, -1j * alpha
        ph = rng.choice(np.array([1, -1, 1j, -1j]))
        y = x[0, r0 + r1:].copy()
        x[:, r0 + r1:] = 0
        x[0, r0 + r1:] = y
        x[1, r0 + r1:] = y * ph
        x[r0 + r1:, :] = -x[:, r0 + r1:].conj().T
    perm = rng.permutation(n)
    phase = rng.choice(np.array([1, -1, 1j, -1j]), n)
    u = np.zeros((n, n), dtype=complex)
    u[perm, np.arange(n)] = phase
    t00 = u @ np.diag(d0) @ u.conj().T
    t01 = u @ x @ u.conj().T
    return SymbolPair(t00, t01)


def well_separated(pair, p, floor=0.3, ceiling=5.0):
    """Reject instances whose level spectra are nearly degenerate or stiff."""
    red = reduce(pair, p)
    for j in range(p):
        lam = np.linalg.eigvals(red.T(j))
        mags = np.abs(lam)
        if np.any((mags > 1e-8) & (mags < floor)):
            return False
        nz = np.sort(lam.imag[mags > 1e-8])
        if len(nz) > 1 and np.min(np.diff(nz)) < floor:
            return False
    lam = np.linalg.eigvals(red.Tpp)
    if np.abs(lam).max(initial=0.0) > ceiling:
        return False
    # the hierarchy must terminate at level p: Tpp invertible on range P0
    rank = int(round(np.trace(red.P0_limit).real))
    live = np.sort(np.abs(lam))[::-1][:rank]
    return bool(np.all(live >= floor))


def random_pairs(count, seed=20190414, p=3, max_dim=6):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        n = int(rng.integers(3, max_dim + 1))
        pair = raw_pair(rng, n)
        if well_separated(pair, p):
            out.append(pair)
    return out
