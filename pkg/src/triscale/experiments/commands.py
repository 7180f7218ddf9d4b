"""Implementations of the four CLI subcommands.

Every command returns a :class:`CommandResult`; ``flags`` lists assertion
names that failed (exit status 2).  All CSV files start with ``#`` comment
lines carrying the config hash and tolerances, and floats are written with
17 significant digits so reruns are bit-identical.  Wall-clock timings go to
a separate ``timings.csv`` that is excluded from that guarantee.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, TriscaleError
from ..limit import LimitSystem, solve_limit
from ..reduction import loglog_slope, reduce, spectral_order_report
from ..solver import StepPolicy, norm_report, ode_example_derivative_norms, simulate
from ..spectral import GridSpec
from ..symbols import build_wellprepared, limit_projector, load_symbols, mode_pair
from .config import (ExperimentConfig, build_system, field_from_exprs, fmt_param,
                     scalar_function)

log = logging.getLogger(__name__)


@dataclass
class CommandResult:
    files: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, cfg: ExperimentConfig, header, rows, notes=()):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_sha256={cfg.digest}\n")
        fh.write(f"# tolerances={json.dumps(cfg.tolerances, sort_keys=True)}\n")
        for note in notes:
            fh.write(f"# {note}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _tol(cfg, key, default):
    return float(cfg.tolerances.get(key, default))


def _run_name(eps, delta):
    return f"{fmt_param('eps', eps)}_{fmt_param('delta', delta)}"


# -- reduce ------------------------------------------------------------------------

def _modes(cfg, L):
    raw = cfg.raw
    if "modes" in raw:
        return [tuple(int(c) for c in np.atleast_1d(k)) for k in raw["modes"]]
    if "mode_range" in raw:
        lo, hi = (int(v) for v in raw["mode_range"])
        d = L.d or 1
        grid = np.meshgrid(*([np.arange(lo, hi + 1)] * d), indexing="ij")
        return [tuple(int(g[idx]) for g in grid) for idx in np.ndindex(grid[0].shape)]
    raise ConfigError("reduce needs 'modes' or 'mode_range'")


def _matrix_rows(name, j, m):
    for r in range(m.shape[0]):
        for c in range(m.shape[1]):
            yield [name, j, r, c, float(m[r, c].real), float(m[r, c].imag)]


def cmd_reduce(cfg: ExperimentConfig, out: Path) -> CommandResult:
    """Per-mode reduction hierarchy, limit blocks and spectral-order report."""
    L, M = load_symbols(cfg.path(cfg.raw.get("symbols", "")))
    regime = cfg.regime
    p = int(cfg.raw["p"]) if "p" in cfg.raw else (regime.p if regime else None)
    if p is None:
        raise ConfigError("reduce needs 'p' or a regime")
    mus = [float(m) for m in cfg.raw.get("mu_list", [1e-2, 1e-3, 1e-4])]
    dps = cfg.raw.get("dps", 30)
    tau = _tol(cfg, "rank", 1e-10)
    res = CommandResult()
    summary, report_rows = [], []
    max_tlim = 0.0
    for k in _modes(cfg, L):
        label = "_".join(str(c) for c in k)
        try:
            pair = mode_pair(L, M, k)
            red = reduce(pair, p, tau)
            rows = []
            for j in range(p):
                rows += _matrix_rows("P", j, red.P(j))
                rows += _matrix_rows("T", j, red.T(j))
                rows += _matrix_rows("Ptilde", j, red.Ptilde(j))
            rows += _matrix_rows("P0_limit", p, red.P0_limit)
            rows += _matrix_rows("Tpp", p, red.Tpp)
            if regime is not None:
                _, tlim = limit_projector(L, M, regime, k, tau)
                rows += _matrix_rows("Tlim", regime.p, tlim)
                max_tlim = max(max_tlim, float(np.linalg.norm(tlim, 2)))
            res.files.append(write_csv(out / "reduce" / f"mode_{label}.csv", cfg,
                                       ["block", "j", "row", "col", "re", "im"], rows,
                                       [f"mode={list(k)}", f"p={p}"]))
            rep = spectral_order_report(pair, p, mus, dps=dps, reduction=red)
        except TriscaleError as exc:
            raise type(exc)(f"mode {list(k)}: {exc}") from exc
        for r in rep.rows():
            report_rows.append([label, *r])
        rank = int(round(float(np.trace(red.P0_limit).real)))
        summary.append([label, rank, float(np.linalg.norm(red.Tpp, 2)), rep.monotone])
        if not rep.monotone:
            res.flags.append(f"e_monotone[{label}]")
    res.files.append(write_csv(out / "reduce" / "report.csv", cfg,
                               ["mode", "mu", "b1", "b2", "e", "commutator", "rank"],
                               report_rows, [f"p={p}", f"dps={dps}"]))
    res.files.append(write_csv(out / "reduce" / "summary.csv", cfg,
                               ["mode", "rank_P0", "norm_Tpp", "e_monotone"], summary,
                               [f"p={p}", f"max_norm_Tlim={_fmt(max_tlim)}"]))
    res.summary["max_norm_Tlim"] = max_tlim
    return res


# -- converge ----------------------------------------------------------------------

def _initial(cfg, grid, sysL, sysM, eps, delta):
    init = cfg.raw.get("initial", {})
    seed = field_from_exprs(init.get("seed", []), grid, "initial.seed")
    U0 = field_from_exprs(init["U0"], grid, "initial.U0") if "U0" in init else None
    m = int(init.get("m", 0))
    c = _tol(cfg, "wellprep_c", 1.0)
    return build_wellprepared(sysL, sysM, grid, m, seed, delta, eps, U0,
                              tol=_tol(cfg, "chain", 1e-8), c=c)


def l2_distance(a, b, grid: GridSpec):
    return float(np.sqrt(grid.volume * np.sum(np.abs(a - b) ** 2)))


def cmd_converge(cfg: ExperimentConfig, out: Path) -> CommandResult:
    """Sup-in-time L2 distance between full and limit solutions per eps."""
    grid = cfg.grid
    n_out = int(cfg.raw.get("n_out", 100))
    policy = StepPolicy(n_out=n_out)
    res = CommandResult()
    rows, timings = [], []
    lim = None
    for eps in cfg.eps:
        delta = cfg.delta(eps)
        start = time.perf_counter()
        system = build_system(cfg, eps, delta)
        u0, chain = _initial(cfg, grid, system.Lsym, system.Msym, eps, delta)
        traj = simulate(system, u0, cfg.T_end, policy)
        if lim is None:
            lim = LimitSystem.build(system, cfg.regime, grid)
        # the eps -> 0 datum is the kernel part of the seed
        ltraj = solve_limit(lim, chain[0], cfg.T_end, policy)
        errs = [l2_distance(traj.coeffs[i], ltraj.coeffs[i], grid) for i in range(len(traj))]
        E = max(errs)
        rows.append([eps, delta, E])
        timings.append([eps, delta, time.perf_counter() - start])
        res.files.append(write_csv(out / "converge" / f"run_{_run_name(eps, delta)}.csv", cfg,
                                   ["t", "err_L2"], zip(traj.times, errs)))
    Es = [r[2] for r in rows]
    notes = [f"regime={cfg.regime}", f"max_norm_Tlim={_fmt(lim.table.max_tlim())}"]
    if len(Es) > 1:
        ok = all(b < a for a, b in zip(Es, Es[1:]))
        notes.append(f"assert E_strictly_decreasing={_fmt(ok)} sequence={[_fmt(e) for e in Es]}")
        if not ok:
            res.flags.append("E_strictly_decreasing")
        if "max_ratio" in cfg.tolerances:
            ratio = Es[-1] / Es[0] if Es[0] > 0 else 0.0
            good = ratio <= float(cfg.tolerances["max_ratio"])
            notes.append(f"assert E_last_over_first={_fmt(ratio)} ok={_fmt(good)}")
            if not good:
                res.flags.append("E_ratio")
    res.files.append(write_csv(out / "converge" / "summary.csv", cfg,
                               ["eps", "delta", "E"], rows, notes))
    res.files.append(write_csv(out / "converge" / "timings.csv", cfg,
                               ["eps", "delta", "runtime_s"], timings))
    res.summary.update(E=Es, max_norm_Tlim=lim.table.max_tlim())
    if lim.table.max_tlim() > _tol(cfg, "tlim_warn", 1e6):
        print(f"warning: max |Tlim_hat(k)| = {lim.table.max_tlim():.3e} on the active grid; "
              "the limit operator may be unbounded", file=sys.stderr)
    return res


# -- blowup ----------------------------------------------------------------------------

def sobolev_from_derivatives(norms, s, d=1):
    """``H^s`` norm of a field depending on ``x_1`` only, from ``||d^l z||``.

    ``(1 + |k|^2)^s = sum_l C(s, l) k^(2l)`` in one variable; the remaining
    ``d - 1`` periodic directions contribute ``(2 pi)^((d-1)/2)``.
    """
    total = sum(math.comb(s, ell) * norms[(0, ell)] ** 2 for ell in range(s + 1))
    return math.sqrt(total) * (2 * math.pi) ** ((d - 1) / 2)


def cmd_blowup(cfg: ExperimentConfig, out: Path) -> CommandResult:
    """Closed-form Sobolev norms of the rotating ODE example against eps."""
    raw = cfg.raw
    d = int(raw.get("d", 1))
    s0 = d // 2 + 1
    s = s0 + 1
    a = scalar_function(raw.get("a", "1 + v"))
    w0 = scalar_function(raw.get("w0", "cos(v)"))
    t = float(raw.get("t", 1.0))
    qs = [float(q) for q in raw.get("q", [2, 3])]
    c = float(raw.get("c", 1.0))
    npts = int(raw.get("quadrature_points", 256))
    ill = bool(raw.get("ill_prepared", False))
    if not cfg.eps:
        raise ConfigError("blowup needs an eps schedule")
    slope_tol = _tol(cfg, "slope", 0.1)
    bound_ratio = _tol(cfg, "bounded_ratio", 2.0)
    res = CommandResult()
    rows, fits = [], []
    for q in qs:
        H = []
        for eps in cfg.eps:
            delta = c * eps ** q
            norms = ode_example_derivative_norms(delta, eps, a, w0, t, grid_n=npts, max_ell=s,
                                                 amplitude=1.0 if ill else None)
            H.append(sobolev_from_derivatives(norms, s, d))
            rows.append([q, eps, delta, norms[(0, s)], H[-1]])
        if ill:
            threshold, predicted = 1.0, s * (1 - q)
        else:
            threshold, predicted = 1 + 1 / s0, s - q * s0
        slope = loglog_slope(cfg.eps, H) if len(H) > 1 else float("nan")
        growth = max(H) / H[0]
        if q <= threshold + 1e-12:
            ok = growth <= bound_ratio
            kind = "bounded"
        else:
            ok = abs(slope - predicted) <= slope_tol
            kind = "growth"
        fits.append([q, slope, predicted, threshold, kind, growth, ok])
        if not ok:
            res.flags.append(f"blowup[q={_fmt(q)}]")
    notes = [f"d={d}", f"s0={s0}", f"t={_fmt(t)}", f"ill_prepared={_fmt(ill)}"]
    res.files.append(write_csv(out / "blowup" / "norms.csv", cfg,
                               ["q", "eps", "delta", f"dx{s}_L2", f"H{s}"], rows, notes))
    res.files.append(write_csv(out / "blowup" / "fits.csv", cfg,
                               ["q", "slope", "predicted_slope", "q_threshold", "check",
                                "max_over_first", "pass"], fits, notes))
    res.summary["fits"] = fits
    return res


# -- normwatch ----------------------------------------------------------------------

def _terminal_error_ratio(system, u0, T_end, dt):
    ends = {}
    for m in (1, 2, 16):
        tr = simulate(system, u0, T_end, StepPolicy(n_out=1, dt=dt / m, method="rk4"))
        ends[m] = tr.coeffs[-1]
    e1 = float(np.abs(ends[1] - ends[16]).max())
    e2 = float(np.abs(ends[2] - ends[16]).max())
    return e1 / e2 if e2 > 0 else float("inf")


def cmd_normwatch(cfg: ExperimentConfig, out: Path) -> CommandResult:
    """Weighted time-derivative norms along RK4 runs."""
    grid = cfg.grid
    raw = cfg.raw
    s0 = grid.d // 2 + 1
    spacing = float(raw.get("output_spacing", 0.2))  # in units of delta
    c_stiff = float(raw.get("c_stiff", 0.1))
    expect = raw.get("expect_held", True)
    halving = bool(raw.get("dt_halving", False))
    res = CommandResult()
    summary, timings = [], []
    for eps in cfg.eps:
        delta = cfg.delta(eps)
        start = time.perf_counter()
        system = build_system(cfg, eps, delta)
        u0, _ = _initial(cfg, grid, system.Lsym, system.Msym, eps, delta)
        h = spacing * delta
        nout = max(2, int(round(cfg.T_end / h)))
        times = np.linspace(0.0, cfg.T_end, nout + 1)
        policy = StepPolicy(output_times=times, c_stiff=c_stiff, method="rk4")
        truncated, err = False, ""
        try:
            traj = simulate(system, u0, cfg.T_end, policy)
        except TriscaleError as exc:
            truncated, err = True, f"{type(exc).__name__}: {exc}"
            traj = None
        ratio = float("nan")
        if traj is not None:
            rep = norm_report(traj, system, s0)
            M = float(rep.weighted_quad[0])
            peak = float(rep.weighted_quad.max())
            held = bool(peak <= 2 * M)
            over = np.nonzero(rep.weighted_quad > 2 * M)[0]
            t_exceed = float(traj.times[over[0]]) if len(over) else float("nan")
            cols = rep.columns() + ["held_2M"]
            rows = [r + [bool(q <= 2 * M)] for r, q in zip(rep.rows(), rep.weighted_quad)]
            res.files.append(write_csv(out / "normwatch" / f"run_{_run_name(eps, delta)}.csv",
                                       cfg, cols, rows, [f"s0={s0}", f"M={_fmt(M)}"]))
            if halving:
                ratio = _terminal_error_ratio(system, u0, cfg.T_end, c_stiff * delta)
        else:
            M = peak = t_exceed = float("nan")
            held = False
        summary.append([eps, delta, M, peak, held, t_exceed, truncated, ratio, err])
        timings.append([eps, delta, time.perf_counter() - start])
        if expect is not None and held != bool(expect):
            res.flags.append(f"held_2M[eps={_fmt(eps)}]")
        if halving and not ratio >= _tol(cfg, "halving_ratio", 14.0):
            res.flags.append(f"dt_halving[eps={_fmt(eps)}]")
    res.files.append(write_csv(out / "normwatch" / "summary.csv", cfg,
                               ["eps", "delta", "M", "max_quad", "held_2M", "t_exceed", "truncated",
                                "dt_halving_ratio", "error"], summary,
                               [f"expect_held={expect}"]))
    res.files.append(write_csv(out / "normwatch" / "timings.csv", cfg,
                               ["eps", "delta", "runtime_s"], timings))
    res.summary["rows"] = summary
    return res


COMMANDS = {
    "reduce": cmd_reduce,
    "converge": cmd_converge,
    "blowup": cmd_blowup,
    "normwatch": cmd_normwatch,
}
