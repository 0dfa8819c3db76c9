"""Built-in scenarios: one replicate function and one aggregator each.

Aggregators read only ``ReplicateSummary`` records (plus scenario
parameters), so verdicts can be recomputed from saved ``summaries.jsonl``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from .. import _kernels as K
from ..branching import run_mass_only
from ..dynamics import PHI_CODES, CoupledRun, coupled_run
from ..model import (ConfigError, Mode, ValidatedConfig, extinction_probability,
                     normalized_mass_laplace, stationary_law, time_grid)
from ..stats import EmpiricalMeasure, bl_distance, volterra_residual
from .core import (PassRule, ReplicateSummary, Scenario, TrajectoryRecord, condition,
                   median, survival_guard)


def _norm(v) -> float:
    return float(np.linalg.norm(np.asarray(v, dtype=float)))


def _tkey(prefix: str, t: float) -> str:
    return f"{prefix}@{t:g}"


def _grid_index(times: np.ndarray, t: float) -> int:
    return int(np.argmin(np.abs(times - t)))


# --- trajectory records -------------------------------------------------------

def _coupled_record(index: int, run: CoupledRun, bl: Dict[float, Tuple]) -> TrajectoryRecord:
    t = run.times
    rec = TrajectoryRecord.empty(index, t, run.zbar.shape[1], run.survived)
    rec.mass[:] = run.mass
    last = run.last_index
    if run.censored_time is not None:
        rec.mass[last + 1:] = np.nan
    elif run.extinction is not None:
        rec.mass[last + 1:] = 0.0
    rec.com[:] = run.ybar
    rec.spread[:] = run.spread_y
    rec.zbar[:] = run.zbar
    rec.spread_ordinary[:] = run.spread_z
    rec.exp_gamma_t_zbar[:] = np.exp(run.gamma * t)[:, None] * run.zbar
    for tt, (bz, by) in bl.items():
        k = _grid_index(t, tt)
        rec.bl_ordinary[k] = np.nan if bz is None else bz
        rec.bl_interacting[k] = np.nan if by is None else by
    return rec


def _bl_recorder(cfg: ValidatedConfig, seed: int):
    """``on_record`` hook computing both clouds' distances to their Gaussian targets."""
    gamma = float(cfg.gamma)
    d = cfg.d

    def hook(t, Z, Y, info):
        if not gamma > 0 or Z.shape[0] == 0:
            return {"bl_ordinary": None, "bl_interacting": None}
        target = stationary_law(gamma, d)
        gen = np.random.default_rng(seed)
        bz = bl_distance(EmpiricalMeasure(Z).normalized(), target, cfg.Q, gen)
        by = bl_distance(EmpiricalMeasure(Y).normalized(), target.shifted(info["ybar"]), cfg.Q, gen)
        return {"bl_ordinary": bz, "bl_interacting": by}

    return hook


def _base_summary(index: int, seed: int, run: CoupledRun, cfg: ValidatedConfig) -> ReplicateSummary:
    last = run.last_index
    survived = run.extinction is None
    T = float(run.times[last])
    return ReplicateSummary(
        index=index, seed=seed, survived=survived,
        eta=None if survived else run.extinction.eta,
        censored=run.censored_time is not None,
        W_estimate=float(math.exp(-cfg.beta * T) * run.mass[last]) if survived else 0.0,
        zbar=run.zbar[last].tolist() if survived else run.extinction.F_estimate.tolist(),
        ybar=run.ybar[last].tolist() if survived else run.extinction.F_prime_estimate.tolist())


# --- 1, 2: mass only -------------------------------------------------------------

def _mass_replicate(scn: Scenario, index: int, seed: int):
    p = scn.params
    cfg = scn.cfg
    times = time_grid(cfg.t_max, p.get("output_dt", 1.0))
    extra = [t for t in p.get("times", []) if t <= cfg.t_max]
    times = np.unique(np.concatenate([times, extra]))
    gen = np.random.default_rng(seed)
    traj = run_mass_only(cfg, gen, times, method=p.get("method", "exact"))
    W = traj.normalized(cfg.beta)
    values = {}
    for t in p.get("times", []):
        values[_tkey("W", t)] = float(W[_grid_index(times, t)])
    lt = p.get("laplace_t")
    if lt is not None:
        lam = p.get("laplace_lambda", 1.0)
        values[_tkey("laplace", lt)] = float(math.exp(-lam * W[_grid_index(times, lt)]))
    summary = ReplicateSummary(index=index, seed=seed, survived=not traj.extinct,
                               eta=traj.extinction_time, W_estimate=float(W[-1]), values=values)
    rec = TrajectoryRecord.empty(index, times, 1, not traj.extinct)
    rec.mass[:] = traj.mass
    return summary, rec


def _agg_extinction_probability(scn: Scenario, summaries):
    cfg = scn.cfg
    m0 = cfg.initial.m0
    target = extinction_probability(cfg.beta, m0)
    st = survival_guard(summaries, cfg.beta, m0)
    freq = st["n_extinct"] / st["n_replicates"]
    st.update(extinction_frequency=freq, extinction_expected=target,
              extinction_abs_error=abs(freq - target))
    return st


def _agg_mass_martingale(scn: Scenario, summaries):
    cfg = scn.cfg
    p = scn.params
    m0 = cfg.initial.m0
    st = survival_guard(summaries, cfg.beta, m0)
    for t in p.get("times", []):
        w = np.array([s.values[_tkey("W", t)] for s in summaries])
        se = w.std(ddof=1) / math.sqrt(w.size)
        st[_tkey("mean_W", t)] = float(w.mean())
        st[_tkey("se_W", t)] = float(se)
        st[_tkey("martingale_z", t)] = float(abs(w.mean() - m0) / se)
    lt = p.get("laplace_t")
    if lt is not None:
        lam = p.get("laplace_lambda", 1.0)
        v = np.array([s.values[_tkey("laplace", lt)] for s in summaries])
        target = normalized_mass_laplace(lam, cfg.beta, m0, lt)
        se = v.std(ddof=1) / math.sqrt(v.size)
        st[_tkey("laplace_mean", lt)] = float(v.mean())
        st[_tkey("laplace_expected", lt)] = target
        st[_tkey("laplace_z", lt)] = float(abs(v.mean() - target) / se)
    return st


def _rules_extinction_probability(p):
    return (PassRule("extinction_abs_error", "<=", p.get("abs_tolerance", 0.02)),)


def _rules_mass_martingale(p):
    rules = [PassRule(_tkey("martingale_z", t), "<=", p.get("z_max", 3.0)) for t in p.get("times", [])]
    if p.get("laplace_t") is not None:
        rules.append(PassRule(_tkey("laplace_z", p["laplace_t"]), "<=", p.get("z_max", 3.0)))
    return tuple(rules)


# --- 3: coupling convergence ----------------------------------------------------------

def _coupling_replicate(scn: Scenario, index: int, seed: int):
    cfg = scn.cfg
    values = {}
    first = None
    for gi, g in enumerate(scn.params["gammas"]):
        c = cfg.with_(gamma=float(g))
        coarse = coupled_run(c, seed)
        fine = coupled_run(c.with_(h=c.h / 2), seed, noise_level=1)
        e1, e2 = coarse.sup_coupling_error, fine.sup_coupling_error
        values[f"err_h_g{gi}"] = e1
        values[f"err_h2_g{gi}"] = e2
        values[f"ratio_g{gi}"] = e1 / e2 if e2 > 0 else math.nan
        values[f"events_g{gi}"] = coarse.events
        if first is None:
            first = coarse
    summary = _base_summary(index, seed, first, cfg)
    summary.values = values
    return summary, _coupled_record(index, first, {})


def _agg_coupling(scn: Scenario, summaries):
    p = scn.params
    lo, hi = p.get("ratio_band", (1.5, 3.0))
    st: Dict[str, Any] = {"n_replicates": len(summaries)}
    for gi, g in enumerate(p["gammas"]):
        r = np.array([s.values[f"ratio_g{gi}"] for s in summaries], dtype=float)
        e = np.array([s.values[f"err_h_g{gi}"] for s in summaries], dtype=float)
        st[f"gamma_g{gi}"] = float(g)
        st[f"n_in_band_g{gi}"] = int(np.sum((r >= lo) & (r <= hi)))
        st[f"median_ratio_g{gi}"] = float(np.median(r))
        st[f"max_err_h_g{gi}"] = float(np.max(e))
        st[f"median_err_h_g{gi}"] = float(np.median(e))
    return st


def _rules_coupling(p):
    rules = []
    bounds = p.get("abs_bound")
    for gi, _ in enumerate(p["gammas"]):
        rules.append(PassRule(f"n_in_band_g{gi}", ">=", p.get("min_in_band", 16)))
        if bounds is not None:
            rules.append(PassRule(f"max_err_h_g{gi}", "<=", float(bounds[gi])))
    return tuple(rules)


# --- 4: attractive convergence ---------------------------------------------------------

def _attractive_replicate(scn: Scenario, index: int, seed: int):
    cfg = scn.cfg
    T = float(cfg.t_max)
    rt = sorted(set([t for t in scn.params.get("record_times", []) if t <= T] + [T]))
    run = coupled_run(cfg, seed, record_times=rt, on_record=_bl_recorder(cfg, seed))
    summary = _base_summary(index, seed, run, cfg)
    bl = {}
    for t, r in run.records.items():
        bl[t] = (r["bl_ordinary"], r["bl_interacting"])
    values = {}
    if run.survived:
        last = run.records[T]
        summary.bl_ordinary = last["bl_ordinary"]
        summary.bl_interacting = last["bl_interacting"]
        for t in rt:
            k = _grid_index(run.times, t)
            values[_tkey("abs_zbar", t)] = _norm(run.zbar[k])
        k2 = _grid_index(run.times, T / 2)
        values["ybar_cauchy"] = _norm(run.ybar[-1] - run.ybar[k2])
    summary.values = values
    return summary, _coupled_record(index, run, bl)


def _agg_attractive(scn: Scenario, summaries):
    cfg = scn.cfg
    T = float(cfg.t_max)
    st = survival_guard(summaries, cfg.beta, cfg.initial.m0)
    surv = condition(summaries, "survival")
    st["median_bl_ordinary"] = median([s.bl_ordinary for s in surv])
    st["median_bl_interacting"] = median([s.bl_interacting for s in surv])
    st["median_abs_zbar"] = median([s.values.get(_tkey("abs_zbar", T)) for s in surv])
    st["median_ybar_cauchy"] = median([s.values.get("ybar_cauchy") for s in surv])
    for t in scn.params.get("record_times", []):
        if t <= T:
            st[_tkey("median_abs_zbar", t)] = median([s.values.get(_tkey("abs_zbar", t)) for s in surv])
    return st


def _rules_attractive(p):
    return (PassRule("median_bl_ordinary", "<=", p.get("bl_ordinary_max", 0.05)),
            PassRule("median_abs_zbar", "<=", p.get("zbar_max", 0.05)),
            PassRule("median_bl_interacting", "<=", p.get("bl_interacting_max", 0.06)),
            PassRule("n_survived", ">=", p.get("min_survivors", 200)),
            PassRule("survival_z", "<=", 3.0))


# --- 5: extinction point --------------------------------------------------------------

def geometric_snapshots(eta: float, levels: int) -> np.ndarray:
    """Times ``eta (1 - 2^-j)``, ``j = 0..levels``, accumulating at ``eta``."""
    return eta * (1.0 - 0.5 ** np.arange(levels + 1))


def _snap_below(times: np.ndarray, s: np.ndarray, last: int) -> np.ndarray:
    idx = np.searchsorted(times, s, side="right") - 1
    return np.clip(idx, 0, last)


def _extinction_replicate(scn: Scenario, index: int, seed: int):
    cfg = scn.cfg
    p = scn.params
    run = coupled_run(cfg, seed)
    summary = _base_summary(index, seed, run, cfg)
    if run.extinction is not None:
        e = run.extinction
        summary.extinction = {"eta": e.eta, "F": e.F_estimate.tolist(),
                              "F_prime": e.F_prime_estimate.tolist(),
                              "offset_at_eta": e.offset_at_eta.tolist(),
                              "quadrature_tolerance": e.quadrature_tolerance,
                              "residual": e.identity_residual}
        last = run.last_index
        big = np.nonzero(run.count[: last + 1] >= p.get("min_particles", 5))[0]
        k = int(big[-1])
        s0 = run.spread_z[0]
        values = {"snapshot_time": float(run.times[k]),
                  "spread_ratio": float(run.spread_z[k] / s0) if s0 > 0 else math.nan,
                  "spread_ratio_interacting": float(run.spread_y[k] / run.spread_y[0]) if s0 > 0 else math.nan}
        snaps = _snap_below(run.times, geometric_snapshots(e.eta, p.get("snapshot_levels", 5)), last)
        yb = run.ybar
        values["dY_first"] = _norm(yb[snaps[1]] - yb[snaps[0]])
        values["dY_last"] = _norm(yb[snaps[-1]] - yb[snaps[-2]])
        # same comparison on the raw grid (equal windows), reported only
        values["dY_first_grid"] = _norm(yb[1] - yb[0]) if last >= 1 else math.nan
        values["dY_last_grid"] = _norm(yb[last] - yb[last - 1]) if last >= 1 else math.nan
        summary.values = values
    return summary, _coupled_record(index, run, {})


def _agg_extinction_point(scn: Scenario, summaries):
    cfg = scn.cfg
    p = scn.params
    st = survival_guard(summaries, cfg.beta, cfg.initial.m0)
    ext = condition(summaries, "extinction")
    st["inconclusive"] = len(ext) == 0
    if not ext:
        for k in ("identity_fraction", "spread_fraction", "dY_ratio"):
            st[k] = math.nan
        return st
    factor = p.get("tolerance_factor", 10.0)
    ok = [s.extinction["residual"] <= factor * s.extinction["quadrature_tolerance"] for s in ext]
    st["identity_fraction"] = float(np.mean(ok))
    st["max_residual_over_tolerance"] = float(max(
        s.extinction["residual"] / s.extinction["quadrature_tolerance"]
        if s.extinction["quadrature_tolerance"] > 0 else math.inf for s in ext))
    frac = p.get("spread_fraction", 0.5)
    st["spread_fraction"] = float(np.mean([s.values["spread_ratio"] <= frac for s in ext]))
    st["median_dY_first"] = median([s.values["dY_first"] for s in ext])
    st["median_dY_last"] = median([s.values["dY_last"] for s in ext])
    st["dY_ratio"] = st["median_dY_last"] / st["median_dY_first"]
    st["median_dY_first_grid"] = median([s.values["dY_first_grid"] for s in ext])
    st["median_dY_last_grid"] = median([s.values["dY_last_grid"] for s in ext])
    st["median_eta"] = median([s.eta for s in ext])
    return st


def _rules_extinction_point(p):
    return (PassRule("identity_fraction", ">=", 1.0),
            PassRule("spread_fraction", ">=", p.get("min_fraction", 0.8)),
            PassRule("dY_ratio", "<", 1.0),
            PassRule("survival_z", "<=", 3.0))


# --- 6: repelling ------------------------------------------------------------------

def _repelling_replicate(scn: Scenario, index: int, seed: int):
    cfg = scn.cfg
    t1, t2 = scn.params.get("t_pair", (20.0, 30.0))
    run = coupled_run(cfg, seed)
    summary = _base_summary(index, seed, run, cfg)
    if run.survived:
        g = float(cfg.gamma)
        k1, k2 = _grid_index(run.times, t1), _grid_index(run.times, t2)
        k0 = _grid_index(run.times, max(t1 - (t2 - t1), 0.0))
        L1 = math.exp(g * run.times[k1]) * run.zbar[k1]
        L2 = math.exp(g * run.times[k2]) * run.zbar[k2]
        summary.repelling = {"L_t1": L1.tolist(), "L_t2": L2.tolist(),
                             "rel_change": _norm(L2 - L1) / _norm(L1), "abs_L_t2": _norm(L2)}
        summary.values = {"dY": _norm(run.ybar[k2] - run.ybar[k1]),
                          "dY_previous": _norm(run.ybar[k1] - run.ybar[k0]),
                          "abs_zbar_t2": _norm(run.zbar[k2])}
    return summary, _coupled_record(index, run, {})


def _agg_repelling(scn: Scenario, summaries):
    cfg = scn.cfg
    p = scn.params
    st = survival_guard(summaries, cfg.beta, cfg.initial.m0)
    surv = [s for s in summaries if s.survived and s.repelling]
    floor = p.get("floor", 1e-3)
    st["median_rel_change"] = median([s.repelling["rel_change"] for s in surv])
    st["fraction_above_floor"] = float(np.mean([s.repelling["abs_L_t2"] > floor for s in surv])) if surv else math.nan
    st["median_dY"] = median([s.values["dY"] for s in surv])
    st["median_dY_previous"] = median([s.values["dY_previous"] for s in surv])
    st["in_theorem_window"] = bool(-cfg.beta / 2 < cfg.gamma < 0)
    return st


def _rules_repelling(p):
    rules = [PassRule("median_rel_change", "<=", p.get("change_max", 0.10)),
             PassRule("fraction_above_floor", ">=", p.get("floor_fraction", 0.9)),
             PassRule("survival_z", "<=", 3.0)]
    if p.get("ybar_band") is not None:
        rules.append(PassRule("median_dY", "<=", float(p["ybar_band"])))
    return tuple(rules)


# --- 7: martingale problem ----------------------------------------------------------

def phi_value(name: str, x) -> float:
    v, _, _ = K._phi(PHI_CODES[name], np.asarray(x, dtype=float))
    return float(v)


def martingale_residual(run: CoupledRun, phi: str, t: float) -> Tuple[float, float]:
    """``(N_hat_t, predicted [N]_t)``, both stopped at extinction.

    Drift and quadratic-variation integrals are left-point sums on the grid,
    matching the explicit scheme (COM frozen at each step start).
    """
    times = run.times
    P = run.phi_y
    dt = np.diff(times)
    k = _grid_index(times, t)
    last = run.last_index
    qv_rate = (P[:, 1] - P[:, 0] ** 2) / run.mass
    if k <= last:
        drift = float(np.sum(P[:k, 2] * dt[:k]))
        qv = float(np.sum(qv_rate[:k] * dt[:k]))
        return float(P[k, 0] - P[0, 0] - drift), qv
    eta = run.extinction.eta
    tail = eta - times[last]
    drift = float(np.sum(P[:last, 2] * dt[:last]) + P[last, 2] * tail)
    qv = float(np.sum(qv_rate[:last] * dt[:last]) + qv_rate[last] * tail)
    end = phi_value(phi, run.extinction.F_prime_estimate)
    return end - float(P[0, 0]) - drift, qv


def _martingale_replicate(scn: Scenario, index: int, seed: int):
    cfg = scn.cfg
    phi = scn.params.get("phi", "tanh")
    run = coupled_run(cfg, seed, phi=phi)
    summary = _base_summary(index, seed, run, cfg)
    values = {}
    for t in scn.params.get("times", (1.0, 5.0)):
        n_hat, qv = martingale_residual(run, phi, t)
        values[_tkey("N", t)] = n_hat
        values[_tkey("QV", t)] = qv
    summary.values = values
    return summary, _coupled_record(index, run, {})


def _agg_martingale(scn: Scenario, summaries):
    st: Dict[str, Any] = survival_guard(summaries, scn.cfg.beta, scn.cfg.initial.m0)
    for t in scn.params.get("times", (1.0, 5.0)):
        n = np.array([s.values[_tkey("N", t)] for s in summaries])
        q = np.array([s.values[_tkey("QV", t)] for s in summaries])
        if n.size < 2:
            st[_tkey("martingale_z", t)] = st[_tkey("qv_ratio", t)] = math.nan
            continue
        se = n.std(ddof=1) / math.sqrt(n.size)
        st[_tkey("mean_N", t)] = float(n.mean())
        st[_tkey("se_N", t)] = float(se)
        st[_tkey("martingale_z", t)] = float(abs(n.mean()) / se) if se > 0 else 0.0
        st[_tkey("var_N", t)] = float(n.var(ddof=1))
        st[_tkey("mean_QV", t)] = float(q.mean())
        st[_tkey("qv_ratio", t)] = float(n.var(ddof=1) / q.mean()) if q.mean() > 0 else math.nan
    return st


def _rules_martingale(p):
    rules = []
    band = tuple(p.get("var_band", (0.8, 1.2)))
    for t in p.get("times", (1.0, 5.0)):
        rules.append(PassRule(_tkey("martingale_z", t), "<=", p.get("z_max", 3.0)))
        rules.append(PassRule(_tkey("qv_ratio", t), "in", band))
    return tuple(rules)


# --- 9: Volterra identity ----------------------------------------------------------

def volterra_tolerance(times: np.ndarray, zbar: np.ndarray, ybar: np.ndarray, gamma: float) -> np.ndarray:
    """Per-grid-time trapezoid bound for the two quadratures in the identity.

    One bound covers ``gamma int Zbar`` (the offset), the other the
    convolution ``gamma int e^{-gamma(t-s)} Ybar_s ds``; both use
    ``t max|second difference| / 12`` over the data seen so far.
    """
    n = times.size
    zb = zbar.reshape(n, -1)
    yb = ybar.reshape(n, -1)
    tol = np.zeros(n)
    if n < 3:
        return tol
    d2z = np.abs(zb[2:] - 2 * zb[1:-1] + zb[:-2]).max(axis=1)
    g = np.exp(gamma * times)[:, None] * yb
    d2g = np.abs(g[2:] - 2 * g[1:-1] + g[:-2]).max(axis=1)
    mz = np.maximum.accumulate(d2z)
    mg = np.maximum.accumulate(d2g)
    t = times[2:]
    tol[2:] = abs(gamma) * t / 12.0 * (mz + np.exp(-gamma * t) * mg)
    tol[1] = tol[2] if n > 2 else 0.0
    return tol


def _volterra_replicate(scn: Scenario, index: int, seed: int):
    cfg = scn.cfg
    run = coupled_run(cfg, seed)
    last = run.last_index
    t = run.times[: last + 1]
    zb = run.zbar[: last + 1]
    yc = run.ybar_corr[: last + 1]
    yd = run.ybar[: last + 1]
    g = float(cfg.gamma)
    res = np.abs(volterra_residual(t, zb, yc, g)).max(axis=1)
    res_direct = np.abs(volterra_residual(t, zb, yd, g)).max(axis=1)
    tol = volterra_tolerance(t, zb, yc, g)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(tol > 0, res / tol, np.where(res > 0, np.inf, 0.0))
        ratio_d = np.where(tol > 0, res_direct / tol, np.where(res_direct > 0, np.inf, 0.0))
    summary = _base_summary(index, seed, run, cfg)
    summary.values = {
        "max_residual": float(res.max()), "max_tolerance": float(tol.max()),
        "max_residual_over_tolerance": float(ratio.max()),
        "max_residual_direct": float(res_direct.max()),
        "max_residual_direct_over_tolerance": float(ratio_d.max()),
        "sup_coupling_error": run.sup_coupling_error,
        "grid_points": int(t.size)}
    return summary, _coupled_record(index, run, {})


def _agg_volterra(scn: Scenario, summaries):
    return {"n_replicates": len(summaries),
            "max_residual_over_tolerance": max(s.values["max_residual_over_tolerance"] for s in summaries),
            "max_residual": max(s.values["max_residual"] for s in summaries),
            "max_residual_direct": max(s.values["max_residual_direct"] for s in summaries),
            "max_residual_direct_over_tolerance": max(s.values["max_residual_direct_over_tolerance"]
                                                      for s in summaries),
            "max_sup_coupling_error": max(s.values["sup_coupling_error"] for s in summaries)}


def _rules_volterra(p):
    return (PassRule("max_residual_over_tolerance", "<=", 1.0),)


# --- 8: invariant suite ------------------------------------------------------------

def _invariant_replicate(scn: Scenario, index: int, seed: int):
    from .invariants import run_invariants
    checks = run_invariants(seed)
    summary = ReplicateSummary(index=index, seed=seed, survived=True,
                               values={k: bool(v) for k, v in checks.items()})
    return summary, None


def _agg_invariants(scn: Scenario, summaries):
    checks = {}
    for s in summaries:
        for k, v in s.values.items():
            checks[k] = checks.get(k, True) and bool(v)
    failed = sorted(k for k, v in checks.items() if not v)
    return {"n_checks": len(checks), "n_failed": len(failed), "failed": failed}


def _rules_invariants(p):
    return (PassRule("n_failed", "<=", 0),)


# --- diagnostics --------------------------------------------------------------------

def _boxes(p, d) -> List[Tuple[List[float], List[float]]]:
    return [(list(np.broadcast_to(b[0], (d,))), list(np.broadcast_to(b[1], (d,)))) for b in p["boxes"]]


def _box_volume(b) -> float:
    return float(np.prod(np.asarray(b[1]) - np.asarray(b[0])))


def _local_replicate(scn: Scenario, index: int, seed: int):
    cfg = scn.cfg
    p = scn.params
    boxes = _boxes(p, cfg.d)
    run = coupled_run(cfg, seed, boxes=boxes)
    summary = _base_summary(index, seed, run, cfg)
    last = run.last_index
    values: Dict[str, Any] = {}
    g = float(cfg.gamma)
    for t in p.get("times", [cfg.t_max]):
        k = _grid_index(run.times, t)
        if k > last:
            continue
        bz = run.box_z[k]
        if len(boxes) >= 2 and bz[1] > 0:
            values[_tkey("ratio", t)] = float(bz[0] / bz[1])
        if run.mass[k] > 0:
            values[_tkey("scaled_local_mass", t)] = float(math.exp(cfg.d * abs(g) * run.times[k]) * bz[0] / run.mass[k])
    occ = run.box_z[: last + 1, 0]
    empty = np.nonzero(occ[1:] <= 0)[0]
    values["first_empty_time"] = float(run.times[empty[0] + 1]) if empty.size else None
    summary.values = values
    return summary, _coupled_record(index, run, {})


def _ci(values) -> dict:
    v = np.array([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return {"n": 0, "mean": None, "ci95": None}
    se = v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else math.nan
    return {"n": int(v.size), "mean": float(v.mean()), "ci95": [float(v.mean() - 1.96 * se), float(v.mean() + 1.96 * se)]}


def _agg_local(scn: Scenario, summaries):
    cfg = scn.cfg
    p = scn.params
    boxes = _boxes(p, cfg.d)
    st = survival_guard(summaries, cfg.beta, cfg.initial.m0)
    surv = condition(summaries, "survival")
    if len(boxes) >= 2:
        st["volume_ratio"] = _box_volume(boxes[0]) / _box_volume(boxes[1])
    for t in p.get("times", [cfg.t_max]):
        st[_tkey("ratio", t)] = _ci([s.values.get(_tkey("ratio", t)) for s in surv])
        st[_tkey("scaled_local_mass", t)] = _ci([s.values.get(_tkey("scaled_local_mass", t)) for s in surv])
    st["fraction_box_emptied_survivors"] = (float(np.mean([s.values.get("first_empty_time") is not None
                                                            for s in surv])) if surv else None)
    st["fraction_box_emptied_all"] = float(np.mean([s.values.get("first_empty_time") is not None
                                                    for s in summaries]))
    st["local_extinction_regime"] = bool(cfg.gamma <= -cfg.beta / cfg.d)
    return st


def _conjecture_replicate(scn: Scenario, index: int, seed: int):
    cfg = scn.cfg
    p = scn.params
    boxes = _boxes(p, cfg.d)
    values: Dict[str, Any] = {}
    first = None
    for gi, g in enumerate(p["gammas"]):
        run = coupled_run(cfg.with_(gamma=float(g)), seed, boxes=boxes)
        first = first or run
        last = run.last_index
        t = run.times[: last + 1]
        m = run.box_y[: last + 1, 0]
        sel = (t >= p.get("fit_from", cfg.t_max / 2)) & (m > 0)
        if run.survived and sel.sum() >= 3:
            values[f"alpha_g{gi}"] = float(np.polyfit(t[sel], np.log(m[sel]), 1)[0])
        empty = np.nonzero(m[1:] <= 0)[0]
        values[f"first_empty_g{gi}"] = float(t[empty[0] + 1]) if empty.size else None
        values[f"survived_g{gi}"] = run.survived
    summary = _base_summary(index, seed, first, cfg)
    summary.values = values
    return summary, _coupled_record(index, first, {})


def _agg_conjecture(scn: Scenario, summaries):
    cfg = scn.cfg
    st: Dict[str, Any] = {"n_replicates": len(summaries)}
    for gi, g in enumerate(scn.params["gammas"]):
        alive = [s for s in summaries if s.values.get(f"survived_g{gi}")]
        st[f"gamma_g{gi}"] = float(g)
        st[f"alpha_g{gi}"] = _ci([s.values.get(f"alpha_g{gi}") for s in alive])
        st[f"window_g{gi}"] = [cfg.beta + g * cfg.d, cfg.beta]
        st[f"fraction_box_emptied_g{gi}"] = (float(np.mean([s.values.get(f"first_empty_g{gi}") is not None
                                                            for s in alive])) if alive else None)
    return st


# --- registry -------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioKind:
    name: str
    criterion: Optional[int]
    replicate: Callable
    aggregate: Callable
    rules: Callable
    gating: bool
    mode: Mode
    conditioning: str
    params: Dict[str, Any] = field(default_factory=dict)
    description: str = ""


def _no_rules(p):
    return ()


KINDS: Dict[str, ScenarioKind] = {k.name: k for k in [
    ScenarioKind("extinction_probability", 1, _mass_replicate, _agg_extinction_probability,
                 _rules_extinction_probability, True, Mode.MASS_ONLY, "none",
                 {"output_dt": 1.0, "method": "exact", "abs_tolerance": 0.02, "times": []},
                 "extinction frequency vs exp(-2 beta m0)"),
    ScenarioKind("mass_martingale", 2, _mass_replicate, _agg_mass_martingale, _rules_mass_martingale,
                 True, Mode.MASS_ONLY, "none",
                 {"output_dt": 1.0, "method": "exact", "times": [1.0, 5.0, 10.0], "laplace_t": 5.0,
                  "laplace_lambda": 1.0, "z_max": 3.0},
                 "martingale exp(-beta t) M_t and its Laplace transform"),
    ScenarioKind("coupling_convergence", 3, _coupling_replicate, _agg_coupling, _rules_coupling,
                 True, Mode.COUPLED, "none",
                 {"gammas": [1.0, -0.2], "ratio_band": [1.5, 3.0], "min_in_band": 16, "abs_bound": None},
                 "pathwise correspondence error at h and h/2"),
    ScenarioKind("attractive_convergence", 4, _attractive_replicate, _agg_attractive, _rules_attractive,
                 True, Mode.COUPLED, "survival",
                 {"record_times": [1.0, 2.0, 4.0, 8.0, 12.0], "bl_ordinary_max": 0.05, "zbar_max": 0.05,
                  "bl_interacting_max": 0.06, "min_survivors": 200},
                 "Gaussian limits and COM decay on survival"),
    ScenarioKind("extinction_point", 5, _extinction_replicate, _agg_extinction_point,
                 _rules_extinction_point, True, Mode.COUPLED, "extinction",
                 {"min_particles": 5, "spread_fraction": 0.5, "min_fraction": 0.8,
                  "tolerance_factor": 10.0, "snapshot_levels": 5},
                 "concentration at a random point on extinction"),
    ScenarioKind("repelling_com", 6, _repelling_replicate, _agg_repelling, _rules_repelling,
                 True, Mode.COUPLED, "survival",
                 {"t_pair": [20.0, 30.0], "floor": 1e-3, "floor_fraction": 0.9, "change_max": 0.10,
                  "ybar_band": None},
                 "exponential COM divergence in the repelling regime"),
    ScenarioKind("martingale_problem", 7, _martingale_replicate, _agg_martingale, _rules_martingale,
                 True, Mode.COUPLED, "none",
                 {"phi": "tanh", "times": [1.0, 5.0], "var_band": [0.8, 1.2], "z_max": 3.0},
                 "martingale-problem residual and quadratic variation"),
    ScenarioKind("invariant_suite", 8, _invariant_replicate, _agg_invariants, _rules_invariants,
                 True, Mode.COUPLED, "none", {}, "deterministic invariants"),
    ScenarioKind("volterra_identity", 9, _volterra_replicate, _agg_volterra, _rules_volterra,
                 True, Mode.COUPLED, "none", {}, "Volterra relation between the two COMs"),
    ScenarioKind("local_limit", None, _local_replicate, _agg_local, _no_rules, False, Mode.COUPLED,
                 "survival", {"boxes": [[-1.0, 1.0], [-2.0, 2.0]], "times": [2.0, 4.0, 6.0, 8.0]},
                 "box mass ratios vs Lebesgue ratio (diagnostic)"),
    ScenarioKind("local_extinction", None, _local_replicate, _agg_local, _no_rules, False, Mode.COUPLED,
                 "survival", {"boxes": [[-1.0, 1.0]], "times": [2.0, 4.0, 8.0]},
                 "box occupancy decay (diagnostic)"),
    ScenarioKind("conjecture_scan", None, _conjecture_replicate, _agg_conjecture, _no_rules, False,
                 Mode.COUPLED, "survival",
                 {"gammas": [-0.2, 0.0, -1.5], "boxes": [[-1.0, 1.0]], "fit_from": None},
                 "growth exponent of interacting box mass (exploratory)"),
]}


def scenario_names() -> List[str]:
    return list(KINDS)


def make_scenario(name: str, cfg: ValidatedConfig, replicates: int, conditioning: Optional[str] = None,
                  params: Optional[dict] = None) -> Scenario:
    if name not in KINDS:
        raise ConfigError(f"unknown scenario {name!r}")
    kind = KINDS[name]
    merged = dict(kind.params)
    for k, v in (params or {}).items():
        if k not in merged:
            raise ConfigError(f"unknown parameter {k!r} for scenario {name!r}")
        merged[k] = v
    if merged.get("fit_from", 0) is None:
        merged["fit_from"] = cfg.t_max / 2
    if name == "repelling_com" and not (-cfg.beta / 2 < cfg.gamma < 0):
        warnings.warn("gamma outside (-beta/2, 0): repelling run is exploratory", stacklevel=2)
    if name == "attractive_convergence" and not cfg.gamma > 0:
        raise ConfigError("attractive_convergence needs gamma > 0")
    if name == "martingale_problem" and merged["phi"] not in ("tanh", "gaussian-bump", "constant"):
        raise ConfigError(f"unknown test function {merged['phi']!r}")
    if kind.mode is Mode.MASS_ONLY and cfg.mode is not Mode.MASS_ONLY:
        cfg = cfg.with_(mode=Mode.MASS_ONLY)
    scn = Scenario(name=name, cfg=cfg, replicates=int(replicates),
                   conditioning=conditioning or kind.conditioning,
                   observables=tuple(sorted(merged)), pass_rules=kind.rules(merged),
                   gating=kind.gating, params=merged, description=kind.description)
    return scn
