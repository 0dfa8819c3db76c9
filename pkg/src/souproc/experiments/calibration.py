"""Calibration runs that pin the data-derived thresholds.

Each calibration uses the built-in scenario with a seed base disjoint from
the acceptance seeds (``seed + CALIBRATION_OFFSET``) and a threshold rule
fixed in advance:

* coupling_convergence ``abs_bound``: 2 x the largest sup error at h;
* repelling_com ``ybar_band``: 1.5 x the median of |Ybar_t2 - Ybar_t1|.

The resulting values are written into the built-in configs by hand and
never tuned afterwards.
"""
from __future__ import annotations

from dataclasses import replace
from typing import Dict

CALIBRATION_OFFSET = 1_000_000

COUPLING_SAFETY = 2.0
REPELLING_SAFETY = 1.5


def _calibration_config(name: str, replicates=None, **param_overrides):
    from ..io import builtin_config
    rc = builtin_config(name)
    params = dict(rc.params)
    params.update(param_overrides)
    rc = replace(rc, params=params, replicates=replicates or rc.replicates)
    return rc.with_seed(rc.sim.seed + CALIBRATION_OFFSET)


def calibrate_coupling(parallelism: int = 1) -> Dict[str, object]:
    from . import run_scenario
    rc = _calibration_config("coupling_convergence", abs_bound=None)
    res = run_scenario(rc.build(), parallelism)
    out = {"seed_base": rc.sim.seed, "replicates": rc.replicates}
    bounds = []
    for gi, g in enumerate(rc.params["gammas"]):
        m = res.statistics[f"max_err_h_g{gi}"]
        out[f"max_err_h_gamma={g:g}"] = m
        bounds.append(float(f"{COUPLING_SAFETY * m:.3g}"))
    out["abs_bound"] = bounds
    return out


def calibrate_repelling(parallelism: int = 1, replicates: int = 240) -> Dict[str, object]:
    from . import run_scenario
    rc = _calibration_config("repelling_com", replicates=replicates, ybar_band=None)
    res = run_scenario(rc.build(), parallelism)
    med = res.statistics["median_dY"]
    return {"seed_base": rc.sim.seed, "replicates": rc.replicates,
            "n_survived": res.statistics["n_survived"], "median_dY": med,
            "fraction_above_floor": res.statistics["fraction_above_floor"],
            "median_rel_change": res.statistics["median_rel_change"],
            "ybar_band": float(f"{REPELLING_SAFETY * med:.3g}")}


def calibrate_extinction_point(parallelism: int = 1, replicates: int = 300) -> Dict[str, object]:
    """Spread-halving frequency on calibration seeds (the 80% rule is fixed)."""
    from . import run_scenario
    rc = _calibration_config("extinction_point", replicates=replicates)
    res = run_scenario(rc.build(), parallelism)
    st = res.statistics
    return {"seed_base": rc.sim.seed, "n_extinct": st["n_extinct"],
            "spread_fraction": st["spread_fraction"], "dY_ratio": st["dY_ratio"],
            "max_residual_over_tolerance": st["max_residual_over_tolerance"]}


CALIBRATIONS = {"coupling_convergence": calibrate_coupling,
                "repelling_com": calibrate_repelling,
                "extinction_point": calibrate_extinction_point}
