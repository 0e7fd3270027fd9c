"""Experiment orchestration: configs, deterministic runs, persistence.

Every experiment draws its randomness exclusively from (master_seed, replica
index), so a rerun with the same config writes byte-identical raw records.
Raw records go to an append-only JSONL file (capped at record_limit lines),
reports to a JSON file, and summarize() folds report files into one CSV.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np

from . import branching, diffusion, stats, walk
from .cookie_env import (
    Environment,
    StackDistribution,
    delta_of,
    expected_first_cookie,
    flip,
    preset,
)

EXPERIMENT_KINDS = (
    "occupation_beta",
    "critical_uniform",
    "excursion_tail",
    "return_tail",
    "coupling_audit",
    "diffusion_hit",
    "pbm_occupation",
    "da_bridge",
    "time_change_marginal",
    "bp_lifetime_ratios",
)

_DEFAULT_TOLERANCES = {
    "occupation_beta": {"ks": 0.05},
    "critical_uniform": {"ks": 0.15},
    "excursion_tail": {
        "ratio_lo": 0.8,
        "ratio_hi": 1.25,
        "decay_factor": 0.5,
        "factor2_rel": 0.25,
        "ruin_rel": 0.05,
        "slope_abs": 0.05,
    },
    "return_tail": {"rel": 0.15},
    "coupling_audit": {"violations": 0},
    "diffusion_hit": {"abs": 0.02},
    "pbm_occupation": {"ks": 0.05, "pathwise": 1e-12},
    "da_bridge": {"ks": 0.05},
    "time_change_marginal": {"ks": 0.07, "shape_fail_frac": 0.10, "shape_stat": 0.10},
    "bp_lifetime_ratios": {"median_dev": 0.2, "ks": 0.1},
}


@dataclass
class ExperimentConfig:
    """One experiment: kind, environment law, scale, seed, and output paths."""

    kind: str
    distribution: StackDistribution
    n_grid: List[int] = field(default_factory=lambda: [1024])
    replicas: int = 1000
    cap: int = 10**6
    dt: float = 1e-3
    master_seed: int = 20240
    out_dir: str = "results"
    name: Optional[str] = None
    record_limit: int = 20000
    threads: Optional[int] = None
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if isinstance(self.distribution, str):
            self.distribution = preset(self.distribution)
        elif isinstance(self.distribution, dict):
            self.distribution = StackDistribution.from_json(json.dumps(self.distribution))
        if not self.n_grid:
            raise ValueError("n_grid must be nonempty")
        if self.replicas < 1:
            raise ValueError("replica count must be >= 1")
        if self.cap <= 0:
            raise ValueError("cap must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.name is None:
            self.name = self.kind

    def tol(self, key: str) -> float:
        base = dict(_DEFAULT_TOLERANCES[self.kind])
        base.update(self.tolerances)
        return base[key]

    def to_json(self) -> str:
        doc = asdict(self)
        doc["distribution"] = json.loads(self.distribution.to_json())
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        doc = json.loads(text)
        return cls(**doc)


# ---------------------------------------------------------------------------
# per-kind runners (each returns (reports, record dicts))
# ---------------------------------------------------------------------------

def _env_arrays(dist: StackDistribution):
    env = Environment(dist, 0)
    return env.atom_probs, env.atom_cumw, np.int64(dist.m)


def _seed_info(cfg: ExperimentConfig) -> dict:
    return {"master_seed": cfg.master_seed, "replicas": cfg.replicas}


def _run_occupation_beta(cfg: ExperimentConfig):
    dist = cfg.distribution
    delta = delta_of(dist)
    if not (0.0 <= delta < 1.0):
        raise ValueError("occupation_beta needs total drift in [0, 1)")
    n = int(cfg.n_grid[0])
    probs, cumw, m = _env_arrays(dist)
    ap = np.empty(cfg.replicas, dtype=np.int64)
    am = np.empty(cfg.replicas, dtype=np.int64)
    uu = np.empty(cfg.replicas, dtype=np.int64)
    dd = np.empty(cfg.replicas, dtype=np.int64)
    walk.occupation_batch(cfg.master_seed, probs, cumw, m, n, cfg.replicas, ap, am, uu, dd)
    sample = stats.EmpiricalSample.from_values(ap / n)
    a, b = (1.0 + delta) / 2.0, (1.0 - delta) / 2.0
    dist_ks = stats.ks_statistic(sample, stats.beta_cdf_callable(a, b))
    report = stats.make_report(
        name=f"{cfg.name}_ks",
        reference=f"Beta({a:g},{b:g}) occupation fraction at n={n}",
        value=dist_ks,
        tolerance=cfg.tol("ks"),
        sample_size=cfg.replicas,
        seeds=_seed_info(cfg),
        details={"delta": delta},
    )
    records = (
        walk.WalkRecord(r, n, int(ap[r]), int(am[r]), int(uu[r]), int(dd[r])).to_json_dict()
        for r in range(min(cfg.replicas, cfg.record_limit))
    )
    return [report], records


def _run_critical_uniform(cfg: ExperimentConfig):
    dist = cfg.distribution
    if abs(delta_of(dist)) != 1.0:
        raise ValueError("critical_uniform needs |delta| = 1")
    n = int(cfg.n_grid[0])
    probs, cumw, m = _env_arrays(dist)
    ap = np.empty(cfg.replicas, dtype=np.int64)
    am = np.empty(cfg.replicas, dtype=np.int64)
    uu = np.empty(cfg.replicas, dtype=np.int64)
    dd = np.empty(cfg.replicas, dtype=np.int64)
    walk.occupation_batch(cfg.master_seed, probs, cumw, m, n, cfg.replicas, ap, am, uu, dd)
    minority = am if delta_of(dist) > 0 else ap
    vals = np.where(minority >= 1, np.log(np.maximum(minority, 1)) / math.log(n), 0.0)
    dist_ks = stats.ks_statistic(stats.EmpiricalSample.from_values(vals), stats.uniform_cdf)
    report = stats.make_report(
        name=f"{cfg.name}_ks",
        reference=f"Uniform[0,1] law of log occupation exponent at n={n}",
        value=dist_ks,
        tolerance=cfg.tol("ks"),
        sample_size=cfg.replicas,
        seeds=_seed_info(cfg),
    )
    records = (
        walk.WalkRecord(r, n, int(ap[r]), int(am[r]), int(uu[r]), int(dd[r])).to_json_dict()
        for r in range(min(cfg.replicas, cfg.record_limit))
    )
    return [report], records


def _depth_survival(cfg, dist, levels, replicas, seed_offset=0):
    """P(sigma_0 >= n) on the level grid via the fast engine (depth = sigma_0).

    At critical drift the exact engine hands sizes above switch_level to the
    log-grid diffusion walk (unbiased level hitting, smoothly randomized
    generation counts), which the 1/log-scale tail statistics cannot see.
    """
    delta = delta_of(dist)
    probs, cumw, m = _env_arrays(dist)
    gen_cap = int(max(levels))
    switch = int(cfg.options.get("switch_level", 2048)) if delta == 1.0 else 0
    dl = float(cfg.options.get("dl", 0.25))
    sigma = np.empty(replicas, dtype=np.float64)
    aux_n = min(replicas, cfg.record_limit)
    aux_prog = np.empty(aux_n, dtype=np.float64)
    aux_max = np.empty(aux_n, dtype=np.float64)
    branching.depth_tail_batch(
        cfg.master_seed + seed_offset, probs, cumw, m, True, 1, gen_cap, replicas,
        sigma, aux_prog, aux_max, switch, dl,
    )
    ps = np.array([np.mean(sigma >= lv) for lv in levels])
    return ps, sigma, aux_prog, aux_max


def _run_excursion_tail(cfg: ExperimentConfig):
    dist = cfg.distribution
    delta = delta_of(dist)
    mode = cfg.options.get("mode", "auto")
    if mode == "auto":
        if dist.m == 0:
            mode = "ruin"
        elif abs(delta) == 1.0:
            mode = "critical"
        else:
            mode = "polynomial"
    levels = [int(v) for v in cfg.n_grid]
    reports = []
    records: List[dict] = []
    if mode == "ruin":
        probs, cumw, m = _env_arrays(dist)
        worst = 0.0
        details = {}
        for j, lv in enumerate(levels):
            out = np.empty(cfg.replicas, dtype=np.int64)
            walk.race_batch(
                cfg.master_seed + j, probs, cumw, m, 1, 0, lv, cfg.cap, cfg.replicas, out
            )
            p_hat = float(np.mean(out == 1))
            rel = abs(p_hat - 1.0 / lv) * lv
            worst = max(worst, rel)
            details[f"p_hat_{lv}"] = p_hat
        reports.append(
            stats.make_report(
                name=f"{cfg.name}_ruin",
                reference="fair-walk exit law P_1(T_n < T_0) = 1/n",
                value=worst,
                tolerance=cfg.tol("ruin_rel"),
                sample_size=cfg.replicas,
                seeds=_seed_info(cfg),
                details=details,
            )
        )
        return reports, records

    ps, sigma, aux_prog, aux_max = _depth_survival(cfg, dist, levels, cfg.replicas)
    seq, ratios = stats.tail_constant_sequence(levels, ps)
    if mode == "critical":
        lo, hi = cfg.tol("ratio_lo"), cfg.tol("ratio_hi")
        dev = 0.0
        for r in ratios:
            dev = max(dev, lo - r, r - hi)
        reports.append(
            stats.make_report(
                name=f"{cfg.name}_ratio_band",
                reference=f"dyadic stabilization of (ln n) P(T_n < T_0) in [{lo}, {hi}]",
                value=max(dev, 0.0),
                tolerance=0.0,
                sample_size=cfg.replicas,
                seeds=_seed_info(cfg),
                details={
                    "levels": levels,
                    "p_hat": ps.tolist(),
                    "scaled": seq.tolist(),
                    "ratios": ratios.tolist(),
                },
            )
        )
        if cfg.options.get("factor2", True):
            n_star = int(cfg.options.get("factor2_level", 4096))
            m_star = n_star * n_star
            probs, cumw, m = _env_arrays(dist)
            reps2 = int(cfg.options.get("factor2_replicas", cfg.replicas))
            out = np.empty(reps2, dtype=np.float64)
            thr = float((m_star + 1) // 2)
            switch = int(cfg.options.get("switch_level", 2048))
            dl = float(cfg.options.get("dl", 0.25))
            branching.progeny_race_batch(
                cfg.master_seed + 101, probs, cumw, m, True, 1, thr, reps2, out,
                switch, dl,
            )
            p_dur = float(np.mean(2 * out - 1 > m_star))
            p_depth = float(np.mean(sigma >= n_star))
            s_dur = math.log(m_star) * p_dur
            s_depth = math.log(n_star) * p_depth
            rel = abs(s_dur / s_depth - 2.0) / 2.0 if s_depth > 0 else float("inf")
            reports.append(
                stats.make_report(
                    name=f"{cfg.name}_factor2",
                    reference="scaled duration tail at n^2 = twice scaled depth tail at n",
                    value=rel,
                    tolerance=cfg.tol("factor2_rel"),
                    sample_size=reps2,
                    seeds=_seed_info(cfg),
                    details={
                        "n": n_star,
                        "scaled_duration": s_dur,
                        "scaled_depth": s_depth,
                    },
                )
            )
    else:  # polynomial regime: the scaled sequence must decay
        decay = float(seq[-1] / seq[0])
        reports.append(
            stats.make_report(
                name=f"{cfg.name}_decay",
                reference="(ln n) P(T_n < T_0) decays in the non-critical regime",
                value=decay,
                tolerance=cfg.tol("decay_factor"),
                sample_size=cfg.replicas,
                seeds=_seed_info(cfg),
                details={"levels": levels, "p_hat": ps.tolist(), "scaled": seq.tolist()},
            )
        )
        slope = stats.loglog_slope(levels, ps)
        target = -abs(delta - 1.0)
        reports.append(
            stats.make_report(
                name=f"{cfg.name}_slope",
                reference=f"log-log depth-tail slope near {target:g}",
                value=abs(slope - target),
                tolerance=cfg.tol("slope_abs"),
                sample_size=cfg.replicas,
                seeds=_seed_info(cfg),
                details={"slope": slope},
            )
        )
    for r in range(min(cfg.replicas, cfg.record_limit)):
        censored = not np.isfinite(sigma[r])
        records.append(
            branching.BPRecord(
                "+", 1,
                None if censored else int(round(sigma[r])),
                None if censored else int(min(aux_prog[r], 2**62)),
                int(min(aux_max[r], 2**62)), censored,
            ).to_json_dict()
        )
    return reports, records


def _run_return_tail(cfg: ExperimentConfig):
    dist = cfg.distribution
    delta = delta_of(dist)
    if abs(delta) != 1.0:
        raise ValueError("return_tail consistency is a critical-drift check")
    n = int(cfg.n_grid[-1])
    probs, cumw, m = _env_arrays(dist)
    out = np.empty(cfg.replicas, dtype=np.int64)
    branching.return_race_batch(cfg.master_seed, probs, cumw, m, np.int64(n), cfg.replicas, out)
    p_return = float(np.mean(out == 1))
    # excursion side: start next to the origin on the heavy side
    plus_side = delta > 0
    out2 = np.empty(cfg.replicas, dtype=np.float64)
    thr = float((n + 1) // 2)
    branching.progeny_race_batch(
        cfg.master_seed + 1, probs, cumw, m, plus_side, 1, thr, cfg.replicas, out2, 0, 0.25
    )
    p_exc = float(np.mean(2 * out2 - 1 > n))
    factor = expected_first_cookie(dist) if plus_side else 1.0 - expected_first_cookie(dist)
    report = stats.ret1_consistency(
        n, p_return, p_exc, factor, cfg.tol("rel"), cfg.replicas, _seed_info(cfg)
    )
    records = [
        {"replica": r, "n": n, "return_exceeds": bool(out[r] == 1)}
        for r in range(min(cfg.replicas, cfg.record_limit))
    ]
    return [report], records


def _run_coupling_audit(cfg: ExperimentConfig):
    dist = cfg.distribution
    probs, cumw, m = _env_arrays(dist)
    reps = cfg.replicas
    depth = np.empty(reps, dtype=np.int64)
    dur = np.empty(reps, dtype=np.int64)
    sigma = np.empty(reps, dtype=np.int64)
    prog = np.empty(reps, dtype=np.int64)
    cens = np.empty(reps, dtype=np.int64)
    viol = np.empty(reps, dtype=np.int64)
    branching.coupling_audit_batch(
        cfg.master_seed, probs, cumw, m, cfg.cap, reps, depth, dur, sigma, prog, cens, viol
    )
    n_viol = int(viol.sum())
    n_cens = int(cens.sum())
    reports = [
        stats.make_report(
            name=f"{cfg.name}_identities",
            reference="depth == extinction time and duration == 2*progeny - 1, exactly",
            value=n_viol,
            tolerance=cfg.tol("violations"),
            sample_size=reps,
            seeds=_seed_info(cfg),
            details={"censored": n_cens, "cap": cfg.cap},
        )
    ]
    squeeze_paths = int(cfg.options.get("squeeze_paths", 0))
    if squeeze_paths:
        squeeze_n = int(cfg.options.get("squeeze_n", 10**5))
        total_viol = 0
        total_checked = 0
        for r in range(squeeze_paths):
            env = Environment(dist, walk_seed_for(cfg.master_seed + 7, r))
            v, c = branching.squeeze_audit(env, squeeze_n)
            total_viol += v
            total_checked += c
        reports.append(
            stats.make_report(
                name=f"{cfg.name}_squeeze",
                reference="occupation counts squeezed by coupled progeny at every time",
                value=total_viol,
                tolerance=cfg.tol("violations"),
                sample_size=total_checked,
                seeds={"master_seed": cfg.master_seed + 7, "paths": squeeze_paths},
                details={"n": squeeze_n},
            )
        )
    records = [
        {
            "replica": r,
            "depth": int(depth[r]),
            "duration": int(dur[r]),
            "sigma0": int(sigma[r]),
            "progeny": int(prog[r]),
            "censored": bool(cens[r]),
            "violation": bool(viol[r]),
        }
        for r in range(min(reps, cfg.record_limit))
    ]
    return reports, records


def _run_diffusion_hit(cfg: ExperimentConfig):
    e = math.e
    pairs = cfg.options.get("pairs", [[e, e * e], [e, e**4], [e**3, e**4]])
    max_steps = int(cfg.options.get("horizon", 2000.0) / cfg.dt)
    reports = []
    records = []
    worst = 0.0
    details = {}
    for j, (y0, hi) in enumerate(pairs):
        out = np.empty(cfg.replicas, dtype=np.int64)
        diffusion.bessel_hit_batch(
            cfg.master_seed + j, float(y0), 1.0, float(hi), cfg.dt, max_steps, cfg.replicas, out
        )
        resolved = out != 0
        p_hat = float(np.mean(out[resolved] == 1)) if resolved.any() else float("nan")
        target = math.log(y0) / math.log(hi)
        err = abs(p_hat - target)
        worst = max(worst, err)
        details[f"pair{j}"] = {
            "y": y0,
            "R": hi,
            "p_hat": p_hat,
            "target": target,
            "censored": int(np.sum(~resolved)),
        }
        records.append({"pair": j, "y": y0, "R": hi, "p_hat": p_hat, "target": target})
    reports.append(
        stats.make_report(
            name=f"{cfg.name}_hit_law",
            reference="P_y(tau_R < tau_1) = ln y / ln R for the upward square-root diffusion",
            value=worst,
            tolerance=cfg.tol("abs"),
            sample_size=cfg.replicas * len(pairs),
            seeds=_seed_info(cfg),
            details=details,
        )
    )
    return reports, records


def _run_pbm_occupation(cfg: ExperimentConfig):
    alpha = float(cfg.options.get("alpha", 0.5))
    beta = float(cfg.options.get("beta", -0.5))
    nsteps = int(round(1.0 / cfg.dt))
    frac = np.empty(cfg.replicas, dtype=np.float64)
    diffusion.pbm_occupation_batch(
        cfg.master_seed, alpha, beta, cfg.dt, nsteps, cfg.replicas, frac
    )
    a, b = (1.0 - beta) / 2.0, (1.0 - alpha) / 2.0
    ks = stats.ks_statistic(
        stats.EmpiricalSample.from_values(frac), stats.beta_cdf_callable(a, b)
    )
    reports = [
        stats.make_report(
            name=f"{cfg.name}_ks",
            reference=f"Beta({a:g},{b:g}) occupation fraction of the perturbed motion",
            value=ks,
            tolerance=cfg.tol("ks"),
            sample_size=cfg.replicas,
            seeds=_seed_info(cfg),
            details={"alpha": alpha, "beta": beta},
        )
    ]
    # two routes to the beta = 0 solution must agree pathwise
    w, bpath, mx, mn, state = diffusion.simulate_pbm(alpha, 0.0, cfg.dt, 1.0, cfg.master_seed)
    closed = diffusion.pbm_beta_zero_closed_form(bpath, alpha)
    dev = float(np.max(np.abs(w - closed)))
    reports.append(
        stats.make_report(
            name=f"{cfg.name}_beta0_pathwise",
            reference="fixed-point recursion equals the closed form on shared increments",
            value=dev,
            tolerance=cfg.tol("pathwise"),
            sample_size=len(w),
            seeds={"master_seed": cfg.master_seed},
            details={"alpha": alpha},
        )
    )
    records = [
        {"replica": r, "occupation_fraction": float(frac[r])}
        for r in range(min(cfg.replicas, cfg.record_limit))
    ]
    return reports, records


def _run_da_bridge(cfg: ExperimentConfig):
    dist = cfg.distribution
    if delta_of(dist) != 1.0:
        raise ValueError("the diffusion bridge check runs at critical drift")
    n0 = int(cfg.options.get("start", 10**4))
    eps = float(cfg.options.get("eps", 0.1))
    probs, cumw, m = _env_arrays(dist)
    bp_vals = np.empty(cfg.replicas, dtype=np.float64)
    branching.da_marginal_batch(
        cfg.master_seed, probs, cumw, m, n0, n0, np.int64(int(eps * n0)), cfg.replicas, bp_vals
    )
    nsteps = int(round(1.0 / cfg.dt))
    y_vals = np.empty(cfg.replicas, dtype=np.float64)
    diffusion.bessel_marginal_batch(
        cfg.master_seed + 1, 1.0, cfg.dt, nsteps, eps, cfg.replicas, y_vals
    )
    ks = stats.two_sample_ks(
        stats.EmpiricalSample.from_values(bp_vals),
        stats.EmpiricalSample.from_values(y_vals),
    )
    report = stats.make_report(
        name=f"{cfg.name}_ks",
        reference="scaled critical process marginal vs its diffusion limit at t=1",
        value=ks,
        tolerance=cfg.tol("ks"),
        sample_size=cfg.replicas,
        seeds=_seed_info(cfg),
        details={"start": n0, "eps": eps, "dt": cfg.dt},
    )
    records = [
        {"replica": r, "scaled_bp": float(bp_vals[r]), "diffusion": float(y_vals[r])}
        for r in range(min(cfg.replicas, cfg.record_limit))
    ]
    return [report], records


def _profile_shape_stat(profile: np.ndarray) -> float:
    runmax = np.maximum.accumulate(profile)
    peak = float(runmax[-1])
    if peak <= 0:
        return float("inf")
    return float(np.max(runmax - profile) / peak)


def _run_time_change_marginal(cfg: ExperimentConfig):
    dist = cfg.distribution
    if delta_of(dist) != 1.0:
        raise ValueError("the time-change marginal check runs at critical drift")
    m_clock = int(cfg.options.get("m", 10**4))
    probs, cumw, m = _env_arrays(dist)
    walk_vals = np.empty(cfg.replicas, dtype=np.int64)
    walk.negative_clock_batch(cfg.master_seed, probs, cumw, m, m_clock, cfg.replicas, walk_vals)
    walk_sample = -walk_vals / math.sqrt(m_clock)
    osc_n = int(cfg.options.get("oracle_replicas", cfg.replicas))
    oracle = np.empty(osc_n, dtype=np.float64)
    cens = np.empty(osc_n, dtype=np.int64)
    cap_steps = int(cfg.options.get("oracle_horizon", 4.0e4) / cfg.dt)
    diffusion.pbm_neg_clock_batch(
        cfg.master_seed + 1, 0.0, -1.0, cfg.dt, 1.0, cap_steps, osc_n, oracle, cens
    )
    keep = cens == 0
    ks = stats.two_sample_ks(
        stats.EmpiricalSample.from_values(walk_sample),
        stats.EmpiricalSample.from_values(oracle[keep]),
    )
    reports = [
        stats.make_report(
            name=f"{cfg.name}_ks",
            reference="negative-clock walk marginal vs time-changed perturbed motion",
            value=ks,
            tolerance=cfg.tol("ks"),
            sample_size=cfg.replicas,
            seeds=_seed_info(cfg),
            details={"m": m_clock, "oracle_censored": int(np.sum(~keep))},
        )
    ]
    shape_reps = int(cfg.options.get("shape_replicas", 0))
    records = [
        {"replica": r, "neg_clock_value": float(walk_sample[r])}
        for r in range(min(cfg.replicas, cfg.record_limit))
    ]
    if shape_reps:
        m_plus = int(cfg.options.get("shape_m", 10**6))
        ngrid = int(cfg.options.get("shape_grid", 512))
        prof = np.empty((shape_reps, ngrid), dtype=np.int64)
        pcens = np.empty(shape_reps, dtype=np.int64)
        walk.positive_clock_profile_batch(
            cfg.master_seed + 2, probs, cumw, m, m_plus, 4 * m_plus, shape_reps, prof, pcens
        )
        thresh = cfg.tol("shape_stat")
        stats_vals = []
        bad = 0
        usable = 0
        for r in range(shape_reps):
            if pcens[r]:
                continue
            usable += 1
            s = _profile_shape_stat(prof[r])
            stats_vals.append(s)
            if s >= thresh:
                bad += 1
        frac_bad = bad / usable if usable else 1.0
        reports.append(
            stats.make_report(
                name=f"{cfg.name}_shape",
                reference="positive-clock profile close to a nondecreasing running maximum",
                value=frac_bad,
                tolerance=cfg.tol("shape_fail_frac"),
                sample_size=usable,
                seeds={"master_seed": cfg.master_seed + 2},
                details={
                    "m": m_plus,
                    "stat_threshold": thresh,
                    "median_stat": float(np.median(stats_vals)) if stats_vals else None,
                    "censored": int(pcens.sum()),
                },
            )
        )
    return reports, records


def _run_bp_lifetime_ratios(cfg: ExperimentConfig):
    dist = cfg.distribution
    if delta_of(dist) != 1.0:
        raise ValueError("lifetime geometry is a critical-drift check")
    y = int(cfg.options.get("y", 10**4))
    if y <= 1:
        raise ValueError("lifetime ratios need start y > 1")
    switch = int(cfg.options.get("switch_level", 2048))
    dl = float(cfg.options.get("dl", 0.25))
    probs, cumw, m = _env_arrays(dist)
    ln_max = np.empty(cfg.replicas, dtype=np.float64)
    ln_prog = np.empty(cfg.replicas, dtype=np.float64)
    branching.lifetime_hybrid_batch(
        cfg.master_seed, probs, cumw, m, y, switch, dl, cfg.replicas, ln_max, ln_prog
    )
    ratio_area = ln_prog / ln_max
    ratio_start = math.log(y) / ln_max
    med = float(np.median(ratio_area))
    reports = [
        stats.make_report(
            name=f"{cfg.name}_area_median",
            reference="log progeny over log lifetime max concentrates at 2",
            value=abs(med - 2.0),
            tolerance=cfg.tol("median_dev"),
            sample_size=cfg.replicas,
            seeds=_seed_info(cfg),
            details={"median": med, "y": y},
        ),
        stats.make_report(
            name=f"{cfg.name}_uniform_ks",
            reference="log start over log lifetime max is Uniform[0,1]",
            value=stats.ks_statistic(
                stats.EmpiricalSample.from_values(ratio_start), stats.uniform_cdf
            ),
            tolerance=cfg.tol("ks"),
            sample_size=cfg.replicas,
            seeds=_seed_info(cfg),
            details={"y": y, "switch_level": switch, "dl": dl},
        ),
    ]
    records = [
        {"replica": r, "ln_max": float(ln_max[r]), "ln_progeny": float(ln_prog[r]), "start": y}
        for r in range(min(cfg.replicas, cfg.record_limit))
    ]
    return reports, records


_RUNNERS = {
    "occupation_beta": _run_occupation_beta,
    "critical_uniform": _run_critical_uniform,
    "excursion_tail": _run_excursion_tail,
    "return_tail": _run_return_tail,
    "coupling_audit": _run_coupling_audit,
    "diffusion_hit": _run_diffusion_hit,
    "pbm_occupation": _run_pbm_occupation,
    "da_bridge": _run_da_bridge,
    "time_change_marginal": _run_time_change_marginal,
    "bp_lifetime_ratios": _run_bp_lifetime_ratios,
}


def walk_seed_for(master_seed: int, replica: int) -> int:
    from .cookie_env import py_derived_seed

    return py_derived_seed(master_seed, replica)


def run_experiment(cfg: ExperimentConfig):
    """Execute one experiment; returns its reports after persisting everything.

    Raw records are appended as JSON lines (capped at cfg.record_limit);
    reports land in <out_dir>/<name>.reports.json.  Reruns with an identical
    config are byte-identical.
    """
    if cfg.threads:
        import numba

        numba.set_num_threads(cfg.threads)
    out_dir = Path(os.environ.get("ERWLAB_OUT", cfg.out_dir))
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    reports, records = _RUNNERS[cfg.kind](cfg)
    rec_path = out_dir / f"{cfg.name}.records.jsonl"
    rep_path = out_dir / f"{cfg.name}.reports.json"
    try:
        with rec_path.open("w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True))
                fh.write("\n")
        with rep_path.open("w") as fh:
            json.dump([r.to_json_dict() for r in reports], fh, sort_keys=True, indent=1)
            fh.write("\n")
        (out_dir / f"{cfg.name}.config.json").write_text(cfg.to_json() + "\n")
    except OSError as exc:
        raise OSError(f"failed writing results under {out_dir}: {exc}") from exc
    return reports


def summarize(paths: Iterable, csv_path: Optional[str] = None):
    """Fold report files into one CSV table; returns (csv_text, failures).

    Accepts report-file paths or directories (scanned for *.reports.json).
    Malformed entries are reported with their location and skipped.
    """
    files: List[Path] = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.glob("*.reports.json")))
        else:
            files.append(p)
    lines = ["experiment,statistic,value,tolerance,pass"]
    failures = 0
    problems = []
    for f in files:
        try:
            docs = json.loads(f.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            problems.append(f"{f}: {exc}")
            continue
        for i, doc in enumerate(docs):
            try:
                ok = bool(doc["passed"])
                lines.append(
                    f"{f.stem.replace('.reports', '')},{doc['name']},"
                    f"{doc['value']:.6g},{doc['tolerance']:.6g},{ok}"
                )
                if not ok:
                    failures += 1
            except (KeyError, TypeError) as exc:
                problems.append(f"{f} entry {i}: {exc}")
    text = "\n".join(lines) + "\n"
    if csv_path:
        Path(csv_path).write_text(text)
    return text, failures, problems
