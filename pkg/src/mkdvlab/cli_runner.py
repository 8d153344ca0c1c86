"""Experiment driver: `mkdvlab <subcommand> --config FILE [--seed N] [--out DIR]`.

Configs are YAML (or JSON) files with a schema version, an optional `params`
block of analysis exponents and one block named after the subcommand:

    schema_version: 1
    params: {mu: 0.3, nu: 0.45, gamma: 0.03}
    fre: {spec_id: FRE_PSI}

Every run writes summary.json (status, build info, parameter echo, artifact
list and results) next to the module artifacts.  Outputs contain no clocks or
host data, so a fixed (config, seed) pair reproduces them byte for byte.
Set MKDVLAB_THREADS to bound the FFT worker count.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy import fft as sfft

from . import __version__
from .errors import ConfigInvalid, MkdvLabError
from .params import RULES, AnalysisParams, beta_lower, check_rules, rho_upper
from .restriction_norms import BOURGAIN_RULES, check_bourgain

SCHEMA_VERSION = 1
SUBCOMMANDS = ("profile", "fre", "evolve", "infr", "bourgain")
RULES_MANIFEST = tuple(RULES) + tuple(BOURGAIN_RULES)
THREADS_ENV = "MKDVLAB_THREADS"

EXIT_OK, EXIT_INVALID, EXIT_MODULE = 0, 2, 3


@dataclass
class RunConfig:
    subcommand: str
    block: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str = "out"
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, d, subcommand=None):
        d = dict(d or {})
        sub = subcommand or d.get("subcommand")
        return cls(subcommand=sub, block=d.get(sub) or {} if sub else {}, params=d.get("params") or {},
                   seed=d.get("seed", 0), output_dir=d.get("output_dir", "out"),
                   schema_version=d.get("schema_version", SCHEMA_VERSION))

    def echo(self):
        return {"schema_version": self.schema_version, "subcommand": self.subcommand, "seed": self.seed,
                "params": self.params, self.subcommand: self.block}


def load_config(path):
    text = Path(path).read_text()
    d = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if d is not None and not isinstance(d, dict):
        raise ConfigInvalid("config must be a mapping", path="")
    return d or {}


# ---------------------------------------------------------------- validation

def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate(config: RunConfig):
    """Every violation as a dict {path, rule, clause, text}."""
    out = []

    def bad(path, rule, clause, text):
        out.append({"path": path, "rule": rule, "clause": clause, "text": text})

    if config.schema_version != SCHEMA_VERSION:
        bad("schema_version", "schema", "schema", f"schema_version must be {SCHEMA_VERSION}")
    if config.subcommand not in SUBCOMMANDS:
        bad("subcommand", "schema", "schema", f"subcommand must be one of {', '.join(SUBCOMMANDS)}")
    if not isinstance(config.seed, int) or isinstance(config.seed, bool) or not 0 <= config.seed < 2**64:
        bad("seed", "schema", "schema", "seed must be an integer in [0, 2^64)")
    if not isinstance(config.block, dict):
        bad(str(config.subcommand), "schema", "schema", "module block must be a mapping")
    p = {"mu": 0.3, "nu": 0.45, "gamma": 0.03, "epsilon": 0.05, "T": 0.1, **(config.params or {})}
    for k, v in p.items():
        if v is not None and not _num(v):
            bad(f"params.{k}", "schema", "schema", f"{k} must be a number")
    if all(_num(p[k]) for k in ("mu", "nu", "gamma", "epsilon", "T")):
        beta = p.get("beta")
        if beta is None:
            beta = 0.5 * (beta_lower(p["mu"], p["nu"], p["gamma"]) + 1.0)
        rho = p.get("rho")
        if rho is None:
            rho = 0.5 * rho_upper(p["mu"], p["nu"], p["gamma"], beta)
        if _num(beta) and _num(rho):
            for rule, clause, text in check_rules(p["mu"], p["nu"], p["gamma"], beta, rho, p["epsilon"], p["T"]):
                bad(f"params.{rule.split('_')[0]}", rule, clause, text)
    if config.subcommand == "bourgain" and isinstance(config.block, dict):
        bp = {"mu": 0.3, "b": 0.55, "b_prime": -0.05, "delta": 0.1, **config.block.get("params", {})}
        if all(_num(bp[k]) for k in ("mu", "b", "b_prime", "delta")):
            for rule, clause, text in check_bourgain(bp["mu"], bp["b"], bp["b_prime"], bp["delta"]):
                bad("bourgain.params", rule, clause, text)
        else:
            bad("bourgain.params", "schema", "schema", "Bourgain exponents must be numbers")
    return out


# ---------------------------------------------------------------- artifacts

def _rows_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_info():
    info = {"package": "mkdvlab", "version": __version__, "commit": "unknown", "dirty": None}
    root = Path(__file__).resolve().parents[2]
    try:
        rev = subprocess.run(["git", "-C", str(root), "rev-parse", "--short", "HEAD"],
                             capture_output=True, text=True, timeout=5)
        if rev.returncode == 0:
            info["commit"] = rev.stdout.strip()
            st = subprocess.run(["git", "-C", str(root), "status", "--porcelain", "--untracked-files=no"],
                                capture_output=True, text=True, timeout=5)
            info["dirty"] = bool(st.stdout.strip())
    except (OSError, subprocess.SubprocessError):
        pass
    return info


def _seed32(seed, tag):
    # sub-seeds per stream, derived without Python's salted hash
    h = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(h[:4], "little")


# ---------------------------------------------------------------- module runners

def run_profile(cfg: RunConfig, out: Path):
    from .selfsimilar_profile import SelfSimilarConfig, fourier_profile_model, weighted_w1inf_norm
    from .profile_evolution import make_grid
    b = dict(cfg.block)
    t = float(b.pop("t", 1.0))
    N, Xi = int(b.pop("N", 256)), float(b.pop("Xi", 16.0))
    model = b.pop("model", {"A": 0.04})
    prof = fourier_profile_model(SelfSimilarConfig(**model))
    xi = make_grid(N, Xi)
    s0, sr = prof.s0_at(t, xi), prof.sreg_at(t, xi)
    _rows_csv(out / "profile.csv", ["xi", "re_S0", "im_S0", "re_Sreg", "im_Sreg"],
              zip(xi, s0.real, s0.imag, sr.real, sr.imag))
    res = {"t": t, "N": N, "Xi": Xi,
           "w1inf_0_1": weighted_w1inf_norm(prof, xi, 0.0, 1.0),
           "sup_abs_S": float(np.max(np.abs(s0 + sr)))}
    arts = ["profile.csv"]
    if "ode" in b:
        from .selfsimilar_profile import solve_profile_ode
        o = dict(b["ode"])
        phys = solve_profile_ode(alpha=float(o.get("alpha", 0.0)), amplitude=float(o.get("amplitude", 0.1)),
                                 domain=tuple(o.get("domain", (-40.0, 40.0))))
        _rows_csv(out / "ode_profile.csv", ["y", "S"], zip(phys.y, phys.S))
        arts.append("ode_profile.csv")
        res["ode_points"] = len(phys.y)
    return res, arts


def run_fre(cfg: RunConfig, out: Path):
    from .freq_restricted import EstimateSpec, GridSearchConfig, SamplerConfig, run_ladder
    b = dict(cfg.block)
    params = AnalysisParams(**cfg.params)
    spec = EstimateSpec(b.get("spec_id", "FRE_PSI"), params=params, tau=b.get("tau"), t=b.get("t"),
                        domain=b.get("domain"))
    sampler = SamplerConfig(n_samples=int(b.get("n_samples", 200_000)), seed=_seed32(cfg.seed, "fre"))
    search = GridSearchConfig(n_xi=int(b.get("n_xi", 12)), sampler=sampler)
    rep = run_ladder(spec, tuple(b.get("Ms", (1, 10, 100, 1000, 10000))), search)
    rep.extra["tolerance"] = 0.05
    _write_json(out / "fre_report.json", rep.to_json())
    rep.to_csv(out / "fre_ladder.csv")
    return {"spec_id": spec.id, "fitted_exponent": rep.fitted_exponent,
            "target_exponent": rep.target_exponent, "pass": rep.passed}, ["fre_report.json", "fre_ladder.csv"]


def run_evolve(cfg: RunConfig, out: Path):
    from .profile_evolution import ExperimentConfig, run_experiment
    b = dict(cfg.block)
    b["params"] = {**AnalysisParams(**cfg.params).to_dict(), **b.get("params", {})}
    b["seed"] = _seed32(cfg.seed, "evolve")
    ec = ExperimentConfig.from_dict(b)
    z_spec = dict(ec.z_spec)
    if z_spec.get("kind") == "random" and "seed" not in z_spec:
        z_spec["seed"] = _seed32(cfg.seed, "z")
    ec.z_spec = z_spec
    res = run_experiment(ec)
    res.tracker.to_csv(out / "norms.csv")
    _rows_csv(out / "w_final.csv", ["xi", "re_w", "im_w"], zip(res.w.xi, res.w.values.real, res.w.values.imag))
    return res.summary, ["norms.csv", "w_final.csv"]


def run_infr(cfg: RunConfig, out: Path):
    from .infr_engine import (ThresholdSequence, card_at, infr_identity_check, solver_run,
                              summability_check)
    from .profile_evolution import make_S, make_grid, make_z
    b = dict(cfg.block)
    params = AnalysisParams(**cfg.params)
    N, Xi = int(b.get("N", 32)), float(b.get("Xi", 4.0))
    xi = make_grid(N, Xi)
    S = make_S(b.get("S", {"A": 0.04, "sreg_c": 0.02}))
    z = make_z(xi, b.get("z", {"kind": "gaussian", "amplitude": 0.05, "width": 1.5}),
               np.random.default_rng(_seed32(cfg.seed, "z")))
    w_amp = float(b.get("w0_amplitude", 0.02))
    w0 = w_amp * np.exp(-xi**2 / 2) * np.exp(0.3j * np.sign(xi) * np.tanh(xi))
    run = solver_run(S, z, k=int(b.get("k", 0)), T=float(b.get("T", params.T)), N=N, Xi=Xi,
                     n_steps=int(b.get("n_steps", 100)), w0=w0)
    thr = ThresholdSequence(params.beta, float(b.get("threshold_scale", 1.0)))
    rep = infr_identity_check(int(b.get("J", 1)), int(b.get("k", 0)), run, thresholds=thr, params=params)
    rep.to_csv(out / "infr_residual.csv")
    summ = summability_check(params, thresholds=thr)
    res = {"identity": rep.summary(), "cards": {str(J): card_at(J) for J in range(1, 5)},
           "summability": summ.to_dict()}
    _write_json(out / "infr_report.json", res)
    return {"relative_residual": rep.relative_residual, "pass": rep.passed,
            "summability_nonincreasing": summ.nonincreasing}, ["infr_residual.csv", "infr_report.json"]


def run_bourgain(cfg: RunConfig, out: Path):
    from .restriction_norms import (BourgainParams, SpaceTimeGrid, duhamel_scaling_check, lwp_fixed_point,
                                    psi, time_grid, trilinear_samples)
    from .profile_evolution import ProfileGrid, make_grid
    b = dict(cfg.block)
    p = BourgainParams(**b.get("params", {}))
    checks = b.get("checks", ["duhamel", "trilinear", "lwp"])
    reports = {}
    if "duhamel" in checks:
        t, xi = time_grid(int(b.get("n_t", 2048)), 4.0), make_grid(16, 4.0)
        f = SpaceTimeGrid.from_time(t, xi, (psi(t) * np.cos(2 * t))[:, None] * np.exp(-xi**2)[None, :])
        reports["duhamel"] = duhamel_scaling_check(f, p, tuple(b.get("delta_ladder", (0.4, 0.2, 0.1, 0.05))))
    tp = BourgainParams(**b.get("trilinear_params", {"mu": p.mu, "b": 0.52, "b_prime": -0.46, "delta": p.delta}))
    if "trilinear" in checks:
        reports["trilinear"] = trilinear_samples(tp, n=int(b.get("n_triples", 20)),
                                                 seed=_seed32(cfg.seed, "trilinear"), N=32, Xi=6.0, n_t=256)
    rows = []
    if "lwp" in checks:
        xi = make_grid(32, 6.0)
        amp = float(b.get("amplitude", 0.5))
        u0 = ProfileGrid(xi, amp * np.exp(-xi**2 / 2) + 0j)
        for d in b.get("lwp_deltas", (0.4, 0.2, 0.1)):
            g = lwp_fixed_point(u0, BourgainParams(tp.mu, tp.b, tp.b_prime, float(d)), n_t=1024)
            r = g.report
            rows.append([float(d), r["iterations"], r["contraction"], r["residual"]])
        cs = [r[2] for r in rows]
        reports["lwp"] = {"check_id": "lwp_fixed_point", "params": tp.to_dict(), "values": rows,
                          "fitted": max(r[3] for r in rows), "target": 1e-4,
                          "pass": all(0 < c < 1 for c in cs) and max(r[3] for r in rows) <= 1e-4
                          and all(x > y for x, y in zip(cs, cs[1:]))}
        _rows_csv(out / "lwp.csv", ["delta", "iterations", "contraction", "residual"], rows)
    js = {k: (v.to_dict() if hasattr(v, "to_dict") else v) for k, v in reports.items()}
    _write_json(out / "bourgain_report.json", js)
    arts = ["bourgain_report.json"] + (["lwp.csv"] if rows else [])
    return {k: bool(v["pass"]) for k, v in js.items()}, arts


RUNNERS = {"profile": run_profile, "fre": run_fre, "evolve": run_evolve, "infr": run_infr,
           "bourgain": run_bourgain}


# ---------------------------------------------------------------- dispatch

def _threads():
    v = os.environ.get(THREADS_ENV)
    try:
        return max(1, int(v)) if v else 1
    except ValueError:
        return 1


def run(config: RunConfig):
    """Validate, dispatch and write artifacts; returns (exit status, summary dict)."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"build": build_info(), "config": config.echo(), "artifacts": []}
    violations = validate(config)
    if violations:
        summary.update(status="invalid", violations=violations)
        _write_json(out / "summary.json", summary)
        return EXIT_INVALID, summary
    np.random.seed(_seed32(config.seed, "global"))
    try:
        with sfft.set_workers(_threads()):
            results, arts = RUNNERS[config.subcommand](config, out)
    except ConfigInvalid as e:
        summary.update(status="invalid", violations=[{"path": e.path or "", "rule": "module", "clause": "module",
                                                      "text": str(e)}])
        _write_json(out / "summary.json", summary)
        return EXIT_INVALID, summary
    except (MkdvLabError, ValueError) as e:
        summary.update(status="error", error={"type": type(e).__name__, "message": str(e)})
        _write_json(out / "summary.json", summary)
        return EXIT_MODULE, summary
    summary.update(status="ok", artifacts=sorted(arts), results=results)
    _write_json(out / "summary.json", summary)
    return EXIT_OK, summary


def build_parser():
    ap = argparse.ArgumentParser(prog="mkdvlab", description="mKdV self-similar profile experiments")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="YAML or JSON config file")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--out", default=None, help="output directory (default: config output_dir or ./out)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config)
    except (OSError, yaml.YAMLError, json.JSONDecodeError, ConfigInvalid) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_INVALID
    cfg = RunConfig.from_dict(raw, args.subcommand)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    status, summary = run(cfg)
    if status == EXIT_INVALID:
        for v in summary.get("violations", []):
            print(f"invalid {v['path']}: {v['text']} [{v['clause']}]", file=sys.stderr)
    elif status == EXIT_MODULE:
        print(f"error: {summary['error']['type']}: {summary['error']['message']}", file=sys.stderr)
    else:
        print(json.dumps(_jsonable(summary["results"]), sort_keys=True))
    return status


if __name__ == "__main__":
    sys.exit(main())
