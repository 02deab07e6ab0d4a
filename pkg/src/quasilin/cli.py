"""Experiment orchestration: config ingestion, run modes, report emission.

Configs are TOML with nested sections and key=value leaves, carrying a
``schema_version`` field; every defaulted value is stamped back into the
emitted config echo so a report can be re-run from itself.  Modes:

* ``analyze``: smallness radius, ray ensemble, trapping verdict;
* ``solve``: lifespan-capped nonlinear iteration with diagnostics;
* ``verify``: the fast property suite (transforms, partitions, envelopes,
  operator identities, flow invariants), exit 0 only when all pass;
* ``sweep``: continuous-dependence, time-interval, or resolution tables.

Outputs land under the chosen directory: ``report.json`` (deterministic for
a fixed config and seed: sorted keys, no timestamps), CSV tables, figures
when requested, and wall-clock timings in a separate ``timings.json`` that
is excluded from the determinism contract.

Exit codes: 0 success, 2 config rejected, 3 numerical failure (a partial
report is still written when possible).
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
import time

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # python < 3.11
    import tomli as tomllib

from . import __version__
from .grid import Field, GridSpec, gaussian_field, ring_field
from .hamilton import (
    FlatMetric,
    conformal_bump_metric,
    metric_from_field,
    ring_well_metric,
)
from .model import make_nonlinearity
from .nontrap import TrapConfig, compute_L, escape_check, find_R
from .solver import (
    SolverConfig,
    continuous_dependence,
    direct_reference_solution,
    envelope_trace,
    iterate,
    lifespan_bound,
    local_energy_report,
)
from .spaces import exterior_l1_hs_norm, lp_hs_norm

__all__ = ["main", "run", "load_config", "ConfigError", "emit"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration schema
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "mode": "analyze",
    "seed": 0,
    "threads": 1,
    "grid": {"d": 1, "n": 256, "J": 4},
    "nonlinearity": {
        "metric": "conformal",
        "alpha": 1.0,
        "forcing": "none",
        "beta": 1.0,
        "interaction_class": "quadratic",
    },
    "data": {
        "kind": "gaussian",
        "amplitude": 1.0,
        "width": 1.0,
        "center": [],
        "modulation": [],
        "ring_radius": 4.0,
    },
    "trap": {
        "epsilon": 1e-3,
        "s0": 2.51,
        "kappa": 25.0,
        "c0_margin": 1.0,
        "r_min": 1.0,
        "n_boundary": 16,
        "n_boundary_dirs": 7,
        "n_interior": 12,
        "n_interior_dirs": 8,
        "analytic": "",          # "", "flat", "conformal_bump", "ring_well"
        "analytic_amplitude": 0.0,
        "analytic_radius": 0.0,
        "analytic_width": 1.0,
        "R": 0.0,                # 0 means: run the radius search
        "M": -1.0,               # negative means: measure from the data
    },
    "solver": {
        "T": 0.1,
        "dt": 2e-3,
        "s0": 2.51,
        "n_max": 14,
        "tol": 1e-8,
        "p": 1,
        "lifespan_c_scale": 1.0,
        "lifespan_k_scale": 1.0,
        "cross_check": False,
    },
    "sweep": {
        "kind": "continuous_dependence",
        "deltas": [1e-2, 1e-3, 1e-4],
        "T_values": [],
        "resolutions": [],
    },
    "output": {"formats": ["json", "csv"]},
}

_ALLOWED = {
    "mode": ("analyze", "solve", "verify", "sweep"),
    "data.kind": ("gaussian", "ring", "zero"),
    "nonlinearity.metric": ("flat", "conformal"),
    "nonlinearity.interaction_class": ("quadratic", "cubic"),
    "trap.analytic": ("", "flat", "conformal_bump", "ring_well"),
    "sweep.kind": ("continuous_dependence", "T", "resolution"),
}


def _merge(defaults, user, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"section {path or 'root'} must be a table")
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], val, path + key + ".")
        else:
            if isinstance(defaults[key], bool) != isinstance(val, bool) and \
                    isinstance(defaults[key], bool):
                raise ConfigError(f"{path + key} must be a boolean")
            if isinstance(defaults[key], (int, float)) and not isinstance(val, (int, float)):
                raise ConfigError(f"{path + key} must be numeric")
            if isinstance(defaults[key], str) and not isinstance(val, str):
                raise ConfigError(f"{path + key} must be a string")
            if isinstance(defaults[key], list) and not isinstance(val, list):
                raise ConfigError(f"{path + key} must be a list")
            out[key] = val
    return out


def load_config(path: str) -> dict:
    """Read and validate a TOML run configuration; defaults filled in."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    if "schema_version" in raw and raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {raw['schema_version']} unsupported "
            f"(expected {SCHEMA_VERSION})")
    cfg = _merge(_DEFAULTS, raw)
    for dotted, allowed in _ALLOWED.items():
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        if node[leaf] not in allowed:
            raise ConfigError(f"{dotted} must be one of {allowed}, "
                              f"got {node[leaf]!r}")
    if cfg["mode"] in ("solve", "sweep") and cfg["grid"]["d"] != 1:
        raise ConfigError("solve and sweep modes run at d=1 desk scale")
    return cfg


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def _build_grid(cfg) -> GridSpec:
    g = cfg["grid"]
    return GridSpec(g["d"], g["n"], g["J"])


def _build_nl(cfg, d):
    n = cfg["nonlinearity"]
    return make_nonlinearity(d, metric=n["metric"], alpha=n["alpha"],
                             forcing=n["forcing"], beta=n["beta"],
                             interaction_class=n["interaction_class"])


def _build_data(cfg, spec) -> Field:
    dsec = cfg["data"]
    center = dsec["center"] or None
    mod = dsec["modulation"] or None
    if dsec["kind"] == "zero":
        return Field.zeros(spec)
    if dsec["kind"] == "gaussian":
        return gaussian_field(spec, dsec["amplitude"], dsec["width"],
                              center=center, modulation=mod)
    return ring_field(spec, dsec["amplitude"], dsec["ring_radius"],
                      dsec["width"])


def _build_trap_cfg(cfg) -> TrapConfig:
    t = cfg["trap"]
    return TrapConfig(
        epsilon=t["epsilon"], s0=t["s0"], kappa=t["kappa"],
        c0_margin=t["c0_margin"], r_min=t["r_min"],
        n_boundary=t["n_boundary"], n_boundary_dirs=t["n_boundary_dirs"],
        n_interior=t["n_interior"], n_interior_dirs=t["n_interior_dirs"],
    )


def _build_metric(cfg, spec, nl, u0):
    t = cfg["trap"]
    if t["analytic"] == "flat":
        return FlatMetric(spec.d)
    if t["analytic"] == "conformal_bump":
        return conformal_bump_metric(spec.d, t["analytic_amplitude"],
                                     t["analytic_width"])
    if t["analytic"] == "ring_well":
        return ring_well_metric(spec.d, t["analytic_amplitude"],
                                t["analytic_radius"], t["analytic_width"])
    return metric_from_field(u0, nl)


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

def _trap_section(cfg, spec, nl, u0):
    tcfg = _build_trap_cfg(cfg)
    metric = _build_metric(cfg, spec, nl, u0)
    t = cfg["trap"]
    R = t["R"] if t["R"] > 0 else find_R(u0, nl, tcfg)
    M = t["M"] if t["M"] >= 0 else lp_hs_norm(u0, tcfg.s0, 1).value
    report = compute_L(metric, R, tcfg, M=M, keep_rays=True)
    return report, metric, tcfg


def _mode_analyze(cfg):
    spec = _build_grid(cfg)
    nl = _build_nl(cfg, spec.d)
    u0 = _build_data(cfg, spec)
    trap, metric, tcfg = _trap_section(cfg, spec, nl, u0)
    esc = escape_check(metric, trap.R, tcfg)
    out = {
        "trap": {
            "M": trap.M, "R": trap.R, "L": trap.L,
            "trapped": trap.trapped, "margin": trap.margin,
            "c0_margin": trap.c0_margin,
            "n_rays": trap.n_rays, "capped_rays": trap.capped_rays,
            "worst_seed": None if trap.worst_seed is None else {
                "x": trap.worst_seed.x.tolist(),
                "xi": trap.worst_seed.xi.tolist()},
            "seed_lengths": trap.seed_lengths,
        },
        "escape_check": {"ok": esc["ok"], "min_radius": esc["min_radius"],
                         "n_seeds": esc["n_seeds"]},
    }
    ok = esc["ok"]
    tables = {}
    if trap.worst_ray is not None:
        tables["worst_ray"] = [
            {"t": s[0],
             **{f"x{i}": s[1][i] for i in range(len(s[1]))},
             **{f"xi{i}": s[2][i] for i in range(len(s[2]))},
             "arclength": s[3]}
            for s in trap.worst_ray.samples]
    return out, tables, ok, {"worst_ray": trap.worst_ray}


def _mode_solve(cfg):
    spec = _build_grid(cfg)
    nl = _build_nl(cfg, spec.d)
    u0 = _build_data(cfg, spec)
    s = cfg["solver"]
    scfg = SolverConfig(T=s["T"], dt=s["dt"], s0=s["s0"], n_max=s["n_max"],
                        tol=s["tol"], p=s["p"],
                        lifespan_c_scale=s["lifespan_c_scale"],
                        lifespan_k_scale=s["lifespan_k_scale"], d=spec.d)
    trap, metric, tcfg = _trap_section(cfg, spec, nl, u0)
    Ms = lp_hs_norm(u0, scfg.s, scfg.p).value
    T_eff = lifespan_bound(trap.M, Ms, trap.L, scfg)
    scfg.T = max(T_eff, scfg.dt)
    sol = iterate(u0, nl, scfg, trap=trap, check_trapping=True)
    env = envelope_trace(sol, u0, scfg)
    le = local_energy_report(sol, trap, u0=u0)
    out = {
        "trap": {"M": trap.M, "R": trap.R, "L": trap.L,
                 "trapped": trap.trapped, "margin": trap.margin},
        "lifespan": {"T_user": s["T"], "T_effective": scfg.T, "M_s": Ms,
                     "c_scale": s["lifespan_c_scale"],
                     "k_scale": s["lifespan_k_scale"]},
        "trace": {
            "norms_s": sol.trace.norms_s,
            "norms_s0": sol.trace.norms_s0,
            "norms_ext": sol.trace.norms_ext,
            "diff_norms": sol.trace.diff_norms,
            "trap_L": sol.trace.trap_L,
            "trap_flags": sol.trace.trap_flags,
        },
        "converged": sol.converged,
        "envelope": env,
        "local_energy": le,
        "exterior_data_norm": exterior_l1_hs_norm(u0, scfg.s0, trap.R),
    }
    if s["cross_check"]:
        ref = direct_reference_solution(u0, nl, sol.u.times)
        num = max(float(np.sqrt(np.sum(np.abs(sol.u.data[i] - ref.data[i]) ** 2)
                                * spec.cell_volume))
                  for i in range(sol.u.nt))
        den = max(float(np.sqrt(np.sum(np.abs(ref.data[i]) ** 2)
                                * spec.cell_volume))
                  for i in range(ref.nt))
        out["cross_check_rel_linf_l2"] = num / den
    tables = {"trace": [
        {"iterate": i + 1,
         "norm_s": sol.trace.norms_s[i],
         "norm_s0": sol.trace.norms_s0[i],
         "norm_ext": sol.trace.norms_ext[i],
         "diff": sol.trace.diff_norms[i]}
        for i in range(len(sol.trace.diff_norms))]}
    return out, tables, sol.converged, {"solution": sol}


def _mode_verify(cfg):
    from . import verify as vmod
    rng = np.random.default_rng(cfg["seed"])
    checks = vmod.property_suite(rng)
    ok = all(c["ok"] for c in checks.values())
    tables = {"checks": [{"name": k, **{kk: vv for kk, vv in v.items()}}
                         for k, v in checks.items()]}
    return {"checks": checks}, tables, ok, {}


def _mode_sweep(cfg):
    spec = _build_grid(cfg)
    nl = _build_nl(cfg, spec.d)
    u0 = _build_data(cfg, spec)
    s = cfg["solver"]
    scfg = SolverConfig(T=s["T"], dt=s["dt"], s0=s["s0"], n_max=s["n_max"],
                        tol=s["tol"], p=s["p"],
                        lifespan_c_scale=s["lifespan_c_scale"],
                        lifespan_k_scale=s["lifespan_k_scale"], d=spec.d)
    kind = cfg["sweep"]["kind"]
    if kind == "continuous_dependence":
        deltas = cfg["sweep"]["deltas"]
        perts = [gaussian_field(spec, dv, 1.1 * cfg["data"]["width"],
                                center=[0.3] * spec.d) for dv in deltas]
        res = continuous_dependence(u0, perts, nl, scfg)
        table = [{"delta": deltas[row["index"]], **row} for row in res["rows"]]
        ok = len(res["excluded"]) == 0
        return {"sweep": kind, "table": table,
                "excluded": res["excluded"]}, {"table": table}, ok, {}
    if kind == "T":
        table = []
        for T in cfg["sweep"]["T_values"] or [scfg.T, scfg.T / 2, scfg.T / 4]:
            c = copy.deepcopy(scfg)
            c.T = T
            sol = iterate(u0, nl, c, trap=None, check_trapping=False)
            table.append({"T": T, "converged": sol.converged,
                          "n_iter": len(sol.trace.diff_norms),
                          "final_diff": sol.trace.diff_norms[-1],
                          "norm_s0": sol.trace.norms_s0[-1]})
        ok = all(r["converged"] for r in table)
        return {"sweep": kind, "table": table}, {"table": table}, ok, {}
    # resolution sweep: envelope ratio across grid doublings
    table = []
    for n in cfg["sweep"]["resolutions"] or [spec.n, 2 * spec.n]:
        sp = GridSpec(spec.d, int(n), spec.J)
        du0 = _build_data(cfg, sp)
        sol = iterate(du0, nl, scfg, trap=None, check_trapping=False)
        env = envelope_trace(sol, du0, scfg)
        table.append({"n": int(n), "converged": sol.converged,
                      "envelope_max_ratio": env["max_ratio"],
                      "bands_used": env["bands_used"]})
    ok = all(r["converged"] for r in table)
    return {"sweep": kind, "table": table}, {"table": table}, ok, {}


_MODES = {
    "analyze": _mode_analyze,
    "solve": _mode_solve,
    "verify": _mode_verify,
    "sweep": _mode_sweep,
}


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def emit(report: dict, outdir: str, formats, tables=None, figures=None,
         timings=None) -> list:
    """Write the report, CSV tables, and figures; returns written paths."""
    os.makedirs(outdir, exist_ok=True)
    written = []
    if "json" in formats:
        path = os.path.join(outdir, "report.json")
        with open(path, "w") as fh:
            json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
    if "csv" in formats and tables:
        for name, rows in tables.items():
            if not rows:
                continue
            path = os.path.join(outdir, f"{name}.csv")
            cols = list(rows[0])
            with open(path, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=cols)
                writer.writeheader()
                for row in rows:
                    writer.writerow({k: row.get(k, "") for k in cols})
            written.append(path)
    if "png" in formats and figures:
        written.extend(figures())
    if timings is not None:
        path = os.path.join(outdir, "timings.json")
        with open(path, "w") as fh:
            json.dump(_jsonable(timings), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def run(cfg: dict, outdir: str, verbose: bool = False) -> int:
    """Execute one configured run and emit its report files."""
    np.random.seed(cfg["seed"])          # legacy consumers; rng passed where used
    t0 = time.perf_counter()
    mode = cfg["mode"]
    failure = None
    try:
        body, tables, ok, extras = _MODES[mode](cfg)
    except (RuntimeError, ValueError) as exc:
        body, tables, ok, extras = {"error": str(exc)}, {}, False, {}
        failure = exc
    elapsed = time.perf_counter() - t0

    report = {
        "tool": {"name": "quasilin", "version": __version__},
        "config": cfg,
        "mode": mode,
        "ok": bool(ok),
    }
    report.update(body)

    from . import plots

    def figures():
        if mode == "analyze":
            return plots.render_analyze(report, outdir,
                                        worst_ray=extras.get("worst_ray"))
        if mode == "solve":
            return plots.render_solve(report, outdir,
                                      solution=extras.get("solution"))
        if mode == "verify":
            return plots.render_verify(report, outdir)
        return plots.render_sweep(report, outdir)

    emit(report, outdir, cfg["output"]["formats"], tables=tables,
         figures=figures, timings={"wall_seconds": elapsed})
    if verbose:
        print(json.dumps(_jsonable(report), indent=2, sort_keys=True))
    if failure is not None:
        print(f"numerical failure: {failure}", file=sys.stderr)
        return 3
    return 0 if ok else 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="quasilin",
        description="Desk-scale spectral experiments for quasilinear "
                    "Schrodinger flows")
    parser.add_argument("--config", required=True, help="TOML run config")
    parser.add_argument("--mode", default=None,
                        help="override the config's mode")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.mode is not None:
            if args.mode not in _MODES:
                raise ConfigError(f"unknown mode {args.mode!r}")
            cfg["mode"] = args.mode
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.threads is not None:
            cfg["threads"] = args.threads
    except (ConfigError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    return run(cfg, args.out, verbose=args.verbose)


if __name__ == "__main__":
    sys.exit(main())
