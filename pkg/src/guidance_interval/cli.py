"""Command-line front end.

    guidance-interval SUBCOMMAND [--config PATH] [--seed INT] [--workers INT] [--out DIR] [--resume]

Subcommands: schedule, sample, metrics, sweep, search, ablate, plot.  The
configuration is a JSON document (see README); every run writes the fully
resolved configuration to ``<out>/config.json`` and feeding that file back
reproduces the run.  Nothing is written outside ``--out``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 resume
conflict, 5 sweep stopped early (resume with ``--resume``).
"""

import argparse
import copy
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import plots
from .batch import load_batch, save_batch
from .errors import InputError, ResumeConflict, ScheduleError, SearchError, SolverDivergence
from .metrics import evaluate
from .mixture import ConditionedFamily, GaussianMixture, load_family
from .sampler import (custom_weight_profile, interval_guidance, sample_batch, sample_trajectories,
                      trajectories_from_csv)
from .schedule import schedule_from_rule
from .search import (SweepGrid, SweepProblem, grid_sweep, screen_then_confirm,
                     step_importance_ablation, sweep_complete, two_phase_search)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_RESUME, EXIT_PARTIAL = 0, 2, 3, 4, 5
COMMANDS = ("schedule", "sample", "metrics", "sweep", "search", "ablate", "plot")
CONFIG_SCHEMA = "guidance-interval/config/1"

DEFAULTS = {
    "schema": CONFIG_SCHEMA,
    "problem": {"toy": "1d", "family": None, "family_file": None, "class": None, "target": None,
                "model_leak": 0.0, "ref_seed": 10_000, "k": 3, "precision_margin": 0.02},
    "schedule": {"rule": "rho", "sigma_min": 0.002, "sigma_max": 80.0, "rho": 7.0, "steps": 32},
    "guidance": {"w": 1.0, "sigma_lo": 0.0, "sigma_hi": None, "rounding": "inward", "profile": None},
    "solver": "heun",
    "n": 1000,
    "seed": 0,
    "workers": 1,
    "sample": {"record_chains": 16, "reference": False},
    "metrics": {"real": None, "gen": None, "k": 3, "bins": 64},
    "sweep": {"ws": None, "hi_indices": None, "lo_indices": None, "metrics": ["frechet"], "n": None,
              "screen": None, "max_cells": None},
    "search": {"w": 3.0, "metric": "frechet", "hi_candidates": None, "lo_candidates": None,
               "bisect": False, "n": None, "compare_grid": False},
    "ablate": {"w": 3.0, "metric": "frechet", "steps": None, "n": None},
    "plot": {"kind": "trajectory-fan", "input": None, "x_range": None, "y_range": None,
             "resolution": 64, "log_sigma": True, "metric": "frechet", "chains": 64,
             "title": ""},
}
_RHO_KEYS = ("sigma_min", "sigma_max", "rho", "steps")
_IDDPM_DEFAULTS = {"C1": 0.001, "C2": 0.008, "M": 1000, "j0": 0, "steps": 250}


class Usage(InputError):
    pass


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            raise Usage(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict):
            out[key] = _merge(base[key], val, path + key + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _problem_section(p):
    """Inline toy and file references as explicit ``family`` / ``target`` dictionaries.

    The result has ``toy``, ``family_file`` and ``model_leak`` cleared, so
    resolving it again is the identity.
    """
    from . import toys

    p = dict(p)
    toy, path, leak = p["toy"], p["family_file"], p["model_leak"] or 0.0
    if path is not None:
        base, c = load_family(path), None
    elif p["family"] is not None:
        base, c = ConditionedFamily.from_dict(p["family"]), None
    elif toy == "1d":
        base, c = toys.TOY_1D, toys.TOY_1D_CLASS
    elif toy == "2d":
        base, c = toys.TOY_2D_TRUE, toys.TOY_2D_CLASS
        leak = leak or toys.TOY_2D_LEAK
    else:
        raise Usage(f"problem needs 'toy' ('1d' or '2d'), 'family' or 'family_file', got toy={toy!r}")
    c = p["class"] if p["class"] is not None else (c or base.labels[0])
    base.conditional(c)
    model = toys.leaky(base, leak) if leak else base
    p.update(toy=None, family_file=None, model_leak=0.0, family=model.to_dict(), **{"class": c})
    if p["target"] is None:
        p["target"] = base.conditional(c).to_dict()
    return p


def _schedule_section(s):
    s = dict(s)
    rule = s.get("rule", "rho")
    if rule == "iddpm":
        out = dict(_IDDPM_DEFAULTS)
        out.update({k: v for k, v in s.items() if k != "rule" and k not in _RHO_KEYS[:3]})
    else:
        out = {k: DEFAULTS["schedule"][k] for k in _RHO_KEYS}
        out.update({k: v for k, v in s.items() if k != "rule"})
    out["rule"] = rule
    return out


def resolve_config(raw, args=None):
    """Fill defaults, apply command-line overrides and inline every file reference."""
    if not isinstance(raw, dict):
        raise Usage("config must be a JSON object")
    raw = dict(raw)
    sched_raw = raw.pop("schedule", {})
    cfg = _merge(DEFAULTS, raw)
    cfg["schedule"] = _schedule_section(sched_raw)
    cfg["problem"] = _problem_section(cfg["problem"])
    prof = cfg["guidance"]["profile"]
    if isinstance(prof, str):
        cfg["guidance"]["profile"] = [float(v) for v in Path(prof).read_text().split()]
    if args is not None:
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.workers is not None:
            cfg["workers"] = args.workers
    if int(cfg["seed"]) != cfg["seed"] or cfg["seed"] < 0:
        raise Usage("seed must be a non-negative integer")
    if int(cfg["workers"]) != cfg["workers"] or cfg["workers"] < 1:
        raise Usage("workers must be a positive integer")
    return cfg


def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise Usage(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise Usage(f"{p}: invalid JSON ({exc})") from None


def build_problem(cfg):
    p = cfg["problem"]
    fam = ConditionedFamily.from_dict(p["family"])
    target = GaussianMixture.from_dict(p["target"])
    fam.conditional(p["class"])
    return SweepProblem(fam, p["class"], schedule_from_rule(cfg["schedule"]), target,
                        solver=cfg["solver"], ref_seed=p["ref_seed"], k=p["k"],
                        precision_margin=p["precision_margin"])


def build_guidance(cfg, schedule):
    g = cfg["guidance"]
    if g["profile"] is not None:
        return custom_weight_profile(schedule, g["profile"])
    hi = math.inf if g["sigma_hi"] is None else float(g["sigma_hi"])
    return interval_guidance(schedule, float(g["w"]), float(g["sigma_lo"]), hi, g["rounding"])


class _Out:
    """Writes only beneath one directory."""

    def __init__(self, root):
        self.root = None if root is None else Path(root)

    def require(self, cmd):
        if self.root is None:
            raise Usage(f"'{cmd}' needs --out DIR")
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        p = (self.root / name).resolve()
        if self.root.resolve() not in p.parents:
            raise Usage(f"refusing to write outside --out: {name}")
        return p

    def write(self, name, text):
        self.path(name).write_text(text)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(out, name, text):
    if out.root is None:
        sys.stdout.write(text)
    else:
        out.root.mkdir(parents=True, exist_ok=True)
        out.write(name, text)


def cmd_schedule(cfg, out, args):
    sched = schedule_from_rule(cfg["schedule"])
    _emit(out, "schedule.csv", sched.to_csv())
    return EXIT_OK


def cmd_sample(cfg, out, args):
    out.require("sample")
    prob = build_problem(cfg)
    g = build_guidance(cfg, prob.schedule)
    batch = sample_batch(prob.family, prob.c, prob.schedule, g, cfg["n"], cfg["seed"], solver=cfg["solver"])
    save_batch(batch, out.path("batch.csv"))
    k = min(cfg["sample"]["record_chains"], cfg["n"])
    if k > 0:
        traj = sample_trajectories(prob.family, prob.c, prob.schedule, g, k, cfg["seed"], cfg["solver"])
        out.write("trajectories.csv", traj.to_csv())
    if cfg["sample"]["reference"]:
        # the exact target draws that sweeps score against
        save_batch(prob.reference(cfg["n"]), out.path("reference.csv"))
    prov = batch.provenance["nfe_per_chain"]
    print(f"wrote {cfg['n']} samples; nfe per chain cond={prov['cond']} uncond={prov['uncond']}")
    return EXIT_OK


def cmd_metrics(cfg, out, args):
    m = cfg["metrics"]
    real = args.inputs[0] if len(args.inputs) > 0 else m["real"]
    gen = args.inputs[1] if len(args.inputs) > 1 else m["gen"]
    if real is None or gen is None:
        raise Usage("metrics needs a real and a generated batch file")
    rb, gb = load_batch(real), load_batch(gen)
    mix = GaussianMixture.from_dict(cfg["problem"]["target"])
    mix = mix if mix.dim == rb.dim else None
    report = evaluate(rb, gb, k=m["k"], mix=mix, bins=m["bins"])
    _emit(out, "metrics.json", report.to_json())
    return EXIT_OK


def _grid(cfg, schedule):
    s = cfg["sweep"]
    n_steps = schedule.steps
    ws = s["ws"] if s["ws"] is not None else [float(w) for w in np.arange(1.0, 6.0 + 1e-9, 0.25)]
    his = s["hi_indices"] if s["hi_indices"] is not None else list(range(n_steps))
    los = s["lo_indices"] if s["lo_indices"] is not None else list(range(1, n_steps + 1))
    n = s["n"] if s["n"] is not None else cfg["n"]
    return SweepGrid(ws, his, los, n, cfg["seed"], list(s["metrics"]))


def cmd_sweep(cfg, out, args):
    out.require("sweep")
    prob = build_problem(cfg)
    grid = _grid(cfg, prob.schedule)
    # materialize the grid so config.json is explicit
    cfg["sweep"].update(ws=grid.ws, hi_indices=grid.hi_indices, lo_indices=grid.lo_indices, n=grid.n)
    out.write("config.json", _dump(cfg))
    journal = out.path("journal.jsonl")
    if journal.exists() and not args.resume:
        raise ResumeConflict(f"{journal} exists; pass --resume to continue it or choose another --out")
    screen_cfg = cfg["sweep"]["screen"]
    if screen_cfg:
        screen, confirm = screen_then_confirm(prob, grid, screen_cfg["n_small"], grid.n,
                                              screen_cfg.get("q", 0.1), cfg["workers"])
        out.write("screen.csv", screen.to_csv())
        out.write("sweep.csv", confirm.to_csv())
        summary = confirm.summary()
        summary["screen"] = {"n_small": screen_cfg["n_small"], "nfe_total": screen.nfe_total,
                             "shortlist": [c.key() for c in confirm.shortlist]}
        out.write("sweep.json", _dump(summary))
        return EXIT_OK
    rep = grid_sweep(prob, grid, workers=cfg["workers"], journal=journal,
                     stop_after=cfg["sweep"]["max_cells"])
    if not sweep_complete(grid, rep):
        print(f"stopped after {len(rep.rows)} of {len(grid.cells())} cells; rerun with --resume")
        return EXIT_PARTIAL
    out.write("sweep.csv", rep.to_csv())
    out.write("sweep.json", rep.to_json())
    best = rep.best()
    print(f"{len(rep.rows)} cells; best {grid.metrics[0]}={best.values.get(grid.metrics[0])!r} "
          f"at w={best.w} steps [{best.hi_index}, {best.lo_index})")
    return EXIT_OK


def cmd_search(cfg, out, args):
    out.require("search")
    prob = build_problem(cfg)
    s = cfg["search"]
    n = s["n"] if s["n"] is not None else cfg["n"]
    out.write("config.json", _dump(cfg))
    res = two_phase_search(prob, s["w"], s["metric"], n, cfg["seed"], s["hi_candidates"],
                           s["lo_candidates"], s["bisect"])
    doc = {"schema": "guidance-interval/search/1", "w": s["w"], "metric": s["metric"], "n": n,
           "hi_index": res.hi_index, "lo_index": res.lo_index, "sigma_hi": res.sigma_hi,
           "sigma_lo": res.sigma_lo, "value": res.value, "evaluations": res.evaluations,
           "phase1": {str(k): v for k, v in res.phase1.items()},
           "phase2": {str(k): v for k, v in res.phase2.items()}}
    if s["compare_grid"]:
        n_steps = prob.schedule.steps
        his = sorted(s["hi_candidates"] or range(n_steps))
        los = sorted(set(s["lo_candidates"] or range(1, n_steps + 1)) | {n_steps})
        rep = grid_sweep(prob, SweepGrid([s["w"]], his, los, n, cfg["seed"], [s["metric"]]),
                         workers=cfg["workers"])
        opt = rep.losses()[rep.rows.index(rep.best(guided_only=True))]
        doc["grid_optimum"] = opt
        doc["gap"] = res.value / opt - 1 if opt > 0 else res.value - opt
    out.write("search.json", _dump(doc))
    out.write("search.csv", res.report.to_csv())
    print(f"sigma_hi={res.sigma_hi!r} (step {res.hi_index}), sigma_lo={res.sigma_lo!r} "
          f"(step {res.lo_index}), {s['metric']}={res.value!r}")
    return EXIT_OK


def cmd_ablate(cfg, out, args):
    out.require("ablate")
    prob = build_problem(cfg)
    a = cfg["ablate"]
    n = a["n"] if a["n"] is not None else cfg["n"]
    out.write("config.json", _dump(cfg))
    rep = step_importance_ablation(prob, a["w"], a["metric"], n, cfg["seed"], a["steps"])
    out.write("ablation.csv", rep.to_csv())
    out.write("ablation.json", _dump(rep.summary()))
    return EXIT_OK


def _read_sweep_csv(path):
    rows = list(csv.DictReader(io.StringIO(Path(path).read_text())))
    if not rows:
        raise Usage(f"{path}: empty sweep table")
    return rows


def _curve_series(rows, metric, n_steps):
    """Per-w full-interval row and best limited-interval row of a sweep table."""
    ok = [r for r in rows if r["status"] == "ok" and r["hi_index"] != ""]
    ws = sorted({float(r["w"]) for r in ok})
    if not ws:
        raise Usage("sweep table has no guided rows")
    sign = -1.0 if metric in ("precision", "recall") else 1.0
    full, best = [], []
    for w in ws:
        at = [r for r in ok if float(r["w"]) == w]
        f = [r for r in at if int(r["hi_index"]) == 0 and int(r["lo_index"]) == n_steps]
        full.append(f[0] if f else None)
        best.append(min(at, key=lambda r: sign * float(r[metric])))
    return ws, full, best


def cmd_plot(cfg, out, args):
    out.require("plot")
    p = cfg["plot"]
    spec = plots.PlotSpec(p["kind"], tuple(p["x_range"]) if p["x_range"] else None,
                          tuple(p["y_range"]) if p["y_range"] else None, p["resolution"], p["log_sigma"])
    src = args.inputs[0] if args.inputs else p["input"]
    prob = build_problem(cfg)
    if spec.kind == "density-heatmap":
        svg = plots.density_heatmap(prob.family, prob.c, prob.schedule.sigmas, spec, p["title"])
    elif src is None:
        raise Usage(f"plot kind {spec.kind!r} needs an input file")
    elif not Path(src).exists():
        raise Usage(f"input file not found: {src}")
    elif spec.kind == "trajectory-fan":
        sig, states, guided = trajectories_from_csv(Path(src).read_text())
        svg = plots.trajectory_fan(sig, states[:, :p["chains"]], guided, spec, prob.family, prob.c,
                                   p["title"])
    elif spec.kind == "histogram":
        b = load_batch(src)
        target = prob.target if prob.target.dim == b.dim else None
        svg = plots.histogram(b.vectors, target, spec, p["title"])
    else:
        ws, full, best = _curve_series(_read_sweep_csv(src), p["metric"] if spec.kind == "metric-curve"
                                       else "recall", prob.schedule.steps)
        if spec.kind == "metric-curve":
            col = p["metric"]
            series = {"limited interval": [float(r[col]) for r in best]}
            if all(r is not None for r in full):
                series["full interval"] = [float(r[col]) for r in full]
            svg = plots.metric_curve(ws, series, col, spec, p["title"])
        else:
            series = {"limited": ([float(r["precision"]) for r in best], [float(r["recall"]) for r in best])}
            if all(r is not None for r in full):
                series["full"] = ([float(r["precision"]) for r in full], [float(r["recall"]) for r in full])
            svg = plots.pr_curve(ws, series, spec, p["title"])
    out.write(f"{spec.kind}.svg", svg)
    return EXIT_OK


HANDLERS = {"schedule": cmd_schedule, "sample": cmd_sample, "metrics": cmd_metrics,
            "sweep": cmd_sweep, "search": cmd_search, "ablate": cmd_ablate, "plot": cmd_plot}


def make_parser():
    ap = argparse.ArgumentParser(prog="guidance-interval", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("inputs", nargs="*", help="input files (metrics: REAL GEN; plot: INPUT)")
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--workers", type=int, help="parallel sweep workers")
    ap.add_argument("--out", help="output directory; nothing is written elsewhere")
    ap.add_argument("--resume", action="store_true", help="continue the sweep journal in --out")
    return ap


def main(argv=None):
    ap = make_parser()
    try:
        args = ap.parse_intermixed_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    out = _Out(args.out)
    try:
        cfg = resolve_config(_load_config(args.config), args)
        if args.command in ("schedule", "sample", "metrics", "ablate", "plot") and out.root is not None:
            out.root.mkdir(parents=True, exist_ok=True)
            out.write("config.json", _dump(cfg))
        return HANDLERS[args.command](cfg, out, args)
    except ResumeConflict as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RESUME
    except SolverDivergence as exc:
        print(f"error: solver diverged at step {exc.step} (chain {exc.chain})", file=sys.stderr)
        return EXIT_NUMERIC
    except (ScheduleError, SearchError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
