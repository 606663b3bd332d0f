"""Searching for good guidance intervals.

Every evaluation runs the sampler with a candidate ``(w, hi_index, lo_index)``
and scores the terminal batch against reference draws from a target mixture.
Candidates are schedule indices, so there is nothing to snap.  All cells use
the same seed (common random numbers), which makes cell-to-cell comparisons
far less noisy than independent draws would.
"""

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from .errors import InputError, ResumeConflict, SearchError, SolverDivergence
from .mixture import sample_data
from .sampler import (GuidanceSpec, guidance_from_indices, nfe_count, no_guidance,
                      sample_batch)

REPORT_SCHEMA = "guidance-interval/sweep/1"
JOURNAL_SCHEMA = "guidance-interval/journal/1"
METRICS = ("frechet", "wasserstein1", "kl_hist", "precision", "recall", "pr")


@dataclass(frozen=True, eq=False)
class SweepProblem:
    """What to sample (``family``, class ``c``, ``schedule``) and what to compare against (``target``)."""

    family: object
    c: object
    schedule: object
    target: object
    solver: str = "heun"
    ref_seed: int = 10_000
    k: int = 3
    precision_margin: float = 0.02

    def reference(self, n):
        # prefix of one counter stream, so smaller references are prefixes of larger ones
        return sample_data(self.target, n, self.ref_seed)

    def describe(self):
        return {"class": str(self.c), "schedule": self.schedule.rule, "solver": self.solver,
                "ref_seed": self.ref_seed, "k": self.k, "precision_margin": self.precision_margin,
                "family": self.family.to_dict(),
                "target": self.target.to_dict()}


@dataclass(frozen=True)
class Cell:
    """Guidance ``w`` on steps ``hi_index <= a < lo_index``; ``w == 1`` with no indices is the baseline."""

    w: float
    hi_index: int | None = None
    lo_index: int | None = None

    @property
    def is_baseline(self):
        return self.hi_index is None

    def key(self):
        return "baseline" if self.is_baseline else f"{self.w!r}:{self.hi_index}:{self.lo_index}"

    def guidance(self, schedule):
        if self.is_baseline:
            return no_guidance(schedule)
        return guidance_from_indices(schedule, self.w, self.hi_index, self.lo_index)


@dataclass
class SweepRow:
    w: float
    hi_index: int | None
    lo_index: int | None
    sigma_hi: float | None
    sigma_lo: float | None
    guided_steps: int
    status: str
    values: dict
    nfe_cond: int
    nfe_uncond: int
    n: int
    seed: int
    error: str = ""

    @property
    def cell(self):
        return Cell(self.w, self.hi_index, self.lo_index)

    @property
    def ok(self):
        return self.status == "ok"

    @property
    def nfe_total(self):
        return self.nfe_cond + self.nfe_uncond


@dataclass
class SweepGrid:
    """Cartesian grid over ``w`` and interval indices.

    Only non-empty intervals (``lo > hi``) are evaluated; the unguided
    baseline is always added.  ``metrics[0]`` selects the best row.
    """

    ws: list
    hi_indices: list
    lo_indices: list
    n: int = 1000
    seed: int = 0
    metrics: list = field(default_factory=lambda: ["frechet"])

    def validate(self, schedule):
        if not self.ws or not self.hi_indices or not self.lo_indices:
            raise InputError("grid lists must be non-empty")
        if self.n < 100:
            raise InputError("need at least 100 samples per evaluation")
        for m in self.metrics:
            if m not in METRICS:
                raise InputError(f"unknown metric {m!r}; choose from {METRICS}")
        n_steps = schedule.steps
        for i in list(self.hi_indices) + list(self.lo_indices):
            if not (isinstance(i, (int, np.integer)) and 0 <= i <= n_steps):
                raise InputError(f"index {i!r} is not a schedule index in 0..{n_steps}")

    def cells(self):
        out = [Cell(1.0)]
        for w in self.ws:
            for hi in self.hi_indices:
                for lo in self.lo_indices:
                    if lo > hi:
                        out.append(Cell(float(w), int(hi), int(lo)))
        return out


def loss(metric, values, baseline=None, margin=0.02):
    """Loss-oriented view of a metric (smaller is better).

    ``pr`` maximizes recall subject to precision staying within ``margin``
    of the unguided baseline; rows below the floor are ranked after every
    row above it.
    """
    if metric in ("frechet", "wasserstein1", "kl_hist"):
        return values[metric]
    if metric in ("precision", "recall"):
        return 1.0 - values[metric]
    if metric == "pr":
        floor = (baseline["precision"] if baseline else 0.0) - margin
        shortfall = max(0.0, floor - values["precision"])
        return (1.0 - values["recall"]) + (1.0 + shortfall if shortfall > 0 else 0.0)
    raise InputError(f"unknown metric {metric!r}")


def _needs(metrics):
    need = set()
    for m in metrics:
        need |= {"precision", "recall"} if m == "pr" else {m}
    return need


def score_batch(problem, batch, reference, metrics):
    need = _needs(metrics)
    out = {}
    if "frechet" in need:
        out["frechet"] = M.frechet_distance(reference, batch)
    if "wasserstein1" in need:
        out["wasserstein1"] = M.wasserstein1_1d(reference, batch)
    if "kl_hist" in need:
        out["kl_hist"] = M.kl_histogram(batch, reference)
    if need & {"precision", "recall"}:
        out["precision"], out["recall"] = M.knn_precision_recall(reference, batch, problem.k)
    return out


def evaluate_guidance(problem, guidance, n, seed, metrics=("frechet",), reference=None):
    """Sample ``n`` chains under ``guidance`` and score them; raises on solver divergence."""
    if reference is None:
        reference = problem.reference(n)
    batch = sample_batch(problem.family, problem.c, problem.schedule, guidance, n, seed,
                         solver=problem.solver)
    return score_batch(problem, batch, reference, metrics)


def evaluate_cell(problem, cell, n, seed, metrics, reference=None):
    """Score one cell; solver divergence marks the row failed instead of raising."""
    sched = problem.schedule
    g = cell.guidance(sched)
    cond, uncond = nfe_count(sched, g, problem.solver)
    sig = sched.sigmas
    row = SweepRow(
        w=cell.w, hi_index=cell.hi_index, lo_index=cell.lo_index,
        sigma_hi=None if cell.is_baseline else float(sig[cell.hi_index]),
        sigma_lo=None if cell.is_baseline else float(sig[cell.lo_index]),
        guided_steps=int(g.guided.sum()), status="ok", values={},
        nfe_cond=n * cond, nfe_uncond=n * uncond, n=n, seed=seed)
    try:
        row.values = evaluate_guidance(problem, g, n, seed, metrics, reference)
    except (SolverDivergence, FloatingPointError, np.linalg.LinAlgError, InputError) as exc:
        row.status, row.error = "failed", f"{type(exc).__name__}: {exc}"
    return row


def _evaluate_task(args):
    problem, cell, n, seed, metrics = args
    t0 = time.perf_counter()
    row = evaluate_cell(problem, cell, n, seed, metrics)
    return row, time.perf_counter() - t0


@dataclass
class SweepReport:
    rows: list
    metrics: list
    problem: dict = field(default_factory=dict)
    baseline: SweepRow | None = None
    timings: dict = field(default_factory=dict)
    margin: float = 0.02

    def losses(self, metric=None):
        metric = metric or self.metrics[0]
        base = self.baseline.values if self.baseline and self.baseline.ok else None
        return [loss(metric, r.values, base, self.margin) if r.ok else math.inf for r in self.rows]

    def best(self, metric=None, guided_only=False):
        metric = metric or self.metrics[0]
        cand = [(lv, k) for k, (lv, r) in enumerate(zip(self.losses(metric), self.rows))
                if r.ok and not (guided_only and r.cell.is_baseline)]
        if not cand:
            raise SearchError("no successful cell in the sweep")
        return self.rows[min(cand)[1]]

    def row(self, cell):
        for r in self.rows:
            if r.cell == cell:
                return r
        raise KeyError(cell)

    @property
    def nfe_total(self):
        return sum(r.nfe_total for r in self.rows)

    def to_csv(self):
        names = sorted({m for r in self.rows for m in r.values})
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["w", "hi_index", "lo_index", "sigma_hi", "sigma_lo", "guided_steps", "status"]
                    + names + ["nfe_cond", "nfe_uncond", "n", "seed"])
        fmt = lambda v: "" if v is None else repr(v)
        for r in self.rows:
            wr.writerow([repr(r.w), fmt(r.hi_index), fmt(r.lo_index), fmt(r.sigma_hi), fmt(r.sigma_lo),
                         r.guided_steps, r.status] + [fmt(r.values.get(m)) for m in names]
                        + [r.nfe_cond, r.nfe_uncond, r.n, r.seed])
        return buf.getvalue()

    def summary(self):
        best = {}
        for m in self.metrics:
            try:
                best[m] = asdict(self.best(m))
            except SearchError:
                best[m] = None
        return {
            "schema": REPORT_SCHEMA,
            "problem": self.problem,
            "metrics": list(self.metrics),
            "cells": len(self.rows),
            "failed": sum(not r.ok for r in self.rows),
            "nfe_total": self.nfe_total,
            "baseline": asdict(self.baseline) if self.baseline else None,
            "best": best,
        }

    def to_json(self):
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


class Journal:
    """Append-only JSON-lines record of finished cells, keyed by cell coordinates.

    The first line fingerprints the sweep; resuming against a different
    sweep, or reading a malformed line, raises :class:`ResumeConflict`.
    A final line without its newline is an interrupted write and is dropped.
    """

    def __init__(self, path, fingerprint):
        self.path = Path(path)
        self.fingerprint = fingerprint

    def load(self):
        if not self.path.exists():
            return {}
        text = self.path.read_text()
        lines = text.split("\n")
        if lines and lines[-1] != "":
            lines = lines[:-1]
        lines = [ln for ln in lines if ln]
        if not lines:
            return {}
        try:
            head = json.loads(lines[0])
            rows = [json.loads(ln) for ln in lines[1:]]
        except json.JSONDecodeError as exc:
            raise ResumeConflict(f"{self.path}: corrupt journal ({exc}); delete it and start fresh") from None
        if head.get("schema") != JOURNAL_SCHEMA or head.get("fingerprint") != self.fingerprint:
            raise ResumeConflict(f"{self.path}: journal belongs to a different sweep; delete it or change --out")
        done = {}
        for d in rows:
            try:
                done[d["key"]] = SweepRow(**d["row"])
            except (KeyError, TypeError) as exc:
                raise ResumeConflict(f"{self.path}: corrupt journal entry ({exc})") from None
        return done

    def start(self):
        if not self.path.exists() or self.path.stat().st_size == 0:
            self._append({"schema": JOURNAL_SCHEMA, "fingerprint": self.fingerprint})
        else:
            text = self.path.read_text()
            if not text.endswith("\n"):
                # drop an interrupted final write before appending
                self.path.write_text(text[:text.rfind("\n") + 1])

    def record(self, cell, row):
        self._append({"key": cell.key(), "row": asdict(row)})

    def _append(self, obj):
        with open(self.path, "a") as fh:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
            fh.flush()


def fingerprint(problem, cells, n, seed, metrics):
    blob = json.dumps({"problem": problem.describe(), "cells": [c.key() for c in cells], "n": n,
                       "seed": seed, "metrics": list(metrics)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def run_cells(problem, cells, n, seed, metrics, workers=1, journal=None, stop_after=None):
    """Evaluate cells (deduplicated, in order) and return ``(rows, timings)``.

    Rows come back in the order of ``cells`` regardless of ``workers``.
    ``stop_after`` evaluates at most that many new cells, which is how an
    interruption is simulated in tests.
    """
    cells = list(dict.fromkeys(cells))
    done = {}
    jr = None
    if journal is not None:
        jr = Journal(journal, fingerprint(problem, cells, n, seed, metrics))
        done = jr.load()
        jr.start()
    todo = [c for c in cells if c.key() not in done]
    if stop_after is not None:
        todo = todo[:stop_after]
    timings = {}
    tasks = [(problem, c, n, seed, tuple(metrics)) for c in todo]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_evaluate_task, tasks)
            for c, (row, dt) in zip(todo, results):
                done[c.key()] = row
                timings[c.key()] = dt
                if jr:
                    jr.record(c, row)
    else:
        for c, t in zip(todo, tasks):
            row, dt = _evaluate_task(t)
            done[c.key()] = row
            timings[c.key()] = dt
            if jr:
                jr.record(c, row)
    rows = [done[c.key()] for c in cells if c.key() in done]
    return rows, timings


def grid_sweep(problem, grid, workers=1, journal=None, stop_after=None):
    """Evaluate every non-empty interval cell of ``grid`` plus the unguided baseline."""
    grid.validate(problem.schedule)
    cells = grid.cells()
    rows, timings = run_cells(problem, cells, grid.n, grid.seed, grid.metrics, workers, journal,
                              stop_after)
    base = next((r for r in rows if r.cell.is_baseline), None)
    return SweepReport(rows, list(grid.metrics), problem.describe(), base, timings,
                       problem.precision_margin)


def sweep_complete(grid, report):
    return len(report.rows) == len(grid.cells())


@dataclass
class TwoPhaseResult:
    hi_index: int
    lo_index: int
    sigma_hi: float
    sigma_lo: float
    value: float
    phase1: dict
    phase2: dict
    report: SweepReport
    evaluations: int


def _cell_evaluator(problem, n, seed, metric, cache, baseline_values):
    reference = problem.reference(n)

    def f(cell):
        if cell not in cache:
            row = evaluate_cell(problem, cell, n, seed, [metric], reference)
            cache[cell] = row
        row = cache[cell]
        return loss(metric, row.values, baseline_values, problem.precision_margin) if row.ok else math.inf

    return f


def two_phase_search(problem, w, metric="frechet", n=1000, seed=0, hi_candidates=None,
                     lo_candidates=None, bisect=False):
    """Tune ``sigma_hi`` with ``sigma_lo = 0``, then ``sigma_lo`` with that ``sigma_hi`` fixed.

    ``bisect=True`` replaces each linear scan by a Fibonacci search over
    the candidate list, which assumes the metric is unimodal along it.
    """
    if not w > 1:
        raise InputError("two-phase search needs w > 1")
    n_steps = problem.schedule.steps
    his = sorted(range(n_steps) if hi_candidates is None else hi_candidates)
    if not his:
        raise InputError("no sigma_hi candidates")
    cache = {}
    base_vals = None
    if metric == "pr":
        base_row = evaluate_cell(problem, Cell(1.0), n, seed, [metric])
        cache[Cell(1.0)] = base_row
        base_vals = base_row.values
    f = _cell_evaluator(problem, n, seed, metric, cache, base_vals)

    def scan(cands, make):
        if bisect and len(cands) > 2:
            res = bisection_refine(lambda k: f(make(cands[k])), 0, len(cands) - 1)
            return cands[res.index], {c: f(make(c)) for c in cands if make(c) in cache}
        trail = {c: f(make(c)) for c in cands}
        return min(trail, key=lambda c: (trail[c], c)), trail

    best_hi, trail1 = scan(his, lambda h: Cell(float(w), h, n_steps))
    if math.isinf(trail1[best_hi]):
        raise SearchError("every sigma_hi candidate failed")
    los = sorted(c for c in (range(best_hi + 1, n_steps + 1) if lo_candidates is None else lo_candidates)
                 if c > best_hi)
    if n_steps not in los:
        los.append(n_steps)
    best_lo, trail2 = scan(los, lambda lo: Cell(float(w), best_hi, lo))
    rows = list(cache.values())
    base = cache.get(Cell(1.0))
    report = SweepReport(rows, [metric], problem.describe(), base, margin=problem.precision_margin)
    sig = problem.schedule.sigmas
    return TwoPhaseResult(best_hi, best_lo, float(sig[best_hi]), float(sig[best_lo]),
                          trail2[best_lo], trail1, trail2, report, len(cache))


@dataclass
class BisectionResult:
    index: int
    value: float
    evaluations: int
    bracketed: bool = True
    flat: bool = False
    values: dict = field(default_factory=dict)


def bisection_refine(evaluator, lo, hi, trail=None):
    """Fibonacci-search minimization of ``evaluator`` over integers ``lo..hi``.

    ``trail`` maps already-evaluated indices to values.  If it contains a
    bracketing triple around its best point, the search is narrowed to that
    bracket; if its best point sits on an edge of the trail, the result is that
    point with ``bracketed=False``.  Only new evaluations are counted.
    """
    if lo > hi:
        raise InputError("empty index range")
    cache = dict(trail or {})
    fresh = 0

    def f(i):
        nonlocal fresh
        if i not in cache:
            cache[i] = evaluator(i)
            fresh += 1
        return cache[i]

    if trail:
        pts = sorted(k for k in cache if lo <= k <= hi)
        vals = [cache[k] for k in pts]
        m = min(range(len(pts)), key=lambda k: (vals[k], pts[k]))
        if len(set(vals)) == 1:
            return BisectionResult(pts[m], vals[m], 0, bracketed=False, flat=True, values=cache)
        if m == 0 or m == len(pts) - 1:
            return BisectionResult(pts[m], vals[m], 0, bracketed=False, values=cache)
        lo, hi = pts[m - 1], pts[m + 1]

    # Fibonacci search: the golden-section limit on integers, where one probe
    # of each bracket is always reused; indices past ``hi`` count as +inf
    def g(i):
        return f(i) if i <= hi else math.inf

    fib = [1, 2]
    while fib[-1] < hi - lo:
        fib.append(fib[-1] + fib[-2])
    a, k = lo, len(fib) - 1
    while k >= 2:
        c, d = a + fib[k - 2], a + fib[k - 1]
        if g(c) > g(d):
            a = c
        k -= 1
    for i in range(a, min(a + fib[k], hi) + 1):
        f(i)
    inside = [i for i in cache if lo <= i <= hi]
    best = min(inside, key=lambda i: (cache[i], i))
    flat = len({cache[i] for i in inside}) == 1 and len(inside) > 1
    return BisectionResult(best, cache[best], fresh, bracketed=not flat, flat=flat, values=cache)


def screen_then_confirm(problem, grid, n_small, n_large, q=0.1, workers=1):
    """Sweep at ``n_small``, then re-evaluate the best ``q`` fraction at ``n_large``.

    Returns ``(screen, confirm)``: the full small-sample report and the report
    of the shortlisted cells at the large sample size, whose best row is the
    final answer.
    """
    if n_small > n_large:
        raise InputError("n_small must not exceed n_large")
    if not 0 < q <= 1:
        raise InputError("q must be in (0, 1]")
    small = SweepGrid(grid.ws, grid.hi_indices, grid.lo_indices, n_small, grid.seed, grid.metrics)
    screen = grid_sweep(problem, small, workers=workers)
    metric = grid.metrics[0]
    losses = screen.losses(metric)
    order = sorted((lv, k) for k, lv in enumerate(losses) if screen.rows[k].ok)
    keep = max(1, math.ceil(q * len(screen.rows)))
    shortlist = [screen.rows[k].cell for _, k in order[:keep]]
    base_cell = Cell(1.0)
    cells = shortlist if base_cell in shortlist else [base_cell] + shortlist
    if n_small == n_large:
        rows = [screen.row(c) for c in cells]
        timings = {}
    else:
        rows, timings = run_cells(problem, cells, n_large, grid.seed, grid.metrics, workers)
    base = next(r for r in rows if r.cell.is_baseline)
    confirm = SweepReport(rows, list(grid.metrics), problem.describe(), base, timings,
                          problem.precision_margin)
    confirm.shortlist = shortlist
    return screen, confirm


@dataclass
class AblationReport:
    w: float
    steps: list
    baseline: float
    full: float
    enable_only: list
    disable_only: list
    metric: str

    @property
    def enable_deltas(self):
        return [v - self.baseline for v in self.enable_only]

    @property
    def disable_deltas(self):
        return [v - self.full for v in self.disable_only]

    @property
    def full_delta(self):
        return self.full - self.baseline

    def non_additivity(self):
        return sum(self.enable_deltas) - self.full_delta

    def to_csv(self):
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["step", "enable_only", "enable_delta", "disable_only", "disable_delta"])
        for s, e, ed, d, dd in zip(self.steps, self.enable_only, self.enable_deltas,
                                   self.disable_only, self.disable_deltas):
            wr.writerow([s, repr(e), repr(ed), repr(d), repr(dd)])
        return buf.getvalue()

    def summary(self):
        return {"schema": "guidance-interval/ablation/1", "w": self.w, "metric": self.metric,
                "baseline": self.baseline, "full": self.full, "full_delta": self.full_delta,
                "sum_enable_deltas": sum(self.enable_deltas), "non_additivity": self.non_additivity()}


def step_importance_ablation(problem, w, metric="frechet", n=1000, seed=0, steps=None):
    """Per-step guidance importance.

    For each step ``a`` in ``steps`` (default: all), score guidance enabled
    only at ``a`` and guidance everywhere in ``steps`` except ``a``.  The
    baselines are the unguided run and guidance on all of ``steps``.
    """
    if not w >= 1:
        raise InputError("ablation needs w >= 1")
    sched = problem.schedule
    steps = list(range(sched.steps) if steps is None else steps)
    reference = problem.reference(n)

    def run(table):
        g = GuidanceSpec(float(w), table, None, label="ablation")
        vals = evaluate_guidance(problem, g, n, seed, [metric], reference)
        return loss(metric, vals, None)

    ones = np.ones(sched.steps)
    full_table = ones.copy()
    full_table[steps] = w
    baseline = run(ones)
    full = run(full_table)
    enable, disable = [], []
    for a in steps:
        t = ones.copy()
        t[a] = w
        enable.append(run(t))
        t = full_table.copy()
        t[a] = 1.0
        disable.append(run(t))
    return AblationReport(float(w), steps, baseline, full, enable, disable, metric)


def noise_floor(problem, n, seeds, metric="frechet", guidance=None):
    """Standard deviation of a metric over independent seeds for one guidance setting."""
    g = guidance or no_guidance(problem.schedule)
    ref = problem.reference(n)
    vals = [loss(metric, evaluate_guidance(problem, g, n, s, [metric], ref), None) for s in seeds]
    return float(np.std(vals, ddof=1))
