"""Grid sweeps, two-phase search, bisection, screening, ablation and journals."""

import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guidance_interval.errors import InputError, ResumeConflict, SearchError
from guidance_interval.sampler import constant_guidance, nfe_count, no_guidance
from guidance_interval.search import (Cell, Journal, SweepGrid, bisection_refine, evaluate_guidance,
                                      grid_sweep, loss, noise_floor, run_cells, screen_then_confirm,
                                      step_importance_ablation, two_phase_search)
from guidance_interval.toys import toy_1d_problem, toy_2d_problem

P1 = toy_1d_problem()
P2 = toy_2d_problem()


# ---------------------------------------------------------------- loss orientation

def test_loss_orientation():
    assert loss("frechet", {"frechet": 0.3}) == 0.3
    assert loss("recall", {"recall": 0.9}) == pytest.approx(0.1)
    base = {"precision": 0.9}
    assert loss("pr", {"precision": 0.89, "recall": 0.8}, base) == pytest.approx(0.2)
    # below the floor ranks after every row above it
    below = loss("pr", {"precision": 0.87, "recall": 1.0}, base)
    assert below > loss("pr", {"precision": 0.88, "recall": 0.0}, base)
    with pytest.raises(InputError):
        loss("fid", {})


# ---------------------------------------------------------------- grid sweep

def test_single_w1_cell_equals_baseline():
    grid = SweepGrid([1.0], [0], [32], n=500, metrics=["frechet", "wasserstein1"])
    rep = grid_sweep(P1, grid)
    base = evaluate_guidance(P1, no_guidance(P1.schedule), 500, 0, ["frechet", "wasserstein1"])
    assert rep.baseline.values == base
    assert rep.row(Cell(1.0, 0, 32)).values == base


GRID3 = dict(ws=[2.0, 3.0, 4.0], hi_indices=[10, 16, 22], lo_indices=[24, 28, 32], n=500, seed=3,
             metrics=["wasserstein1"])

FRESH = """
import json
from guidance_interval.search import SweepGrid, grid_sweep
from guidance_interval.toys import toy_1d_problem
rep = grid_sweep(toy_1d_problem(), SweepGrid(**json.loads({grid!r})))
print(rep.to_csv(), end="")
"""


def test_sweep_matches_fresh_process():
    rep = grid_sweep(P1, SweepGrid(**GRID3))
    assert len(rep.rows) == 28
    out = subprocess.run([sys.executable, "-c", FRESH.format(grid=json.dumps(GRID3))],
                         capture_output=True, text=True, check=True).stdout
    assert out == rep.to_csv()
    best = rep.best()
    assert all(best.values["wasserstein1"] <= r.values["wasserstein1"] for r in rep.rows if r.ok)


def test_sweep_rows_are_schedule_members_with_analytic_nfe():
    rep = grid_sweep(P1, SweepGrid(**GRID3))
    sig = P1.schedule.sigmas
    for r in rep.rows:
        g = r.cell.guidance(P1.schedule)
        assert (r.nfe_cond, r.nfe_uncond) == tuple(r.n * v for v in nfe_count(P1.schedule, g, "heun"))
        if not r.cell.is_baseline:
            assert r.sigma_hi == sig[r.hi_index] and r.sigma_lo == sig[r.lo_index]


def test_sweep_worker_invariance():
    grid = SweepGrid([2.0, 4.0], [12, 20], [32], n=300, seed=1, metrics=["frechet", "pr"])
    a = grid_sweep(P2, grid, workers=1)
    b = grid_sweep(P2, grid, workers=2)
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()


def test_limited_interval_beats_full_at_higher_w():
    ws = [1.25, 1.5, 2.0, 3.0, 4.0, 5.0]
    rep = grid_sweep(P2, SweepGrid(ws, [0, 14, 16, 18, 20], [32], n=2000))
    full = [r for r in rep.rows if r.hi_index == 0]
    limited = [r for r in rep.rows if r.hi_index not in (None, 0)]
    best_full = min(full, key=lambda r: r.values["frechet"])
    best_lim = min(limited, key=lambda r: r.values["frechet"])
    assert best_lim.values["frechet"] < best_full.values["frechet"]
    assert best_lim.w > best_full.w


def test_dominance_over_baseline_and_full_cfg():
    ws = [2.0, 3.0]
    rep = grid_sweep(P2, SweepGrid(ws, list(range(0, 32, 4)), [32], n=1000, metrics=["frechet"]))
    best = rep.best()
    assert best.values["frechet"] <= rep.baseline.values["frechet"]
    for w in ws:
        assert best.values["frechet"] <= rep.row(Cell(w, 0, 32)).values["frechet"]


def test_failed_cell_does_not_poison_sweep():
    rep = grid_sweep(P1, SweepGrid([2.0, 1e300], [16], [32], n=200))
    bad = rep.row(Cell(1e300, 16, 32))
    assert not bad.ok and "SolverDivergence" in bad.error
    assert rep.row(Cell(2.0, 16, 32)).ok
    assert rep.summary()["failed"] == 1


def test_grid_validation():
    for bad in (dict(ws=[]), dict(n=50), dict(hi_indices=[40]), dict(metrics=["fid"])):
        g = SweepGrid(**{**dict(ws=[2.0], hi_indices=[0], lo_indices=[32]), **bad})
        with pytest.raises(InputError):
            grid_sweep(P1, g)


# ---------------------------------------------------------------- journal and resume

def test_resume_after_interruption_equals_uninterrupted(tmp_path):
    grid = SweepGrid([2.0, 3.0], [10, 20], [26, 32], n=200)
    whole = grid_sweep(P1, grid)
    j = tmp_path / "journal.jsonl"
    part = grid_sweep(P1, grid, journal=j, stop_after=3)
    assert len(part.rows) == 3
    resumed = grid_sweep(P1, grid, journal=j)
    assert resumed.to_csv() == whole.to_csv()
    # a third run evaluates nothing new
    _, timings = run_cells(P1, grid.cells(), grid.n, grid.seed, grid.metrics, journal=j)
    assert timings == {}


def test_journal_drops_partial_final_line(tmp_path):
    grid = SweepGrid([2.0], [10, 20], [32], n=200)
    j = tmp_path / "journal.jsonl"
    grid_sweep(P1, grid, journal=j, stop_after=2)
    j.write_text(j.read_text() + '{"key": "2.0:20:32", "ro')
    rep = grid_sweep(P1, grid, journal=j)
    assert rep.to_csv() == grid_sweep(P1, grid).to_csv()
    assert all(json.loads(ln) for ln in j.read_text().splitlines())


def test_journal_mismatch_and_corruption(tmp_path):
    j = tmp_path / "journal.jsonl"
    grid_sweep(P1, SweepGrid([2.0], [10], [32], n=200), journal=j)
    with pytest.raises(ResumeConflict):
        grid_sweep(P1, SweepGrid([3.0], [10], [32], n=200), journal=j)
    lines = j.read_text().splitlines()
    j.write_text(lines[0] + "\nnot json\n")
    with pytest.raises(ResumeConflict):
        grid_sweep(P1, SweepGrid([2.0], [10], [32], n=200), journal=j)
    assert Journal(tmp_path / "missing.jsonl", "x").load() == {}


# ---------------------------------------------------------------- two-phase search

def test_two_phase_single_candidates():
    res = two_phase_search(P1, 3.0, "wasserstein1", n=300, hi_candidates=[18], lo_candidates=[32])
    assert (res.hi_index, res.lo_index) == (18, 32)
    assert res.evaluations == 1
    with pytest.raises(InputError):
        two_phase_search(P1, 1.0)


def test_two_phase_interior_optimum_and_grid_agreement():
    his, los = list(range(10, 26)), [20, 24, 27, 30, 32]
    res = two_phase_search(P2, 3.0, "frechet", n=1000, hi_candidates=his, lo_candidates=los)
    assert his[0] < res.hi_index < his[-1]
    rep = grid_sweep(P2, SweepGrid([3.0], his, los, n=1000))
    opt = min(r.values["frechet"] for r in rep.rows if not r.cell.is_baseline)
    assert res.value <= 1.05 * opt
    # every trail point is a cached evaluation
    assert res.evaluations == len(res.phase1) + len(res.phase2) - 1


def test_two_phase_bisect_uses_fewer_evaluations():
    his = list(range(8, 28))
    full = two_phase_search(P2, 3.0, "frechet", n=1000, hi_candidates=his)
    fast = two_phase_search(P2, 3.0, "frechet", n=1000, hi_candidates=his, bisect=True)
    assert fast.evaluations < full.evaluations
    assert fast.value <= 1.05 * full.value


def test_two_phase_all_failed():
    with pytest.raises(SearchError):
        two_phase_search(P1, 1e300, n=200, hi_candidates=[0, 1])


# ---------------------------------------------------------------- bisection

def test_bisection_unimodal_all_argmins():
    for m in range(32):
        calls = []

        def f(i):
            calls.append(i)
            return (i - m) ** 2 + 0.1 * i

        res = bisection_refine(f, 0, 31)
        assert res.index == m and res.evaluations <= 9 and len(calls) == len(set(calls))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 200), st.integers(2, 200), st.data())
def test_bisection_evaluation_bound(lo, width, data):
    m = data.draw(st.integers(lo, lo + width))
    slope_l, slope_r = data.draw(st.floats(0.1, 10)), data.draw(st.floats(0.1, 10))
    f = lambda i: slope_l * (m - i) if i <= m else slope_r * (i - m)  # noqa: E731
    res = bisection_refine(f, lo, lo + width)
    assert res.index == m
    assert res.evaluations <= math.ceil(math.log(width) / math.log((1 + 5 ** 0.5) / 2)) + 2


def test_bisection_trivial_and_flagged_cases():
    res = bisection_refine(lambda i: abs(i - 4), 4, 5)
    assert res.index == 4 and res.evaluations == 2
    flat = bisection_refine(lambda i: 1.0, 0, 31)
    assert flat.flat and not flat.bracketed and 0 <= flat.index <= 31
    edge = bisection_refine(lambda i: 0.0, 0, 31, trail={0: 1.0, 10: 2.0, 20: 3.0})
    assert edge.index == 0 and not edge.bracketed and edge.evaluations == 0
    narrowed = bisection_refine(lambda i: abs(i - 13), 0, 31, trail={0: 13, 10: 3, 20: 7, 31: 18})
    assert narrowed.index == 13 and narrowed.bracketed
    with pytest.raises(InputError):
        bisection_refine(lambda i: 0, 3, 2)


# ---------------------------------------------------------------- screening

SCREEN = SweepGrid([1.5, 2.0, 3.0, 4.0, 5.0], [0, 14, 16, 18, 20], [28, 32], n=4000)


def test_screening_equal_sizes_is_grid_sweep():
    small = SweepGrid([2.0, 3.0], [16, 20], [32], n=300)
    direct = grid_sweep(P2, small)
    screen, confirm = screen_then_confirm(P2, small, 300, 300, q=1.0)
    assert screen.to_csv() == direct.to_csv()
    # the confirm pass re-ranks the same rows
    assert sorted(confirm.to_csv().splitlines()) == sorted(direct.to_csv().splitlines())
    assert confirm.best() == direct.best()


def test_screening_retains_winner_at_tenth_cost():
    full = grid_sweep(P2, SCREEN)
    screen, confirm = screen_then_confirm(P2, SCREEN, 400, 4000, q=0.1)
    assert full.best().cell in confirm.shortlist
    assert confirm.best().cell == full.best().cell
    assert full.nfe_total == 10 * screen.nfe_total
    with pytest.raises(InputError):
        screen_then_confirm(P2, SCREEN, 500, 400)
    with pytest.raises(InputError):
        screen_then_confirm(P2, SCREEN, 400, 4000, q=0)


# ---------------------------------------------------------------- ablation

def test_ablation_w1_is_zero():
    rep = step_importance_ablation(P1, 1.0, "wasserstein1", n=300, steps=[10, 20])
    assert rep.enable_deltas == [0.0, 0.0] and rep.disable_deltas == [0.0, 0.0]
    assert rep.non_additivity() == 0.0


def test_ablation_single_step_smaller_than_whole_interval():
    steps = list(range(14, 22))
    rep = step_importance_ablation(P2, 3.0, "frechet", n=1000, steps=steps)
    whole = abs(rep.full_delta)
    mid = steps[len(steps) // 2]
    assert abs(rep.disable_deltas[steps.index(mid)]) < whole
    assert "step" in rep.to_csv().splitlines()[0]
    assert rep.summary()["non_additivity"] == pytest.approx(rep.non_additivity())


def test_noise_floor_positive():
    assert noise_floor(P1, 300, [1, 2, 3], "wasserstein1") > 0
    assert noise_floor(P1, 300, [1, 2], "wasserstein1", constant_guidance(P1.schedule, 2.0)) > 0


def test_problem_fingerprint_sensitive_to_margin():
    from dataclasses import replace
    q = replace(P1, precision_margin=0.05)
    assert q.describe() != P1.describe()
    assert np.isclose(P1.precision_margin, 0.02)
