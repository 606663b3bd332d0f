"""Noise-level discretizations and interval snapping."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guidance_interval.errors import InputError, ScheduleError
from guidance_interval.schedule import (DIT, EDM2, SDXL_RECONSTRUCTED, SDXL_STATED, IddpmScheduleParams,
                                        NoiseSchedule, RhoScheduleParams, alpha_bar, iddpm_schedule,
                                        iddpm_u_table, interval_steps, rho_schedule, schedule_from_rule,
                                        snap_interval)

from oracles import u_table_closed_form


# ---------------------------------------------------------------- rho rule

def test_edm_endpoints():
    s = rho_schedule(EDM2).sigmas
    assert s.size == 33
    assert s[0] == 80.0
    assert s[31] == 0.002
    assert s[32] == 0.0


def test_sdxl_reconstructed_listed_levels():
    s = rho_schedule(SDXL_RECONSTRUCTED).sigmas
    for i, want in ((0, 14.61), (1, 13.41), (2, 12.28), (31, 0.03)):
        assert abs(s[i] - want) <= 0.01


def test_sdxl_stated_constants_do_not_give_listed_levels():
    # the stated 80 / 0.002 / rho = 3 constants start at 80, not 14.61
    s = rho_schedule(SDXL_STATED).sigmas
    assert s[0] == 80.0 and abs(s[1] - 13.41) > 1


def test_smallest_schedule():
    s = rho_schedule(RhoScheduleParams(0.5, 10.0, 7.0, 2)).sigmas
    np.testing.assert_allclose(s, [10.0, 0.5, 0.0], rtol=1e-14)


@pytest.mark.parametrize("kw", [dict(sigma_min=0.0), dict(sigma_min=90.0), dict(rho=0.0),
                                dict(steps=1), dict(steps=2.5), dict(sigma_max=math.inf)])
def test_rho_params_validated(kw):
    with pytest.raises(InputError):
        RhoScheduleParams(**{**dict(sigma_min=0.002, sigma_max=80.0, rho=7.0, steps=32), **kw})


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(1.5, 1e3), st.floats(0.5, 12.0), st.integers(2, 300))
def test_rho_schedule_decreasing_with_exact_endpoints(smin, ratio, rho, n):
    p = RhoScheduleParams(smin, smin * ratio, rho, n)
    s = rho_schedule(p).sigmas
    assert np.all(np.diff(s) < 0) and s[-1] == 0
    assert s[0] == p.sigma_max and s[n - 1] == p.sigma_min


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 0.1), st.floats(5.0, 100.0), st.floats(1.0, 9.0), st.integers(2, 64))
def test_rho_grid_nests_at_2n_minus_1(smin, smax, rho, n):
    coarse = rho_schedule(RhoScheduleParams(smin, smax, rho, n)).sigmas[:-1]
    fine = rho_schedule(RhoScheduleParams(smin, smax, rho, 2 * n - 1)).sigmas[:-1]
    np.testing.assert_allclose(fine[::2], coarse, rtol=1e-12)


# ---------------------------------------------------------------- iDDPM rule

def test_alpha_bar_boundaries():
    assert alpha_bar(0, 1000, 0.008) == 0.0
    assert alpha_bar(1000 * 1.008, 1000, 0.008) == pytest.approx(1.0, abs=1e-15)
    # abar_0 = 0 makes the first ratio 0; the C1 guard keeps u_0 finite
    u = iddpm_u_table(0.001, 0.008, 1000)
    assert np.isfinite(u[0]) and u[-1] == 0.0


def test_iddpm_defaults_match_closed_form():
    s = iddpm_schedule(DIT)
    assert len(s) == 251 and s.sigmas[-1] == 0
    assert np.all(np.diff(s.sigmas) < 0)
    u_loop = iddpm_u_table(0.001, 0.008, 1000)
    u_vec = u_table_closed_form(0.001, 0.008, 1000)
    np.testing.assert_allclose(u_loop, u_vec, rtol=1e-9, atol=0)
    idx = np.floor(999 / 249 * np.arange(250) + 0.5).astype(int)
    np.testing.assert_allclose(s.sigmas[:-1], u_vec[idx], rtol=1e-9)


def test_iddpm_stride_one_is_table_segment():
    s = iddpm_schedule(IddpmScheduleParams(steps=1000 - 100, j0=100))
    u = iddpm_u_table(0.001, 0.008, 1000)
    np.testing.assert_array_equal(s.sigmas[:-1], u[100:1000])


def test_iddpm_too_many_steps():
    with pytest.raises(ScheduleError):
        iddpm_schedule(IddpmScheduleParams(steps=400, j0=700))


def test_iddpm_flat_table_rejected():
    # C1 >= every ratio makes u constant, outside the valid regime
    with pytest.raises(ScheduleError):
        iddpm_schedule(IddpmScheduleParams(C1=1.0))


@pytest.mark.parametrize("kw", [dict(C1=0.0), dict(j0=1000), dict(j0=-1), dict(steps=1)])
def test_iddpm_params_validated(kw):
    with pytest.raises(InputError):
        IddpmScheduleParams(**kw)


def test_schedule_from_rule_round_trip():
    for s in (rho_schedule(EDM2), iddpm_schedule(IddpmScheduleParams(steps=50))):
        assert np.array_equal(schedule_from_rule(s.rule).sigmas, s.sigmas)
    with pytest.raises(InputError):
        schedule_from_rule({"rule": "cosine"})
    with pytest.raises(InputError):
        schedule_from_rule({"rule": "rho", "sigma_mni": 1.0})


def test_noise_schedule_invariants():
    with pytest.raises(InputError):
        NoiseSchedule([1.0])
    with pytest.raises(InputError):
        NoiseSchedule([2.0, 1.0])
    with pytest.raises(ScheduleError):
        NoiseSchedule([1.0, 2.0, 0.0])
    s = NoiseSchedule([2.0, 1.0, 0.0])
    assert s.steps == 2
    assert s.to_csv() == "index,sigma\n0,2.0\n1,1.0\n2,0.0\n"


# ---------------------------------------------------------------- snapping

EDM = rho_schedule(EDM2)


def test_snap_full_range_recovers_constant_guidance():
    assert tuple(snap_interval(EDM, 0.0, math.inf)) == (0, 32)
    assert tuple(snap_interval(EDM, 0.0, 1e9)) == (0, 32)


def test_snap_empty_interval():
    s = EDM.sigmas
    mid = 0.5 * (s[10] + s[11])
    assert snap_interval(EDM, mid - 1e-6, mid) is None


def test_snap_rejects_bad_order():
    with pytest.raises(InputError):
        snap_interval(EDM, 1.0, 1.0)
    with pytest.raises(InputError):
        snap_interval(EDM, -0.1, 1.0)
    with pytest.raises(InputError):
        snap_interval(EDM, 0.1, 1.0, rounding="up")


def test_snap_edm_interval_against_enumeration():
    snapped = snap_interval(EDM, 0.19, 1.61)
    s = EDM.sigmas
    lo, hi = snapped.sigma_lo(EDM), snapped.sigma_hi(EDM)
    assert lo in s and hi in s
    assert 0.19 <= lo < hi <= 1.61
    members = [a for a in range(EDM.steps) if lo < s[a] <= hi]
    assert list(snapped.steps()) == members
    # inward snapping drops step 22 (sigma = 0.2003...) because 0.19 lies above sigma_23 = 0.1886
    assert members == list(range(17, 22))


def test_nearest_rounding_reads_two_decimal_reports():
    # two-decimal endpoints are rounded schedule levels; nearest rounding recovers them
    assert len(snap_interval(EDM, 0.19, 1.61, rounding="nearest")) == 6
    assert len(snap_interval(EDM, 0.6, 5.0, rounding="nearest")) == 7
    dit = iddpm_schedule(DIT)
    assert len(snap_interval(dit, 0.34, 1.02, rounding="nearest")) == 75
    sdxl = rho_schedule(SDXL_RECONSTRUCTED)
    assert len(snap_interval(sdxl, 0.28, 5.42, rounding="nearest")) == 16


def test_interval_steps_raw_membership():
    assert list(interval_steps(EDM, 0.19, 1.61)) == list(range(17, 23))
    assert list(interval_steps(EDM, 0.0, math.inf)) == list(range(32))


@settings(max_examples=300, deadline=None)
@given(st.floats(0.0, 100.0), st.floats(0.0, 100.0), st.sampled_from(["inward", "nearest"]))
def test_snap_invariants(a, b, rounding):
    lo, hi = min(a, b), max(a, b)
    if lo == hi:
        return
    s = EDM.sigmas
    sn = snap_interval(EDM, lo, hi, rounding=rounding)
    if rounding == "inward":
        # raw members minus the step starting at the level sigma_lo rounds up to
        j_up = max((k for k in range(len(s)) if s[k] >= lo), default=None)
        want = [a for a in interval_steps(EDM, lo, hi) if a != j_up]
        assert (list(sn.steps()) if sn else []) == want
    if sn is None:
        return
    i, j = sn
    assert 0 <= i < j <= EDM.steps
    # idempotence: re-snapping snapped levels returns the same indices
    assert snap_interval(EDM, s[j], s[i], rounding=rounding) == sn
    if rounding == "inward":
        assert lo <= s[j] and (s[i] <= hi or i == 0)
