"""SVG renderers: determinism, normalization and golden files."""

import importlib.util
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guidance_interval import plots
from guidance_interval.errors import InputError
from guidance_interval.schedule import EDM2, rho_schedule
from guidance_interval.toys import TOY_1D

GOLDEN_DIR = Path(__file__).parent / "golden"
_spec = importlib.util.spec_from_file_location("golden_regen", GOLDEN_DIR / "regen.py")
regen = importlib.util.module_from_spec(_spec)
_spec.loader.exec_module(regen)

SIG = rho_schedule(EDM2).sigmas


@pytest.mark.parametrize("name", sorted(regen.GOLDEN))
def test_golden_files(name):
    assert regen.GOLDEN[name]() == (GOLDEN_DIR / name).read_text(), \
        f"{name} changed; inspect it and rerun tests/golden/regen.py if intended"


def test_golden_fans_show_mode_drop():
    # terminal y positions of the chains: full guidance leaves the lower mode empty
    def terminal_ys(svg):
        ns = "{http://www.w3.org/2000/svg}"
        segs = [[tuple(map(float, q.split(","))) for q in p.get("points").split()]
                for p in ET.fromstring(svg).iter(ns + "polyline")]
        right = max(s[-1][0] for s in segs)
        return np.array([s[-1][1] for s in segs if s[-1][0] == right])

    full = terminal_ys((GOLDEN_DIR / "fan_full.svg").read_text())
    limited = terminal_ys((GOLDEN_DIR / "fan_limited.svg").read_text())
    # one chain per terminal segment; the limited fan spans both modes
    assert len(full) == len(limited) == 48
    assert np.ptp(limited) > 2 * np.ptp(full)


def test_renderers_are_deterministic_and_well_formed():
    rng = np.random.default_rng(0)
    states = np.cumsum(rng.normal(size=(33, 5)), axis=0)[::-1]
    draws = rng.normal(size=300)
    outs = [
        lambda: plots.trajectory_fan(SIG, states, np.arange(32) > 16, None, TOY_1D, "B", "t"),
        lambda: plots.trajectory_fan(SIG, states, None, plots.PlotSpec("trajectory-fan", log_sigma=False)),
        lambda: plots.density_heatmap(TOY_1D, "A", SIG, plots.PlotSpec("density-heatmap", resolution=12)),
        lambda: plots.histogram(draws, TOY_1D.conditional("B")),
        lambda: plots.metric_curve([1, 2, 3], {"a": [0.3, 0.1, 0.2], "b": [0.5, np.nan, 0.4]}),
        lambda: plots.pr_curve([1, 2], {"x": ([0.9, 0.8], [0.5, 0.7])}),
    ]
    for make in outs:
        a = make()
        assert a == make()
        ET.fromstring(a)


def test_same_inputs_same_bytes_across_copies():
    x = np.random.default_rng(1).normal(size=500)
    assert plots.histogram(x) == plots.histogram(x.copy())


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 200), st.integers(1, 500))
def test_histogram_integrates_to_one(seed, bins, n):
    x = np.random.default_rng(seed).standard_t(2, size=n)
    edges, h = plots.histogram_heights(x, bins, (float(x.min()) - 0.1, float(x.max()) + 0.1))
    assert abs(np.sum(h * np.diff(edges)) - 1.0) < 1e-6


def test_density_overlay_integrates_to_one():
    from guidance_interval.mixture import smoothed_density
    grid = np.linspace(-4, 4, 20001)
    dens = np.asarray(smoothed_density(TOY_1D.conditional("B"), grid, 0.0))
    assert abs(np.trapezoid(dens, grid) - 1.0) < 1e-6


def test_renderer_errors():
    with pytest.raises(InputError):
        plots.PlotSpec("pie")
    with pytest.raises(InputError):
        plots.PlotSpec("histogram", resolution=0)
    with pytest.raises(InputError):
        plots.PlotSpec("histogram", x_range=(1.0, 0.0))
    with pytest.raises(InputError):
        plots.histogram(np.zeros(0))
    with pytest.raises(InputError):
        plots.histogram(np.zeros((5, 2)))
    with pytest.raises(InputError):
        plots.histogram_heights([10.0], 5, (0.0, 1.0))
    with pytest.raises(InputError):
        plots.trajectory_fan(SIG, np.zeros((33, 0)))
    with pytest.raises(InputError):
        plots.metric_curve([], {})
    with pytest.raises(InputError):
        plots.metric_curve([1.0], {"a": [np.nan]})
