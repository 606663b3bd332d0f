"""Deterministic ODE samplers with a per-step guidance weight.

The probability-flow ODE ``dx/dsigma = -(D(x; sigma) - x) / sigma`` is
integrated from ``sigma_0`` down to ``0``.  Guidance replaces ``D`` by
``w_a * D(x|c) + (1 - w_a) * D(x)`` where ``w_a`` is looked up by the step's
starting level and held fixed for every stage of that step.
"""

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from . import _rng
from .batch import SampleBatch
from .errors import DomainError, InputError, SolverDivergence
from .mixture import guided_denoise, ideal_denoise
from .schedule import SnappedInterval, snap_interval

SOLVERS = ("euler", "heun")
CHUNK = 4096


@dataclass(frozen=True, eq=False)
class GuidanceSpec:
    """Per-step guidance weights for one schedule.

    ``weight_table[a]`` is the weight used by step ``a`` (``sigma_a -> sigma_{a+1}``).
    ``interval`` is the snapped index pair when the table came from an
    interval, ``None`` for an empty interval or a free-form profile.
    """

    w: float
    weight_table: np.ndarray
    interval: SnappedInterval | None = None
    label: str = "interval"

    def __post_init__(self):
        t = np.asarray(self.weight_table, dtype=float)
        if t.ndim != 1 or not np.all(np.isfinite(t)):
            raise InputError("weight table must be a finite 1-D array")
        t.setflags(write=False)
        object.__setattr__(self, "weight_table", t)

    @property
    def steps(self):
        return self.weight_table.size

    @property
    def guided(self):
        """Steps that need an unconditional evaluation."""
        return self.weight_table != 1

    def to_dict(self, schedule=None):
        d = {"label": self.label, "w": self.w, "weight_table": self.weight_table.tolist()}
        if self.interval is not None:
            d["hi_index"], d["lo_index"] = self.interval
            if schedule is not None:
                d["sigma_hi"] = self.interval.sigma_hi(schedule)
                d["sigma_lo"] = self.interval.sigma_lo(schedule)
        return d


def guidance_from_indices(schedule, w, hi_index, lo_index):
    """Guide steps ``hi_index <= a < lo_index`` with weight ``w``; every other step uses 1."""
    if not math.isfinite(w):
        raise InputError("guidance weight must be finite")
    n = schedule.steps
    if not (0 <= hi_index <= n and 0 <= lo_index <= n):
        raise InputError(f"interval indices ({hi_index}, {lo_index}) outside 0..{n}")
    table = np.ones(n)
    if hi_index < lo_index:
        table[hi_index:lo_index] = w
        return GuidanceSpec(w, table, SnappedInterval(hi_index, lo_index))
    return GuidanceSpec(w, table, None)


def interval_guidance(schedule, w, sigma_lo=0.0, sigma_hi=math.inf, rounding="inward"):
    """Snap ``(sigma_lo, sigma_hi]`` onto the schedule and compile the weight table."""
    snapped = snap_interval(schedule, sigma_lo, sigma_hi, rounding=rounding)
    if snapped is None:
        return GuidanceSpec(w, np.ones(schedule.steps), None)
    return guidance_from_indices(schedule, w, *snapped)


def constant_guidance(schedule, w):
    """Guidance at every step: the traditional constant-weight scheme."""
    return guidance_from_indices(schedule, w, 0, schedule.steps)


def no_guidance(schedule):
    return GuidanceSpec(1.0, np.ones(schedule.steps), None, label="none")


def custom_weight_profile(schedule, profile, w=None):
    """Use ``profile`` verbatim as the per-step weight table."""
    p = np.asarray(profile, dtype=float)
    if p.ndim != 1 or p.size != schedule.steps:
        raise InputError(f"profile needs {schedule.steps} entries, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InputError("profile entries must be finite")
    return GuidanceSpec(float(np.max(p) if w is None else w), p, None, label="profile")


def drift(family, c, x, sigma, w_step):
    """``-(w D(x|c) + (1 - w) D(x) - x) / sigma``; the unconditional term is skipped when ``w == 1``."""
    if not sigma > 0:
        raise DomainError(f"drift needs sigma > 0, got {sigma}")
    xa = np.asarray(x, dtype=float)
    if w_step == 1:
        return -(ideal_denoise(family.conditional(c), xa, sigma) - xa) / sigma
    return -(guided_denoise(family, c, xa, sigma, w_step) - xa) / sigma


def stage_counts(sigmas, solver):
    """Denoiser stages per step: Heun uses 2 except on the final step into ``sigma = 0``."""
    sigmas = np.asarray(sigmas)
    if solver == "euler":
        return np.ones(sigmas.size - 1, dtype=int)
    if solver == "heun":
        return np.where(sigmas[1:] > 0, 2, 1)
    raise InputError(f"unknown solver {solver!r}; choose from {SOLVERS}")


def nfe_count(schedule, guidance, solver="heun"):
    """``(conditional, unconditional)`` denoiser evaluations for one chain."""
    stages = stage_counts(schedule.sigmas, solver)
    return int(stages.sum()), int(stages[guidance.guided].sum())


def integrate(drift_fn, sigmas, weights, x0, solver="heun", record=False):
    """Integrate ``dx/dsigma = drift_fn(x, sigma, w)`` over ``sigmas`` using ``weights[a]`` on step ``a``.

    ``x0`` is ``(d,)`` or ``(n, d)``.  Returns the terminal state, or the
    stacked states ``(N + 1, ...)`` when ``record`` is set.
    """
    if solver not in SOLVERS:
        raise InputError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InputError("initial state must be finite")
    states = [x] if record else None
    for a in range(len(sigmas) - 1):
        s_cur, s_next, w = float(sigmas[a]), float(sigmas[a + 1]), float(weights[a])
        h = s_next - s_cur
        # overflow shows up as a non-finite state and is reported just below
        with np.errstate(over="ignore", invalid="ignore"):
            d1 = drift_fn(x, s_cur, w)
            x_next = x + h * d1
            if solver == "heun" and s_next > 0:
                d2 = drift_fn(x_next, s_next, w)
                x_next = x + h * (d1 + d2) / 2
        if not np.all(np.isfinite(x_next)):
            bad = np.flatnonzero(~np.all(np.isfinite(np.atleast_2d(x_next)), axis=-1))
            raise SolverDivergence(a, chain=int(bad[0]) if x_next.ndim == 2 else None)
        x = x_next
        if record:
            states.append(x)
    return np.stack(states) if record else x


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x_0 .. x_N`` of one chain (or ``(N + 1, n, d)`` for a stacked batch)."""

    states: np.ndarray
    schedule: object
    guided: np.ndarray
    nfe: tuple
    solver: str = "heun"

    @property
    def terminal(self):
        return self.states[-1]

    def to_csv(self, chain_offset=0):
        """Rows ``chain,step,sigma,x0..,guided``; ``guided`` refers to the step leaving that state."""
        st = self.states
        if st.ndim == 2:
            st = st[:, None, :]
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["chain", "step", "sigma"] + [f"x{k}" for k in range(st.shape[2])] + ["guided"])
        sig = self.schedule.sigmas
        flags = np.append(self.guided, False)
        for ch in range(st.shape[1]):
            for a in range(st.shape[0]):
                wr.writerow([ch + chain_offset, a, repr(float(sig[a]))]
                            + [repr(float(v)) for v in st[a, ch]] + [int(flags[a])])
        return buf.getvalue()


def trajectories_from_csv(text):
    """Parse trajectory CSV back into ``(sigmas, states[(N + 1, n, d)], guided[N])``."""
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0] if rows else []
    if header[:3] != ["chain", "step", "sigma"] or header[-1:] != ["guided"] or len(header) < 5:
        raise InputError(f"malformed trajectory header: {header}")
    body = [r for r in rows[1:] if r]
    dim = len(header) - 4
    if not body or any(len(r) != len(header) for r in body):
        raise InputError("trajectory CSV is empty or ragged")
    try:
        chains = sorted({int(r[0]) for r in body})
        steps = sorted({int(r[1]) for r in body})
        if steps != list(range(len(steps))) or len(body) != len(steps) * len(chains):
            raise InputError("trajectory CSV must hold every step of every chain")
        states = np.empty((len(steps), len(chains), dim))
        sigmas = np.empty(len(steps))
        guided = np.zeros(len(steps), dtype=bool)
        cidx = {c: k for k, c in enumerate(chains)}
        for r in body:
            a, ch = int(r[1]), cidx[int(r[0])]
            sigmas[a] = float(r[2])
            states[a, ch] = [float(v) for v in r[3:-1]]
            guided[a] = r[-1] == "1"
    except InputError:
        raise
    except ValueError as exc:
        raise InputError(f"non-numeric trajectory entry: {exc}") from None
    return sigmas, states, guided[:-1]


def _solve(family, c, schedule, guidance, x0, solver):
    if guidance.steps != schedule.steps:
        raise InputError(f"guidance has {guidance.steps} steps, schedule has {schedule.steps}")
    family.conditional(c)

    def fn(x, sigma, w):
        return drift(family, c, x, sigma, w)

    states = integrate(fn, schedule.sigmas, guidance.weight_table, x0, solver=solver, record=True)
    return Trajectory(states, schedule, guidance.guided.copy(), nfe_count(schedule, guidance, solver),
                      solver)


def heun_solve(family, c, schedule, guidance, x0):
    """Second-order Heun integration; the last step into ``sigma = 0`` is a plain Euler step."""
    return _solve(family, c, schedule, guidance, x0, "heun")


def euler_solve(family, c, schedule, guidance, x0):
    return _solve(family, c, schedule, guidance, x0, "euler")


def initial_noise(schedule, dim, n, seed, start=0):
    """Chains ``start .. start+n-1`` of ``N(0, sigma_0^2 I)``; chain ``k`` depends only on ``(seed, k)``."""
    return schedule.sigmas[0] * _rng.normals(seed, _rng.NOISE_STREAM, start, start + n, dim)


def sample_batch(family, c, schedule, guidance, n, seed, solver="heun", start=0):
    """Terminal states of ``n`` chains started from ``N(0, sigma_0^2 I)``.

    The result for chain ``k`` is a function of ``(seed, k)`` alone, so
    batches split at any boundary concatenate to the monolithic batch.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    if guidance.steps != schedule.steps:
        raise InputError(f"guidance has {guidance.steps} steps, schedule has {schedule.steps}")
    family.conditional(c)

    def fn(x, sigma, w):
        return drift(family, c, x, sigma, w)

    out = np.empty((n, family.dim))
    for lo in range(0, n, CHUNK):
        hi = min(n, lo + CHUNK)
        x0 = initial_noise(schedule, family.dim, hi - lo, seed, start + lo)
        try:
            out[lo:hi] = integrate(fn, schedule.sigmas, guidance.weight_table, x0, solver=solver)
        except SolverDivergence as exc:
            raise SolverDivergence(exc.step, chain=start + lo + (exc.chain or 0)) from None
    cond, uncond = nfe_count(schedule, guidance, solver)
    prov = {
        "source": "ode",
        "class": str(c),
        "solver": solver,
        "schedule": schedule.rule,
        "guidance": guidance.to_dict(schedule),
        "start": start,
        "nfe_per_chain": {"cond": cond, "uncond": uncond},
    }
    return SampleBatch(out, seed=seed, provenance=prov)


def sample_trajectories(family, c, schedule, guidance, n, seed, solver="heun", start=0):
    """Like :func:`sample_batch` but keeps every intermediate state, shape ``(N + 1, n, d)``."""
    x0 = initial_noise(schedule, family.dim, n, seed, start)
    return _solve(family, c, schedule, guidance, x0, solver)
