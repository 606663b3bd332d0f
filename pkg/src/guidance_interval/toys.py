"""Canonical toy problems used by the tests, demos and CLI defaults.

These parameters are repo constants chosen so the toys show the behaviours
under study at desk scale; they are not taken from any published figure.

``TOY_1D`` is a two-class line: class ``A`` is one narrow mode, class ``B``
has a majority mode far to the right and a minority mode sitting between the
two.  With exact denoisers, guiding class ``B`` at high noise levels pushes
chains away from ``A`` and starves the minority mode.

With exact denoisers ``w = 1`` already reproduces the data, so guidance can
only hurt.  :func:`leaky` builds the kind of imperfect model that guidance is
meant to repair: every class conditional leaks a fraction of its mass onto
the other classes.  ``TOY_2D`` pairs a leaky 2-D model with its exact target.
"""

from dataclasses import replace

import numpy as np

from .mixture import ConditionedFamily, GaussianMixture
from .schedule import EDM2, rho_schedule
from .search import SweepProblem

TOY_1D = ConditionedFamily(
    {
        "A": GaussianMixture.from_components([(1.0, -1.0, 0.05)]),
        "B": GaussianMixture.from_components([(0.7, 1.5, 0.05), (0.3, -0.3, 0.05)]),
    },
    {"A": 0.5, "B": 0.5},
)
TOY_1D_CLASS = "B"
TOY_1D_MINORITY = 1  # component index of the minority mode in class B
TOY_1D_MINORITY_MASS = 0.3
TOY_1D_W = 3.0
# guidance switched off above sigma = 0.5, then additionally below 0.05
TOY_1D_LIMITED = (0.0, 0.5)
TOY_1D_MIDDLE = (0.05, 0.5)


def leaky(family, eps):
    """Model family whose class ``c`` conditional is ``(1 - eps) p(x|c) + eps p(x|not c)``.

    ``p(x|not c)`` is the prior-weighted mixture of the other classes.
    """
    if not 0 <= eps < 1:
        raise ValueError("eps must be in [0, 1)")
    classes = {}
    for c, mix in family.classes.items():
        others = [k for k in family.classes if k != c]
        z = sum(family.priors[k] for k in others)
        comps = [((1 - eps) * w, m, v) for w, m, v in zip(mix.weights, mix.means, mix.variances)]
        for k in others:
            o = family.classes[k]
            comps += [(eps * family.priors[k] / z * w, m, v)
                      for w, m, v in zip(o.weights, o.means, o.variances)]
        wsum = sum(cw for cw, _, _ in comps)
        classes[c] = GaussianMixture.from_components([(cw / wsum, m, v) for cw, m, v in comps])
    return ConditionedFamily(classes, family.priors)


_V2 = [0.05, 0.05]
TOY_2D_TRUE = ConditionedFamily(
    {
        "A": GaussianMixture.from_components([(1.0, [-1.0, 0.0], _V2)]),
        "B": GaussianMixture.from_components([(0.7, [1.5, 0.0], _V2), (0.3, [-0.3, 0.8], _V2)]),
    },
    {"A": 0.8, "B": 0.2},
)
TOY_2D_LEAK = 0.2
TOY_2D_MODEL = leaky(TOY_2D_TRUE, TOY_2D_LEAK)
TOY_2D_CLASS = "B"


def toy_1d_problem(model_leak=0.0, steps=32):
    """Sample ``TOY_1D`` class ``B``; with ``model_leak > 0`` the sampler uses a leaky model."""
    fam = leaky(TOY_1D, model_leak) if model_leak else TOY_1D
    sched = rho_schedule(replace(EDM2, steps=steps))
    return SweepProblem(fam, TOY_1D_CLASS, sched, TOY_1D.conditional(TOY_1D_CLASS))


def toy_2d_problem(steps=32, ref_seed=10_000):
    """Leaky 2-D model sampled for class ``B``, scored against the exact class-``B`` mixture."""
    sched = rho_schedule(replace(EDM2, steps=steps))
    return SweepProblem(TOY_2D_MODEL, TOY_2D_CLASS, sched, TOY_2D_TRUE.conditional(TOY_2D_CLASS),
                        ref_seed=ref_seed)


def minority_mass(batch):
    """Fraction of a class-``B`` batch of ``TOY_1D`` assigned to the minority mode."""
    from .metrics import mode_masses

    return float(mode_masses(batch, TOY_1D.conditional(TOY_1D_CLASS))[TOY_1D_MINORITY])


def grid_ws(lo=1.0, hi=6.0, step=0.25):
    return [float(w) for w in np.arange(lo, hi + step / 2, step)]
