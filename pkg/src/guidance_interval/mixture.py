"""Diagonal Gaussian mixtures and their closed-form denoisers.

A mixture convolved with ``N(0, sigma^2 I)`` is again a mixture with every
component variance increased by ``sigma^2``.  The minimum-L2 denoiser of that
smoothed distribution is the posterior mean ``E[y | y + n = x]``, which for a
Gaussian mixture is a responsibility-weighted average of per-component
Gaussian posterior means.  Everything here is evaluated elementwise per axis
and vectorized over a leading batch dimension.
"""

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import _rng
from .batch import SampleBatch
from .errors import DomainError, InputError

MAX_DIM = 8
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Mixture of axis-aligned Gaussians.

    ``weights`` has shape ``(K,)``; ``means`` and ``variances`` have shape ``(K, dim)``.
    Zero variances are allowed (point masses) as long as the mixture is only
    evaluated at ``sigma > 0``.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        m = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise InputError("a mixture needs at least one component")
        k = w.size
        if m.ndim == 1:
            m = m.reshape(k, -1)
        if v.ndim == 1:
            v = v.reshape(k, -1)
        if m.shape[0] != k or v.shape != m.shape:
            raise InputError(
                f"component arrays disagree: weights {w.shape}, means {m.shape}, variances {v.shape}")
        if not 1 <= m.shape[1] <= MAX_DIM:
            raise InputError(f"dim must be in [1, {MAX_DIM}], got {m.shape[1]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(m)) and np.all(np.isfinite(v))):
            raise InputError("mixture parameters must be finite")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InputError(f"weights must be positive and sum to 1, got {w.tolist()}")
        if np.any(v < 0):
            raise InputError("variances must be non-negative")
        for name, arr in (("weights", w), ("means", m), ("variances", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_components(cls, components):
        """Build from an iterable of ``(weight, mean, variance)``; scalars mean dim 1."""
        comps = list(components)
        if not comps:
            raise InputError("a mixture needs at least one component")
        w = [c[0] for c in comps]
        m = [np.atleast_1d(np.asarray(c[1], dtype=float)) for c in comps]
        v = [np.atleast_1d(np.asarray(c[2], dtype=float)) for c in comps]
        if len({a.shape for a in m + v}) != 1:
            raise InputError("every component mean/variance must have length dim")
        return cls(np.array(w, dtype=float), np.stack(m), np.stack(v))

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def n_components(self):
        return self.weights.size

    def mean(self):
        return self.weights @ self.means

    def smoothed(self, sigma):
        """The mixture of ``p(x; sigma)``: identical components with variances increased by ``sigma^2``."""
        sigma = _check_sigma(sigma)
        return GaussianMixture(self.weights, self.means, self.variances + sigma**2)

    def to_dict(self):
        return {
            "dim": self.dim,
            "components": [
                {"weight": float(w), "mean": m.tolist(), "variance": v.tolist()}
                for w, m, v in zip(self.weights, self.means, self.variances)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            comps = [(c["weight"], c["mean"], c["variance"]) for c in d["components"]]
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed mixture definition: missing {exc}") from None
        mix = cls.from_components(comps)
        if "dim" in d and d["dim"] != mix.dim:
            raise InputError(f"declared dim {d['dim']} != component length {mix.dim}")
        return mix


@dataclass(frozen=True, eq=False)
class ConditionedFamily:
    """Class-conditional mixtures plus class priors.

    The unconditional distribution is the prior-weighted union of all class
    components, so the unconditional denoiser is exact as well.
    """

    classes: dict
    priors: dict

    def __post_init__(self):
        if not self.classes:
            raise InputError("a family needs at least one class")
        if set(self.classes) != set(self.priors):
            raise InputError("classes and priors must have the same labels")
        dims = {mix.dim for mix in self.classes.values()}
        if len(dims) != 1:
            raise InputError(f"all class mixtures must share dim, got {sorted(dims)}")
        p = np.array([self.priors[c] for c in self.classes], dtype=float)
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise InputError("class priors must be positive and sum to 1")
        object.__setattr__(self, "classes", dict(self.classes))
        object.__setattr__(self, "priors", {c: float(self.priors[c]) for c in self.classes})

    @property
    def dim(self):
        return next(iter(self.classes.values())).dim

    @property
    def labels(self):
        return list(self.classes)

    def conditional(self, c):
        try:
            return self.classes[c]
        except KeyError:
            raise InputError(f"unknown class {c!r}; known: {self.labels}") from None

    @cached_property
    def unconditional(self):
        w, m, v = [], [], []
        for c, mix in self.classes.items():
            w.append(self.priors[c] * mix.weights)
            m.append(mix.means)
            v.append(mix.variances)
        w = np.concatenate(w)
        # renormalize away round-off so the union passes the weight-sum check
        return GaussianMixture(w / w.sum(), np.concatenate(m), np.concatenate(v))

    def to_dict(self):
        return {
            "dim": self.dim,
            "classes": {
                str(c): {"prior": self.priors[c], **{k: v for k, v in mix.to_dict().items() if k != "dim"}}
                for c, mix in self.classes.items()
            },
        }

    @classmethod
    def from_dict(cls, d):
        if "classes" not in d or not isinstance(d["classes"], dict):
            raise InputError("family definition needs a 'classes' mapping")
        classes, priors = {}, {}
        for label, body in d["classes"].items():
            if "prior" not in body:
                raise InputError(f"class {label!r} has no prior")
            priors[label] = body["prior"]
            classes[label] = GaussianMixture.from_dict(body)
        fam = cls(classes, priors)
        if "dim" in d and d["dim"] != fam.dim:
            raise InputError(f"declared dim {d['dim']} != class dim {fam.dim}")
        return fam


def load_family(path):
    """Read a family from a JSON file (grammar documented in the README)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"no such family file: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    return ConditionedFamily.from_dict(data)


def _check_sigma(sigma):
    sigma = float(sigma)
    if not np.isfinite(sigma) or sigma < 0:
        raise DomainError(f"noise level must be finite and >= 0, got {sigma}")
    return sigma


def _points(mix, x):
    """Return ``x`` as ``(n, dim)`` plus the leading shape used to restore outputs.

    For dim 1, scalars and flat arrays are read as one value per point and
    outputs keep the input's shape.  Otherwise the last axis is the point axis.
    """
    a = np.asarray(x, dtype=float)
    if mix.dim == 1 and a.ndim <= 1:
        return a.reshape(-1, 1), a.shape, True
    if a.ndim in (1, 2) and a.shape[-1] == mix.dim:
        return a.reshape(-1, mix.dim), a.shape[:-1], False
    raise InputError(f"points of shape {a.shape} do not match mixture dim {mix.dim}")


def _restore_vec(out, lead, flat):
    return out.reshape(lead) if flat else out.reshape(lead + out.shape[-1:])


def _restore_scalar(out, lead, flat):
    r = out.reshape(lead)
    return float(r) if r.ndim == 0 else r


def _component_logpdf(mix, x, sigma):
    """``log w_k + log N(x; m_k, v_k + sigma^2)`` with shape ``(n, K)``."""
    var = mix.variances + sigma**2
    if np.any(var == 0):
        raise DomainError("zero total variance: point-mass components need sigma > 0")
    diff = x[:, None, :] - mix.means[None, :, :]
    quad = np.sum(diff**2 / var[None], axis=-1)
    logdet = np.sum(np.log(var), axis=-1)
    return np.log(mix.weights)[None, :] - 0.5 * (quad + logdet[None, :] + mix.dim * _LOG_2PI)


def log_smoothed_density(mix, x, sigma):
    sigma = _check_sigma(sigma)
    pts, lead, flat = _points(mix, x)
    return _restore_scalar(logsumexp(_component_logpdf(mix, pts, sigma), axis=1), lead, flat)


def smoothed_density(mix, x, sigma):
    """Density of ``p(x; sigma) = sum_k w_k N(x; m_k, (v_k + sigma^2) I)``."""
    return np.exp(log_smoothed_density(mix, x, sigma))


def responsibilities(mix, x, sigma):
    """Posterior component probabilities under the smoothed mixture, shape ``(n, K)``."""
    sigma = _check_sigma(sigma)
    pts, _, _ = _points(mix, x)
    lp = _component_logpdf(mix, pts, sigma)
    return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))


def ideal_denoise(mix, x, sigma):
    """Exact posterior mean ``E[y | y + n = x]`` for ``y ~ mix``, ``n ~ N(0, sigma^2 I)``.

    At ``sigma = 0`` this is the identity (returned as a copy of ``x``).
    """
    sigma = _check_sigma(sigma)
    pts, lead, flat = _points(mix, x)
    if sigma == 0:
        return _restore_vec(pts.copy(), lead, flat)
    s2 = sigma**2
    lp = _component_logpdf(mix, pts, sigma)
    r = np.exp(lp - logsumexp(lp, axis=1, keepdims=True))
    var = mix.variances[None]
    post = (var * pts[:, None, :] + s2 * mix.means[None]) / (var + s2)
    return _restore_vec(np.einsum("nk,nkd->nd", r, post), lead, flat)


def score(mix, x, sigma):
    """``grad_x log p(x; sigma)`` via ``(D(x; sigma) - x) / sigma^2``."""
    sigma = _check_sigma(sigma)
    if sigma == 0:
        raise DomainError("the score identity needs sigma > 0")
    xa = np.asarray(x, dtype=float)
    return (ideal_denoise(mix, xa, sigma) - xa) / sigma**2


def guided_denoise(family, c, x, sigma, w):
    """``w * D(x | c; sigma) + (1 - w) * D(x; sigma)``."""
    cond = family.conditional(c)
    return w * ideal_denoise(cond, x, sigma) + (1 - w) * ideal_denoise(family.unconditional, x, sigma)


def sample_data(mix, n, seed, start=0):
    """``n`` exact draws from the mixture.

    Draw ``i`` depends only on ``(seed, start + i)``, so any partition of an
    index range reproduces the same rows.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    u, z = _rng.uniforms_and_normals(seed, _rng.DATA_STREAM, start, start + n, mix.dim)
    cdf = np.cumsum(mix.weights)
    comp = np.minimum(np.searchsorted(cdf, u, side="right"), mix.n_components - 1)
    x = mix.means[comp] + np.sqrt(mix.variances[comp]) * z
    return SampleBatch(x, seed=seed, provenance={"source": "exact", "start": start})
