"""Sample-based distribution metrics in data space.

All functions take :class:`~guidance_interval.batch.SampleBatch` objects or
plain ``(n, d)`` arrays.
"""

import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .batch import as_array
from .errors import InputError
from .mixture import responsibilities

REPORT_SCHEMA = "guidance-interval/metrics/1"


def _gaussian_fit(x):
    mu = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    return mu, cov


def _psd_sqrt(m):
    """Square root of a symmetric PSD matrix; returns ``(root, clipped)``."""
    m = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(m)
    clipped = bool(np.any(vals < 0))
    vals = np.clip(vals, 0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T, clipped


def frechet_from_stats(mu_a, cov_a, mu_b, cov_b):
    """``|mu_a - mu_b|^2 + tr(A + B - 2 (A B)^(1/2))``; returns ``(distance, clipped)``.

    ``tr (A B)^(1/2)`` is evaluated as ``tr (A^(1/2) B A^(1/2))^(1/2)``, which is
    symmetric and so admits an eigendecomposition.  ``clipped`` reports whether
    round-off produced negative eigenvalues that were set to zero.
    """
    root_a, c1 = _psd_sqrt(cov_a)
    root_mid, c2 = _psd_sqrt(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    d = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2 * np.trace(root_mid))
    return max(d, 0.0), c1 or c2


def frechet_distance(a, b, return_flag=False):
    """Frechet distance between Gaussian fits of two sample sets."""
    xa, xb = as_array(a), as_array(b)
    if xa.shape[1] != xb.shape[1]:
        raise InputError(f"dimension mismatch: {xa.shape[1]} vs {xb.shape[1]}")
    d = xa.shape[1]
    if min(len(xa), len(xb)) < d + 2:
        raise InputError(f"need at least dim + 2 = {d + 2} samples per batch")
    dist, clipped = frechet_from_stats(*_gaussian_fit(xa), *_gaussian_fit(xb))
    if clipped:
        warnings.warn("covariance square root clipped negative eigenvalues", RuntimeWarning, stacklevel=2)
    return (dist, clipped) if return_flag else dist


def wasserstein1_1d(a, b):
    """Mean absolute difference of sorted samples (equal sizes, 1-D only)."""
    xa, xb = as_array(a), as_array(b)
    if xa.shape[1] != 1 or xb.shape[1] != 1:
        raise InputError("wasserstein1_1d needs 1-D samples")
    if len(xa) != len(xb):
        raise InputError(f"need equal sample counts, got {len(xa)} and {len(xb)}")
    return float(np.mean(np.abs(np.sort(xa[:, 0]) - np.sort(xb[:, 0]))))


def knn_radii(x, k):
    """Distance from each point to its ``k``-th nearest other point."""
    dist, _ = cKDTree(x).query(x, k=k + 1)
    # column 0 is the point itself (or an exact duplicate at distance 0)
    return dist[:, k]


def _coverage(points, ref, ref_radii):
    """Fraction of ``points`` inside at least one closed ball ``|p - r_i| <= radius_i``."""
    hits = cKDTree(points).query_ball_point(ref, ref_radii)
    covered = np.zeros(len(points), dtype=bool)
    for idx in hits:
        covered[idx] = True
    return float(covered.mean())


def knn_precision_recall(real, gen, k=3):
    """k-NN manifold precision and recall.

    Each point's manifold ball has the radius of its ``k``-th nearest
    neighbour within its own set.  Precision is the fraction of generated
    points inside the real manifold; recall is the fraction of real points
    inside the generated one.  Points on a ball boundary count as inside.
    """
    xr, xg = as_array(real), as_array(gen)
    if xr.shape[1] != xg.shape[1]:
        raise InputError(f"dimension mismatch: {xr.shape[1]} vs {xg.shape[1]}")
    if k < 1 or k >= min(len(xr), len(xg)):
        raise InputError(f"need 1 <= k < n, got k={k} with n={len(xr)}, {len(xg)}")
    precision = _coverage(xg, xr, knn_radii(xr, k))
    recall = _coverage(xr, xg, knn_radii(xg, k))
    return precision, recall


def mode_masses(batch, mix):
    """Fraction of samples whose most responsible component (at ``sigma = 0``) is each component."""
    x = as_array(batch)
    if x.shape[1] != mix.dim:
        raise InputError(f"batch dim {x.shape[1]} != mixture dim {mix.dim}")
    owner = np.argmax(responsibilities(mix, x, 0.0), axis=1)
    return np.bincount(owner, minlength=mix.n_components) / len(x)


def kl_histogram(a, b, bins=64, eps=1e-9):
    """``KL(a || b)`` between histograms on a shared range, each bin smoothed by ``eps``."""
    xa, xb = as_array(a), as_array(b)
    d = xa.shape[1]
    if d not in (1, 2) or xb.shape[1] != d:
        raise InputError("kl_histogram supports matching 1-D or 2-D samples")
    if bins < 10:
        raise InputError("need at least 10 bins")
    both = np.concatenate([xa, xb])
    lo, hi = both.min(axis=0), both.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    rng = list(zip(lo, hi))
    ha, _ = np.histogramdd(xa, bins=bins, range=rng)
    hb, _ = np.histogramdd(xb, bins=bins, range=rng)
    p = ha.ravel() / len(xa) + eps
    q = hb.ravel() / len(xb) + eps
    p, q = p / p.sum(), q / q.sum()
    return float(max(np.sum(p * np.log(p / q)), 0.0))


@dataclass
class MetricsReport:
    frechet: float
    precision: float
    recall: float
    kl_hist: float | None
    n_real: int
    n_gen: int
    k: int
    wasserstein1: float | None = None
    mode_masses: list | None = None
    sqrt_clipped: bool = False
    schema: str = field(default=REPORT_SCHEMA)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        if d.get("schema") != REPORT_SCHEMA:
            raise InputError(f"unsupported metrics schema {d.get('schema')!r}")
        return cls(**d)


def evaluate(real, gen, k=3, mix=None, bins=64):
    """Every metric that applies to the dimension of the inputs."""
    xr, xg = as_array(real), as_array(gen)
    if xr.shape[1] != xg.shape[1]:
        raise InputError(f"dimension mismatch: {xr.shape[1]} vs {xg.shape[1]}")
    fd, clipped = frechet_distance(xr, xg, return_flag=True)
    p, r = knn_precision_recall(xr, xg, k)
    d = xr.shape[1]
    w1 = wasserstein1_1d(xr, xg) if d == 1 and len(xr) == len(xg) else None
    kl = kl_histogram(xg, xr, bins=bins) if d <= 2 else None
    masses = mode_masses(xg, mix).tolist() if mix is not None else None
    return MetricsReport(frechet=fd, precision=p, recall=r, kl_hist=kl, n_real=len(xr),
                         n_gen=len(xg), k=k, wasserstein1=w1, mode_masses=masses,
                         sqrt_clipped=clipped)
