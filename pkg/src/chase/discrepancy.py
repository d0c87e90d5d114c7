"""Two-sample discrepancy machinery.

The trainable side is a squared maximum mean discrepancy (biased V-statistic
with a Gaussian kernel) averaged over sampled entity pairs. The evaluation
side estimates each entity's point distribution with a kernel density on a
shared grid and reports Avg KLD, JSD, Bhattacharyya and Hellinger distances
plus the (square-root) MMD, aggregated over seeded sampling repetitions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import pdist

from . import autodiff as ad
from .autodiff import Value, as_value
from .errors import ConfigError, DegenerateInputError, ShapeError
from .shift import all_pairs

__all__ = [
    "mmd_sq",
    "median_bandwidth",
    "mpmmd_loss",
    "entity_point_sets",
    "KdeConfig",
    "GridDistribution",
    "kde_estimate",
    "avg_kld",
    "jsd",
    "bd",
    "hd",
    "DiscrepancyReport",
    "report",
]

PROB_FLOOR = 1e-12


def _seed_list(seed, *extra):
    base = list(seed) if isinstance(seed, (list, tuple)) else [seed]
    return base + list(extra)


def median_bandwidth(a, b):
    """Median pairwise distance over the pooled points; 1.0 when degenerate."""
    pooled = np.vstack([np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)])
    if pooled.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(pooled)))
    return med if med > 0.0 else 1.0


def _as_points(x, name):
    v = as_value(x)
    if len(v.shape) != 2:
        raise ShapeError(f"{name} must be (n, C) points, got {v.shape}")
    if v.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    return v


def _pairwise_sq_dists(a, b):
    aa = ad.vsum(a * a, axis=1, keepdims=True)            # (n, 1)
    bb = ad.transpose(ad.vsum(b * b, axis=1, keepdims=True), (1, 0))  # (1, m)
    ab = ad.matmul(a, ad.transpose(b, (1, 0)))            # (n, m)
    return aa + bb + ad.scale(ab, -2.0)


def mmd_sq(a, b, bandwidth=None):
    """Squared MMD between two point sets, biased V-statistic form:
    mean k(a,a) + mean k(b,b) - 2 mean k(a,b) with k(x,y)=exp(-|x-y|^2/2s^2).

    `bandwidth` fixes the kernel scale s; None selects the median heuristic
    over the pooled points, treated as a constant for gradients. Returns a
    Value when either input is one, else a float.
    """
    av, bv = _as_points(a, "first sample set"), _as_points(b, "second sample set")
    if av.shape[1] != bv.shape[1]:
        raise ShapeError(f"point dimensions disagree: {av.shape} vs {bv.shape}")
    sigma = float(bandwidth) if bandwidth is not None else median_bandwidth(av.data, bv.data)
    if sigma <= 0:
        raise ConfigError(f"bandwidth must be positive, got {sigma}")
    gamma = -0.5 / (sigma * sigma)

    def kmean(x, y):
        return ad.vmean(ad.exp(ad.scale(_pairwise_sq_dists(x, y), gamma)))

    # canonical operand order for the cross term keeps the estimator exactly
    # symmetric (summing the transposed kernel matrix changes rounding)
    first, second = av, bv
    if bv.data.tobytes() < av.data.tobytes():
        first, second = bv, av
    out = kmean(av, av) + kmean(bv, bv) + ad.scale(kmean(first, second), -2.0)
    if isinstance(a, Value) or isinstance(b, Value):
        return out
    return float(out.data)


def entity_point_sets(x, points_per_entity=256, seed=0):
    """Per-entity coordinate point sets (n, C) pooled over batch, frames, joints.

    Larger pools are subsampled without replacement, deterministically per
    (seed, entity); the same entity always yields the same set, so averages
    over pair choices are consistent.
    """
    v = as_value(x)
    if len(v.shape) != 5:
        raise ShapeError(f"expected (N, C, T, J, E), got {v.shape}")
    n, c, t, j, e = v.shape
    moved = ad.reshape(ad.transpose(v, (4, 0, 2, 3, 1)), (e, n * t * j, c))
    total = n * t * j
    sets = []
    for ent in range(e):
        pts = ad.reshape(ad.take(moved, [ent], axis=0), (total, c))
        if points_per_entity and total > points_per_entity:
            rng = np.random.default_rng(_seed_list(seed, ent))
            idx = np.sort(rng.choice(total, size=points_per_entity, replace=False))
            pts = ad.take(pts, idx, axis=0)
        sets.append(pts)
    return sets


def mpmmd_loss(x_hat, pairs, points_per_entity=256, seed=0, bandwidth=None):
    """Average squared MMD over the given entity pairs of a shifted batch.

    Enumerating every pair reproduces the exact all-pairs mean; uniformly
    sampled pairs give its unbiased mini-batch estimate.
    """
    if not pairs:
        raise ValueError("need at least one entity pair")
    v = as_value(x_hat)
    if len(v.shape) != 5:
        raise ShapeError(f"expected (N, C, T, J, E), got {v.shape}")
    e = v.shape[4]
    if e < 2:
        raise ValueError(f"need at least 2 entities, got {e}")
    sets = entity_point_sets(v, points_per_entity=points_per_entity, seed=seed)
    total = None
    for p in pairs:
        val = mmd_sq(sets[p.i], sets[p.j], bandwidth=bandwidth)
        total = val if total is None else total + val
    out = ad.scale(total, 1.0 / len(pairs))
    if isinstance(x_hat, Value):
        return out
    return float(out.data)


@dataclass
class KdeConfig:
    """Gaussian-kernel density estimation on a regular grid."""

    bandwidth_rule: str = "scott"
    fixed_bandwidth: float = 1.0
    grid_points_per_dim: int = 64
    grid_padding: float = 3.0

    def __post_init__(self):
        if self.bandwidth_rule not in ("scott", "silverman", "fixed"):
            raise ConfigError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.grid_points_per_dim < 16:
            raise ConfigError(f"grid_points_per_dim must be >= 16, got {self.grid_points_per_dim}")
        if self.grid_padding < 0 or self.fixed_bandwidth <= 0:
            raise ConfigError("grid_padding must be >= 0 and fixed_bandwidth > 0")


@dataclass
class GridDistribution:
    """Discrete distribution over a regular grid; masses sum to one."""

    axes: tuple
    masses: np.ndarray

    def flat(self):
        return self.masses.ravel()


def _bandwidths(points, cfg):
    n, dims = points.shape
    if cfg.bandwidth_rule == "fixed":
        return np.full(dims, cfg.fixed_bandwidth)
    std = points.std(axis=0)
    if np.any(std == 0.0):
        d = int(np.argwhere(std == 0.0)[0][0])
        raise DegenerateInputError(
            f"dimension {d} has zero spread; use bandwidth_rule='fixed'")
    if cfg.bandwidth_rule == "scott":
        return std * n ** (-1.0 / (dims + 4))
    return std * (4.0 / (n * (dims + 2))) ** (1.0 / (dims + 4))  # silverman


def kde_estimate(points, cfg=None, bounds=None):
    """Gaussian KDE evaluated on a regular grid covering the data.

    points: (n, C) with n >= 2. `bounds` overrides the per-dimension
    (lo, hi) box (used to give two estimates a shared support).
    """
    cfg = cfg or KdeConfig()
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError(f"need an (n >= 2, C) point array, got {points.shape}")
    n, dims = points.shape
    h = _bandwidths(points, cfg)
    if bounds is None:
        lo = points.min(axis=0) - cfg.grid_padding * h
        hi = points.max(axis=0) + cfg.grid_padding * h
    else:
        lo = np.asarray([b[0] for b in bounds], dtype=np.float64)
        hi = np.asarray([b[1] for b in bounds], dtype=np.float64)
    g = cfg.grid_points_per_dim
    axes = tuple(np.linspace(lo[d], hi[d], g) for d in range(dims))

    kernels = [
        np.exp(-0.5 * ((axes[d][:, None] - points[None, :, d]) / h[d]) ** 2)
        for d in range(dims)
    ]
    if dims == 1:
        density = kernels[0].sum(axis=1)
    elif dims == 2:
        density = np.einsum("ai,bi->ab", kernels[0], kernels[1])
    elif dims == 3:
        density = np.einsum("ai,bi,ci->abc", kernels[0], kernels[1], kernels[2])
    else:
        raise ConfigError(f"KDE supports 1-3 dimensions, got {dims}")
    total = density.sum()
    if total <= 0:
        raise DegenerateInputError("all probability mass escaped the grid; widen bounds")
    return GridDistribution(axes, density / total)


def _check_support(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    return p.ravel(), q.ravel()


def avg_kld(p, q):
    """Symmetrized Kullback-Leibler divergence, cells floored at 1e-12 before logs."""
    p, q = _check_support(p, q)
    pc, qc = np.maximum(p, PROB_FLOOR), np.maximum(q, PROB_FLOOR)
    forward = float(np.sum(pc * np.log(pc / qc)))
    backward = float(np.sum(qc * np.log(qc / pc)))
    return 0.5 * (forward + backward)


def jsd(p, q):
    """Jensen-Shannon divergence (natural log, so bounded by ln 2)."""
    p, q = _check_support(p, q)
    m = 0.5 * (p + q)

    def _d(a):
        mask = a > 0
        return float(np.sum(a[mask] * np.log(a[mask] / m[mask])))

    return 0.5 * _d(p) + 0.5 * _d(q)


def bd(p, q):
    """Bhattacharyya distance: -ln sum sqrt(p q)."""
    p, q = _check_support(p, q)
    coeff = float(np.sum(np.sqrt(p * q)))
    return -np.log(max(coeff, PROB_FLOOR))


def hd(p, q):
    """Hellinger distance: ||sqrt(p) - sqrt(q)||_2 / sqrt(2), in [0, 1]."""
    p, q = _check_support(p, q)
    return float(np.linalg.norm(np.sqrt(p) - np.sqrt(q)) / np.sqrt(2.0))


METRIC_NAMES = ("avg_kld", "jsd", "bd", "hd", "mmd")


@dataclass
class DiscrepancyReport:
    """Per-entity-pair discrepancy metrics, mean and std over repetitions."""

    pairs: list = field(default_factory=list)  # [(i, j), ...]
    values: dict = field(default_factory=dict)  # {(i, j): {metric: (mean, std)}}
    repetitions: int = 0

    def mean(self, pair, metric):
        return self.values[pair][metric][0]

    def to_json_dict(self):
        return {
            "repetitions": self.repetitions,
            "pairs": [
                {
                    "pair": f"{i}-{j}",
                    "metrics": {
                        m: {"mean": self.values[(i, j)][m][0], "std": self.values[(i, j)][m][1]}
                        for m in METRIC_NAMES
                    },
                }
                for (i, j) in self.pairs
            ],
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        lines = ["pair,metric,mean,std"]
        for (i, j) in self.pairs:
            for m in METRIC_NAMES:
                mean, std = self.values[(i, j)][m]
                lines.append(f"{i}-{j},{m},{mean!r},{std!r}")
        return "\n".join(lines) + "\n"


def _pair_metrics(pts_i, pts_j, kde_cfg, mmd_bandwidth):
    h_i = _bandwidths(pts_i, kde_cfg)
    h_j = _bandwidths(pts_j, kde_cfg)
    pad = kde_cfg.grid_padding * np.maximum(h_i, h_j)
    lo = np.minimum(pts_i.min(axis=0), pts_j.min(axis=0)) - pad
    hi = np.maximum(pts_i.max(axis=0), pts_j.max(axis=0)) + pad
    bounds = list(zip(lo, hi))
    p = kde_estimate(pts_i, kde_cfg, bounds=bounds).flat()
    q = kde_estimate(pts_j, kde_cfg, bounds=bounds).flat()
    mmd_value = np.sqrt(max(0.0, mmd_sq(pts_i, pts_j, bandwidth=mmd_bandwidth)))
    return {
        "avg_kld": avg_kld(p, q),
        "jsd": jsd(p, q),
        "bd": bd(p, q),
        "hd": hd(p, q),
        "mmd": float(mmd_value),
    }


def report(seqs, normalize_fn, kde_cfg=None, repetitions=30, points_per_entity=256,
           seed=0, mmd_bandwidth=None):
    """Inter-entity discrepancy report for a dataset under a normalizer.

    `normalize_fn` maps the sequence list to a coordinate array (N,C,T,J,E).
    Each repetition draws fresh per-entity point subsets; metrics are
    aggregated as mean +/- sample std over repetitions, per entity pair.
    """
    if not seqs:
        raise ValueError("dataset is empty")
    if repetitions < 1:
        raise ConfigError(f"repetitions must be >= 1, got {repetitions}")
    kde_cfg = kde_cfg or KdeConfig()
    coords = np.asarray(normalize_fn(seqs), dtype=np.float64)
    n, c, t, j, e = coords.shape
    if e < 2:
        raise ValueError(f"need at least 2 entities, got {e}")
    pooled = coords.transpose(4, 0, 2, 3, 1).reshape(e, n * t * j, c)
    pairs = [(p.i, p.j) for p in all_pairs(e)]

    samples = {pair: {m: [] for m in METRIC_NAMES} for pair in pairs}
    for rep in range(repetitions):
        subsets = []
        for ent in range(e):
            pts = pooled[ent]
            if points_per_entity and pts.shape[0] > points_per_entity:
                rng = np.random.default_rng(_seed_list(seed, rep, ent))
                idx = np.sort(rng.choice(pts.shape[0], size=points_per_entity, replace=False))
                pts = pts[idx]
            subsets.append(pts)
        for (i, jdx) in pairs:
            metrics = _pair_metrics(subsets[i], subsets[jdx], kde_cfg, mmd_bandwidth)
            for m in METRIC_NAMES:
                samples[(i, jdx)][m].append(metrics[m])

    values = {}
    for pair in pairs:
        values[pair] = {}
        for m in METRIC_NAMES:
            arr = np.asarray(samples[pair][m])
            std = float(arr.std(ddof=1)) if repetitions > 1 else 0.0
            values[pair][m] = (float(arr.mean()), std)
    return DiscrepancyReport(pairs=pairs, values=values, repetitions=repetitions)
