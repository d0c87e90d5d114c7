"""Convex-hull-constrained adaptive origin shift and its coefficient network.

The shift subtracts one learned point p* from every coordinate of a sample.
p* = X softmax(W) is a strictly positive convex combination of the sample's
own points, so it always lies in the interior of their convex hull; uniform
coefficients reduce it to the center of mass. Coefficients come from a
lightweight channel-squeeze network and are produced per segment: the
(T, J, E) volume is cut into a (T', J', E') grid of contiguous blocks, each
block receiving its own shift vector (still combined over all U = T*J*E
points).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Value, as_value
from .errors import ConfigError, ShapeError

__all__ = [
    "SegmentSpec",
    "ClbParams",
    "ShiftCoefficients",
    "EntityPair",
    "init_clb_params",
    "clb_forward",
    "chase_forward",
    "ichas_fixed",
    "jacobian_fixed_w",
    "sample_pairs",
    "param_count",
    "flop_estimate",
]


@dataclass(frozen=True)
class SegmentSpec:
    """Segment grid (T', J', E'); each component must divide its axis."""

    t_seg: int = 1
    j_seg: int = 1
    e_seg: int = 1

    def __post_init__(self):
        if min(self.t_seg, self.j_seg, self.e_seg) < 1:
            raise ConfigError(f"segment spec must be positive, got {self.as_tuple()}")

    def as_tuple(self):
        return (self.t_seg, self.j_seg, self.e_seg)

    def count(self):
        return self.t_seg * self.j_seg * self.e_seg

    def validate_for(self, t, j, e):
        if t % self.t_seg or j % self.j_seg or e % self.e_seg:
            raise ConfigError(
                f"segment spec {self.as_tuple()} does not divide dims {(t, j, e)}")

    def blocks_for(self, t, j, e):
        self.validate_for(t, j, e)
        return (t // self.t_seg, j // self.j_seg, e // self.e_seg)


@dataclass(frozen=True)
class EntityPair:
    """Unordered entity pair, stored with i < j."""

    i: int
    j: int

    def __post_init__(self):
        if not 0 <= self.i < self.j:
            raise ValueError(f"pair indices must satisfy 0 <= i < j, got ({self.i}, {self.j})")


@dataclass
class ShiftCoefficients:
    """Raw coefficients W (U, S) and their per-segment softmax alpha_tilde."""

    w: np.ndarray
    alpha_tilde: np.ndarray


class ClbParams:
    """Weights of the coefficient-learning block.

    w1 (C1, C) with bias b (C1,) is a pointwise channel map; after segment
    mean pooling, w2 (C2, C1) and w3 (U, C2) (both bias-free, rectifier in
    between) emit one raw coefficient per point per segment. Requires
    U >= C1 > C2.
    """

    def __init__(self, w1, b, w2, w3, seg=SegmentSpec()):
        self.w1 = w1 if isinstance(w1, Value) else ad.parameter(w1)
        self.b = b if isinstance(b, Value) else ad.parameter(b)
        self.w2 = w2 if isinstance(w2, Value) else ad.parameter(w2)
        self.w3 = w3 if isinstance(w3, Value) else ad.parameter(w3)
        self.seg = seg
        c1, c = self.w1.shape
        c2, c1b = self.w2.shape
        u, c2b = self.w3.shape
        if self.b.shape != (c1,) or c1b != c1 or c2b != c2:
            raise ConfigError(
                f"inconsistent block shapes: w1 {self.w1.shape}, b {self.b.shape}, "
                f"w2 {self.w2.shape}, w3 {self.w3.shape}")
        if not u >= c1 > c2:
            raise ConfigError(f"need U >= C1 > C2, got U={u}, C1={c1}, C2={c2}")
        self.channels = c
        self.c1 = c1
        self.c2 = c2
        self.u = u

    def named_tensors(self):
        return {"clb.w1": self.w1, "clb.b": self.b, "clb.w2": self.w2, "clb.w3": self.w3}

    def trainable(self):
        return [self.w1, self.b, self.w2, self.w3]


def _kaiming_uniform(rng, fan_in, shape):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_clb_params(channels, frames, joints, entities, c1, c2, seg=SegmentSpec(), seed=0):
    """Fresh block weights.

    w3 starts at zero so the initial coefficients are uniform and the shift
    begins at the per-segment center of mass; w1 and w2 start Kaiming-uniform
    so gradients reach every layer from the first step.
    """
    seg.validate_for(frames, joints, entities)
    u = frames * joints * entities
    rng = np.random.default_rng(seed)
    w1 = _kaiming_uniform(rng, channels, (c1, channels))
    b = np.zeros(c1)
    w2 = _kaiming_uniform(rng, c1, (c2, c1))
    w3 = np.zeros((u, c2))
    return ClbParams(w1, b, w2, w3, seg=seg)


def _coefficients(x, params):
    """x: Value (N, C, T, J, E) -> raw coefficients Value (N, U, S)."""
    n, c, t, j, e = x.shape
    if c != params.channels:
        raise ShapeError(f"input has {c} channels, block expects {params.channels}")
    u = t * j * e
    if u != params.u:
        raise ShapeError(f"input has U={u} points, block expects {params.u}")
    seg = params.seg
    seg.validate_for(t, j, e)
    s = seg.count()

    flat = ad.reshape(x, (n, c, u))
    h = ad.matmul(params.w1, flat) + ad.reshape(params.b, (1, params.c1, 1))
    h = ad.reshape(h, (n, params.c1, t, j, e))
    pooled = ad.segment_mean_pool(h, seg.as_tuple())
    pooled = ad.reshape(pooled, (n, params.c1, s))
    z = ad.relu(ad.matmul(params.w2, pooled))
    return ad.matmul(params.w3, z)  # (N, U, S)


def clb_forward(x, params):
    """Coefficients for one sample (C, T, J, E): raw W and softmax, both (U, S)."""
    v = as_value(x)
    if len(v.shape) != 4:
        raise ShapeError(f"clb_forward expects (C, T, J, E), got {v.shape}")
    batched = ad.reshape(v, (1,) + v.shape)
    w = _coefficients(batched, params)
    alpha = ad.softmax(w, axis=1)
    u, s = w.shape[1], w.shape[2]
    return ShiftCoefficients(w.data.reshape(u, s).copy(), alpha.data.reshape(u, s).copy())


def _apply_shift(x, alpha, seg):
    """Subtract per-segment shift vectors. x (N,C,T,J,E), alpha (N,U,S)."""
    n, c, t, j, e = x.shape
    flat = ad.reshape(x, (n, c, t * j * e))
    p_star = ad.matmul(flat, alpha)  # (N, C, S)
    grid = ad.reshape(p_star, (n, c) + seg.as_tuple())
    full = ad.segment_broadcast(grid, seg.blocks_for(t, j, e))
    return x - full


def chase_forward(x, params):
    """Shift a batch (N, C, T, J, E) by its learned per-segment hull points.

    Accepts a Value (differentiable path) or a plain array (returns an array).
    """
    v = as_value(x)
    if len(v.shape) != 4 and len(v.shape) != 5:
        raise ShapeError(f"chase_forward expects (N, C, T, J, E), got {v.shape}")
    squeeze = False
    if len(v.shape) == 4:
        v = ad.reshape(v, (1,) + v.shape)
        squeeze = True
    w = _coefficients(v, params)
    alpha = ad.softmax(w, axis=1)
    out = _apply_shift(v, alpha, params.seg)
    if squeeze:
        out = ad.reshape(out, out.shape[1:])
    if isinstance(x, Value):
        return out
    return out.data


def ichas_fixed(x, w):
    """Fixed-coefficient shift of a flattened sample.

    x (C, U), w (U, 1) -> (x_hat (C, U), p_star (C, 1)) as arrays. Routed
    through the same graph ops as chase_forward with a single segment, so the
    two agree bit-for-bit for identical coefficients.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or w.shape != (x.shape[1], 1):
        raise ShapeError(f"ichas_fixed expects x (C, U) and w (U, 1), got {x.shape} and {w.shape}")
    c, u = x.shape
    xv = as_value(x.reshape(1, c, 1, 1, u))  # single segment over the entity axis
    alpha = ad.softmax(as_value(w.reshape(1, u, 1)), axis=1)
    x_hat = _apply_shift(xv, alpha, SegmentSpec(1, 1, 1))
    p_star = np.matmul(x, alpha.data.reshape(u, 1))
    return x_hat.data.reshape(c, u), p_star


def jacobian_fixed_w(u, w):
    """Analytic Jacobian of the fixed-coefficient shift per coordinate row.

    Returns I_U minus the rank-one matrix whose every row is softmax(w);
    entry (i, j) is d x_hat[c, i] / d x[c, j] for any channel c.
    """
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape[0] != u:
        raise ShapeError(f"w has {w.shape[0]} entries, expected {u}")
    s = ad.softmax(as_value(w), axis=0).data
    return np.eye(u) - np.ones((u, 1)) @ s.reshape(1, u)


def sample_pairs(num_entities, m, seed):
    """Draw m unordered entity pairs uniformly with replacement."""
    if num_entities < 2:
        raise ValueError(f"need at least 2 entities, got {num_entities}")
    if m < 1:
        raise ValueError(f"need at least 1 pair, got {m}")
    pairs = all_pairs(num_entities)
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(pairs), size=m)
    return [pairs[k] for k in picks]


def all_pairs(num_entities):
    """Every unordered pair (i, j), i < j, in lexicographic order."""
    return [
        EntityPair(i, j)
        for i in range(num_entities - 1)
        for j in range(i + 1, num_entities)
    ]


def param_count(channels, frames, joints, entities, c1, c2, seg=SegmentSpec()):
    """Trainable parameter count of the coefficient block, layer by layer:
    c1*channels weights + c1 biases + c2*c1 + U*c2."""
    seg.validate_for(frames, joints, entities)
    u = frames * joints * entities
    if not (u >= c1 >= c2 > 0):
        raise ConfigError(f"need U >= C1 >= C2 > 0, got U={u}, C1={c1}, C2={c2}")
    return c1 * channels + c1 + c2 * c1 + u * c2


def flop_estimate(channels, frames, joints, entities, c1, c2, seg=SegmentSpec()):
    """Forward-pass FLOP estimate under a MAC=2 convention.

    Multiply-accumulates count 2; additions, divisions, exp and comparisons
    count 1. Returns (total, breakdown dict).
    """
    seg.validate_for(frames, joints, entities)
    u = frames * joints * entities
    s = seg.count()
    breakdown = {
        "channel_map": 2 * channels * c1 * u + c1 * u,
        "segment_pool": c1 * u + c1 * s,
        "squeeze": 2 * c1 * c2 * s,
        "rectifier": c2 * s,
        "expand": 2 * c2 * u * s,
        "softmax": 5 * u * s,
        "shift_vector": 2 * channels * u * s,
        "subtract": channels * u,
    }
    return sum(breakdown.values()), breakdown
