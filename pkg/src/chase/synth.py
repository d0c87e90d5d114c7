"""Seeded synthetic multi-entity action generator and dataset file I/O.

The generator builds a recognition task whose labels live purely in
inter-entity geometry: the class is the quadrant of the displacement between
entity 1's and entity 0's centroids. Each entity also receives a per-sample
absolute offset whose distribution center changes between the train and test
splits, so pipelines that depend on raw world coordinates degrade at test
time while relative geometry stays informative. Entities carry distinct body
templates (different ring radii) so they remain identifiable after any
origin shift.

Datasets are stored as `.chsk` files: a fixed 32-byte header (magic "CHSK",
format version u16, dims C,T,J,E,N as u32, all little-endian, zero padding),
raw little-endian float32 coordinates in (N,C,T,J,E) C-order, and a u32
label array, plus a `<name>.chsk.json` sidecar manifest. Coordinates are
quantized to float32 exactly once: the generator emits float32-representable
values, so load(save(x)) == x holds exactly.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .skeleton import SkeletonSequence

__all__ = ["SynthConfig", "synth_generate", "save_dataset", "load_dataset", "CHSK_MAGIC"]

CHSK_MAGIC = b"CHSK"
CHSK_VERSION = 1
_HEADER = struct.Struct("<4sH5I6x")  # magic, version, C,T,J,E,N, padding -> 32 bytes

QUADRANTS = ((1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0))
QUADRANT_NAMES = ("quadrant_pp", "quadrant_np", "quadrant_nn", "quadrant_pn")


@dataclass
class SynthConfig:
    """Generator knobs. Offsets are per-entity with train/test variants."""

    num_classes: int = 4
    samples_per_class: int = 500
    test_samples_per_class: int = 125
    channels: int = 2
    frames: int = 16
    joints: int = 5
    entities: int = 2
    entity_offset_means: dict = field(default_factory=dict)
    entity_offset_spread: float = 0.15
    relative_geometry_scale: float = 2.0
    motion_noise: float = 0.2
    body_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.num_classes <= 4:
            raise ConfigError(f"num_classes must be in [2, 4], got {self.num_classes}")
        if self.channels not in (2, 3):
            raise ConfigError(f"channels must be 2 or 3, got {self.channels}")
        if self.entities < 2:
            raise ConfigError(f"entities must be >= 2, got {self.entities}")
        for name in ("samples_per_class", "test_samples_per_class", "frames", "joints"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("entity_offset_spread", "relative_geometry_scale", "motion_noise", "body_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if not self.entity_offset_means:
            zero = [0.0] * self.channels
            shifted = [2.5, -2.0] + [0.0] * (self.channels - 2)
            self.entity_offset_means = {
                "train": [list(zero) for _ in range(self.entities)],
                "test": [list(shifted) for _ in range(self.entities)],
            }
        for split in ("train", "test"):
            means = self.entity_offset_means.get(split)
            if means is None or len(means) != self.entities:
                raise ConfigError(f"entity_offset_means[{split!r}] must list {self.entities} centers")
            for e, center in enumerate(means):
                if len(center) != self.channels:
                    raise ConfigError(
                        f"entity_offset_means[{split!r}][{e}] must have {self.channels} components")
        if self.entity_offset_means["train"] == self.entity_offset_means["test"]:
            raise ConfigError("train and test offset centers must differ")

    def to_dict(self):
        return dataclasses.asdict(self)


def _body_template(cfg, entity):
    """Fixed per-entity joint layout: a ring whose radius identifies the entity."""
    radius = cfg.body_scale * (0.7 + 0.3 * entity)
    theta = 2.0 * np.pi * np.arange(cfg.joints) / cfg.joints
    cols = [radius * np.cos(theta), radius * np.sin(theta)]
    if cfg.channels == 3:
        cols.append(0.4 * radius * np.sin(2.0 * theta))
    return np.stack(cols, axis=1)  # (J, C)


def _generate_sample(cfg, split_id, centers, label, index):
    rng = np.random.default_rng([cfg.seed, split_id, label, index])
    e_n, c_n = cfg.entities, cfg.channels
    offsets = centers + cfg.entity_offset_spread * rng.standard_normal((e_n, c_n))
    u = rng.uniform(0.6, 1.4, size=2)
    noise = cfg.motion_noise * rng.standard_normal((c_n, cfg.frames, cfg.joints, e_n))

    delta = np.zeros(c_n)
    delta[:2] = cfg.relative_geometry_scale * np.asarray(QUADRANTS[label]) * u

    coords = np.empty((c_n, cfg.frames, cfg.joints, e_n))
    for e in range(e_n):
        base = offsets[e] + (delta if e == 1 else 0.0)
        body = _body_template(cfg, e)  # (J, C)
        coords[:, :, :, e] = base[:, None, None] + body.T[:, None, :]
    coords += noise
    coords = coords.astype(np.float32).astype(np.float64)  # storage-precision quantization
    return SkeletonSequence(coords, int(label))


def synth_generate(cfg):
    """Produce (train, test) lists of sequences, deterministic per (seed, index)."""
    splits = []
    for split_id, (split, per_class) in enumerate(
        (("train", cfg.samples_per_class), ("test", cfg.test_samples_per_class))
    ):
        centers = np.asarray(cfg.entity_offset_means[split], dtype=np.float64)
        seqs = [
            _generate_sample(cfg, split_id, centers, label, i)
            for label in range(cfg.num_classes)
            for i in range(per_class)
        ]
        splits.append(seqs)
    return splits[0], splits[1]


def class_names(num_classes):
    return list(QUADRANT_NAMES[:num_classes])


def _sidecar_path(path):
    return Path(str(path) + ".json")


def save_dataset(path, seqs, classes=None, generator=None, seed=0):
    """Write sequences to `path` (.chsk) plus the JSON sidecar manifest.

    Coordinates are stored as little-endian float32; values not representable
    in float32 are quantized here (and stay fixed on any later round-trip).
    """
    path = Path(path)
    if not seqs:
        raise ConfigError("refusing to save an empty dataset")
    shape = seqs[0].coords.shape
    for i, s in enumerate(seqs):
        if s.coords.shape != shape:
            raise ConfigError(f"sample {i} shape {s.coords.shape} != {shape}")
    c, t, j, e = shape
    n = len(seqs)
    coords = np.stack([s.coords for s in seqs]).astype("<f4")
    labels = np.array([s.label for s in seqs], dtype="<u4")

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHSK_MAGIC, CHSK_VERSION, c, t, j, e, n))
        fh.write(coords.tobytes())
        fh.write(labels.tobytes())

    manifest = {
        "version": CHSK_VERSION,
        "classes": list(classes) if classes is not None else class_names(int(labels.max(initial=0)) + 1),
        "generator": generator.to_dict() if isinstance(generator, SynthConfig) else (generator or {}),
        "seed": seed,
    }
    frames = [s.valid_frames for s in seqs]
    if any(v != t for v in frames):
        manifest["valid_frames"] = frames
    with open(_sidecar_path(path), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_dataset(path):
    """Read a .chsk file back into (sequences, manifest)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"truncated header: file ends at byte {len(raw)}, need {_HEADER.size}")
    magic, version, c, t, j, e, n = _HEADER.unpack_from(raw, 0)
    if magic != CHSK_MAGIC:
        raise FormatError(f"bad magic {magic!r} at byte 0")
    if version != CHSK_VERSION:
        raise FormatError(f"unsupported format version {version} at byte 4")
    coord_bytes = n * c * t * j * e * 4
    expected = _HEADER.size + coord_bytes + n * 4
    if len(raw) != expected:
        raise FormatError(
            f"size mismatch: file ends at byte {len(raw)}, expected {expected}")
    coords = np.frombuffer(raw, dtype="<f4", count=n * c * t * j * e, offset=_HEADER.size)
    coords = coords.astype(np.float64).reshape(n, c, t, j, e)
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=_HEADER.size + coord_bytes)

    sidecar = _sidecar_path(path)
    manifest = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    frames = manifest.get("valid_frames", [t] * n)
    seqs = [
        SkeletonSequence(coords[i], int(labels[i]), valid_frames=int(frames[i]))
        for i in range(n)
    ]
    return seqs, manifest
