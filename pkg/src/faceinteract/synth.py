"""Synthetic face layouts with class-dependent geometry.

Each archetype draws faces whose orientation pattern and spatial layout
exercise a different descriptor. Orientation sign convention: positive
means the face is turned towards +x (image right).

Coordinates and sizes are whole pixels. Every image draws from its own
generator seeded by ``(seed, class index, image index)``, so records do not
depend on generation order.
"""

from dataclasses import dataclass, replace

import numpy as np

from .data import DatasetManifest, FaceBox, ImageRecord, snap_orientation

LAYOUTS = (
    "converging-orientations",
    "circular",
    "facing-pair-close",
    "facing-pair-apart",
    "scattered-random",
)


@dataclass(frozen=True)
class ArchetypeSpec:
    name: str
    layout: str
    face_count: tuple = (2, 2)
    jitter: float = 0.0
    flip_prob: float = 0.0
    dropout: float = 0.0
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        lo, hi = self.face_count
        if not 1 <= lo <= hi:
            raise ValueError(f"face_count range {self.face_count} is empty")
        if self.jitter < 0 or not 0 <= self.flip_prob <= 1 or not 0 <= self.dropout < 1:
            raise ValueError("noise parameters out of range")


def default_specs(jitter=0.0, flip_prob=0.0, dropout=0.0):
    """Five archetypes named after interaction classes they loosely imitate."""
    base = [
        ArchetypeSpec("speech", "converging-orientations", (4, 8)),
        ArchetypeSpec("dining", "circular", (5, 9)),
        ArchetypeSpec("kissing", "facing-pair-close", (2, 2)),
        ArchetypeSpec("talking", "facing-pair-apart", (2, 2)),
        ArchetypeSpec("boxing-punching", "scattered-random", (2, 5)),
    ]
    return [replace(s, jitter=jitter, flip_prob=flip_prob, dropout=dropout) for s in base]


def _facing(sign, magnitude):
    return snap_orientation(sign * magnitude)


def _converging(rng, n, W, H, s):
    # speaker on one side, audience on the other, everyone looking across
    side = 1 if rng.random() < 0.5 else -1
    sx = W * rng.uniform(0.1, 0.25)
    if side < 0:
        sx = W - sx
    sy = H * rng.uniform(0.25, 0.45)
    pts = [(sx, sy, _facing(side, rng.choice([15, 30, 45])))]
    for _ in range(n - 1):
        ax = W * rng.uniform(0.45, 0.9)
        if side < 0:
            ax = W - ax
        ay = H * rng.uniform(0.45, 0.85)
        toward = 1.0 if sx > ax else -1.0
        pts.append((ax, ay, _facing(toward, rng.choice([45, 60, 75, 90]))))
    return pts


def _circular(rng, n, W, H, s):
    rx, ry = W * rng.uniform(0.22, 0.32), H * rng.uniform(0.18, 0.28)
    cx, cy = W / 2 + rng.uniform(-0.05, 0.05) * W, H / 2 + rng.uniform(-0.05, 0.05) * H
    start = rng.uniform(0, 2 * np.pi)
    pts = []
    for k in range(n):
        phi = start + 2 * np.pi * k / n + rng.uniform(-0.15, 0.15)
        # looking towards the table centre
        pts.append((cx + rx * np.cos(phi), cy + ry * np.sin(phi), _facing(-np.cos(phi), 90.0)))
    return pts


def _pair(rng, W, H, s, gap_range, magnitudes):
    gap = s * rng.uniform(*gap_range)
    mx, my = W * rng.uniform(0.35, 0.65), H * rng.uniform(0.3, 0.6)
    dy = s * rng.uniform(-0.3, 0.3)
    return [
        (mx - gap / 2, my - dy / 2, _facing(1, rng.choice(magnitudes))),
        (mx + gap / 2, my + dy / 2, _facing(-1, rng.choice(magnitudes))),
    ]


def _scattered(rng, n, W, H, s):
    return [(rng.uniform(0.05, 0.95) * W, rng.uniform(0.05, 0.95) * H, int(rng.choice(np.arange(-90, 91, 15))))
            for _ in range(n)]


def _layout(spec, rng, n, s):
    W, H = spec.width, spec.height
    if spec.layout == "converging-orientations":
        return _converging(rng, n, W, H, s)
    if spec.layout == "circular":
        return _circular(rng, n, W, H, s)
    if spec.layout == "facing-pair-close":
        return _pair(rng, W, H, s, (0.7, 1.5), [60, 75, 90])
    if spec.layout == "facing-pair-apart":
        return _pair(rng, W, H, s, (3.2, 5.0), [15, 30, 45])
    return _scattered(rng, n, W, H, s)


def generate_record(spec: ArchetypeSpec, rng, image_id: str) -> ImageRecord:
    lo, hi = spec.face_count
    n = int(rng.integers(lo, hi + 1))
    s = float(rng.uniform(30, 70))
    layout = _layout(spec, rng, n, s)
    # noise draws happen unconditionally so that noise levels share one geometry per seed
    shifts = rng.normal(0.0, 1.0, size=(len(layout), 2)) * spec.jitter
    flips = rng.random(len(layout)) < spec.flip_prob
    drops = rng.random(len(layout)) < spec.dropout
    sizes = rng.uniform(0.85, 1.15, len(layout)), rng.uniform(1.0, 1.25, len(layout))
    faces = []
    for k, (x, y, theta) in enumerate(layout):
        if flips[k]:
            theta = -theta + 0
        x = float(min(max(round(x + shifts[k, 0]), 0), spec.width))
        y = float(min(max(round(y + shifts[k, 1]), 0), spec.height))
        w = float(max(1, round(s * sizes[0][k])))
        h = float(max(1, round(w * sizes[1][k])))
        faces.append(FaceBox(x, y, w, h, int(theta), "ground-truth"))
    if drops.any():
        faces = [f for f, d in zip(faces, drops) if not d] or [faces[0]]
    return ImageRecord(image_id, float(spec.width), float(spec.height), spec.name, tuple(faces))


def generate(specs, per_class: int, seed: int = 0) -> DatasetManifest:
    if per_class < 5:
        raise ValueError("per_class must be at least 5 so every class can be split into five folds")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError("archetype names must be unique")
    records = []
    for c, spec in enumerate(specs):
        for i in range(per_class):
            rng = np.random.default_rng([seed, c, i])
            records.append(generate_record(spec, rng, f"{spec.name}-{i:05d}"))
    return DatasetManifest(tuple(records), tuple(names))
