"""Facial layout descriptors computed from the faces of one image.

Offsets from the face centroid are kept as ``N * L_i - sum(L)`` (the offset
scaled by the face count) so that every bin decision is a comparison between
exactly representable quantities when coordinates are integers. This makes
the descriptors exactly invariant to integer translations of the layout.
"""

from dataclasses import dataclass

import numpy as np

from .data import ImageRecord

N_ORIENT_BINS = 13
N_DIRECTIONS = 3
DESCRIPTORS = ("hfo", "hfd", "df", "chfl", "ghfl", "dir_count")

# left / front / right membership of the 13 orientation bins (-90..90 by 15)
DIRECTION_MATRIX = np.zeros((N_DIRECTIONS, N_ORIENT_BINS), dtype=np.int64)
DIRECTION_MATRIX[0, 0:4] = 1
DIRECTION_MATRIX[1, 4:9] = 1
DIRECTION_MATRIX[2, 9:13] = 1


@dataclass(frozen=True)
class DescriptorConfig:
    K: int = 5
    alpha: int = 60
    grid_rows: int = 1
    grid_cols: int = 3
    normalize: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.alpha <= 0 or 360 % self.alpha:
            raise ValueError("alpha must be a positive divisor of 360")
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ValueError("grid must have at least one cell")

    @property
    def n_pies(self) -> int:
        return 360 // self.alpha

    def sizes(self):
        return {
            "hfo": N_ORIENT_BINS,
            "hfd": N_DIRECTIONS,
            "df": self.K,
            "chfl": self.n_pies,
            "ghfl": self.grid_rows * self.grid_cols,
            "dir_count": 1,
        }

    @property
    def length(self) -> int:
        return sum(self.sizes().values())


class EmptyLayoutError(ValueError):
    pass


def _positions(record):
    if not record.faces:
        return np.empty(0), np.empty(0)
    xs = np.array([f.cx for f in record.faces], dtype=np.float64)
    ys = np.array([f.cy for f in record.faces], dtype=np.float64)
    return xs, ys


def _scaled_offsets(record):
    """(N * x_i - sum x, N * y_i - sum y); exact for integer coordinates."""
    xs, ys = _positions(record)
    n = xs.size
    return n * xs - xs.sum(), n * ys - ys.sum()


def face_center(record: ImageRecord):
    if not record.faces:
        raise EmptyLayoutError(f"record {record.id!r} has no faces; centroid undefined")
    xs, ys = _positions(record)
    return float(xs.sum() / xs.size), float(ys.sum() / ys.size)


def _normalized(h, cfg):
    h = h.astype(np.float64)
    if cfg is not None and cfg.normalize:
        total = h.sum()
        if total > 0:
            h = h / total
    return h


def _orientation_counts(record):
    bins = np.zeros(N_ORIENT_BINS, dtype=np.int64)
    for f in record.faces:
        if f.orientation is not None:
            bins[(f.orientation + 90) // 15] += 1
    return bins


def hfo(record: ImageRecord, cfg: DescriptorConfig = None) -> np.ndarray:
    return _normalized(_orientation_counts(record), cfg)


def hfd(record: ImageRecord, cfg: DescriptorConfig = None) -> np.ndarray:
    return _normalized(DIRECTION_MATRIX @ _orientation_counts(record), cfg)


def df(record: ImageRecord, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    """Histogram of centroid distances in units of the largest face edge.

    A face's bin is ``min(K, max(1, ceil(dist / S)))``; it is evaluated as
    ``1 + #{k < K : dist > k S}`` on squared, count-scaled quantities.
    """
    out = np.zeros(cfg.K, dtype=np.int64)
    n = record.n_faces
    if n == 0:
        return _normalized(out, cfg)
    dx, dy = _scaled_offsets(record)
    q = dx * dx + dy * dy
    s = max(max(f.w, f.h) for f in record.faces) * n
    steps = np.arange(1, cfg.K, dtype=np.float64) * s
    d = 1 + (q[:, None] > (steps * steps)[None, :]).sum(axis=1)
    np.add.at(out, d - 1, 1)
    return _normalized(out, cfg)


def face_angles(record: ImageRecord) -> np.ndarray:
    """Full-circle angle in degrees, [0, 360), of each face around the centroid."""
    dx, dy = _scaled_offsets(record)
    ang = np.degrees(np.arctan2(dy, dx))
    return np.where(ang < 0, ang + 360.0, ang)


def chfl(record: ImageRecord, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    pies = cfg.n_pies
    out = np.zeros(pies, dtype=np.int64)
    if record.n_faces:
        # a face on the centroid has arctan2(0, 0) = 0 and lands in pie 0
        idx = np.minimum((face_angles(record) // cfg.alpha).astype(np.int64), pies - 1)
        np.add.at(out, idx, 1)
    return _normalized(out, cfg)


def _grid_index(offsets, n, extent, cells):
    # cell c covers offsets with (2c - cells) n extent <= 2 cells offset < (2c + 2 - cells) n extent
    bounds = (2 * np.arange(1, cells) - cells) * (n * extent)
    return (2 * cells * offsets[:, None] >= bounds[None, :]).sum(axis=1)


def ghfl(record: ImageRecord, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    """Grid histogram: cells of size (height/rows, width/cols), middle cell centred on the centroid."""
    out = np.zeros((cfg.grid_rows, cfg.grid_cols), dtype=np.int64)
    n = record.n_faces
    if n:
        dx, dy = _scaled_offsets(record)
        col = _grid_index(dx, n, record.width, cfg.grid_cols)
        row = _grid_index(dy, n, record.height, cfg.grid_rows)
        np.add.at(out, (row, col), 1)
    return _normalized(out.ravel(), cfg)


def dir_count(record: ImageRecord, cfg: DescriptorConfig = None) -> np.ndarray:
    counts = DIRECTION_MATRIX @ _orientation_counts(record)
    return np.array([np.count_nonzero(counts)], dtype=np.float64)


def describe(record: ImageRecord, cfg: DescriptorConfig = DescriptorConfig()) -> dict:
    """All six descriptor parts, keyed by name."""
    return {
        "hfo": hfo(record, cfg),
        "hfd": hfd(record, cfg),
        "df": df(record, cfg),
        "chfl": chfl(record, cfg),
        "ghfl": ghfl(record, cfg),
        "dir_count": dir_count(record, cfg),
    }


def combined(record: ImageRecord, cfg: DescriptorConfig = DescriptorConfig()) -> np.ndarray:
    parts = describe(record, cfg)
    return np.concatenate([parts[name] for name in DESCRIPTORS])


def extract(records, cfg: DescriptorConfig = DescriptorConfig(), names=("facedesc",)):
    """Per-channel matrices for a sequence of records.

    ``names`` may contain ``"facedesc"`` (the concatenation) and any of the
    individual descriptor names.
    """
    out = {name: [] for name in names}
    for rec in records:
        parts = describe(rec, cfg)
        for name in names:
            if name == "facedesc":
                out[name].append(np.concatenate([parts[p] for p in DESCRIPTORS]))
            else:
                out[name].append(parts[name])
    return {name: np.vstack(rows) if rows else np.empty((0, 0)) for name, rows in out.items()}
