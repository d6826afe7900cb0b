"""Data model and the line-delimited JSON file formats.

Annotation file: an optional header line ``{"format": "faceinteract-annotations",
"version": 1, "class_names": [...], "channels": {...}}`` followed by one image
record per line::

    {"id": ..., "width": ..., "height": ..., "label": ...,
     "faces": [{"cx": ..., "cy": ..., "w": ..., "h": ..., "orientation": 15 | null,
                "source": "oriented-detector", "mirrored": true?}]}

Channel file: one ``{"image_id": ..., "values": [...]}`` object per line,
optionally preceded by a ``{"format": "faceinteract-channel", ...}`` header.
Floats go through ``json``'s ``repr`` formatting, which round-trips exactly.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

log = logging.getLogger(__name__)

ANNOTATION_FORMAT = "faceinteract-annotations"
ANNOTATION_VERSION = 1
CHANNEL_FORMAT = "faceinteract-channel"
CHANNEL_VERSION = 1

SOURCES = ("oriented-detector", "vj-frontal", "vj-profile", "merged", "ground-truth")
ORIENTATIONS = tuple(range(-90, 91, 15))

# the ten interaction classes of the original collection
DEFAULT_CLASSES = (
    "boxing-punching",
    "dining",
    "handshaking",
    "highfive",
    "hugging",
    "kicking",
    "kissing",
    "partying",
    "speech",
    "talking",
)


class FormatError(ValueError):
    """Malformed file content."""

    def __init__(self, message, record_id=None, line=None):
        super().__init__(message)
        self.message = message
        self.record_id = record_id
        self.line = line

    def __str__(self):
        where = []
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.record_id is not None:
            where.append(f"record {self.record_id!r}")
        return f"{self.message} ({', '.join(where)})" if where else self.message


class ValidationError(FormatError):
    """Content parses but violates a data-model invariant."""


def snap_orientation(theta: float) -> int:
    """Clamp to [-90, 90] and round to the nearest multiple of 15 (halves away from zero)."""
    theta = min(90.0, max(-90.0, float(theta)))
    q = abs(theta) / 15.0
    return int(math.copysign(math.floor(q + 0.5) * 15, theta)) + 0


@dataclass(frozen=True)
class FaceBox:
    cx: float
    cy: float
    w: float
    h: float
    orientation: Optional[int] = None
    source: str = "ground-truth"
    mirrored: bool = False

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"face size must be positive, got w={self.w} h={self.h}")
        if self.orientation is not None and self.orientation not in ORIENTATIONS:
            raise ValidationError(f"orientation {self.orientation} is not a multiple of 15 in [-90, 90]")
        if self.source not in SOURCES:
            raise ValidationError(f"unknown face source {self.source!r}")

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def corners(self):
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)


@dataclass(frozen=True)
class ImageRecord:
    id: str
    width: float
    height: float
    label: str
    faces: tuple = ()

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValidationError("image dimensions must be positive", record_id=self.id)
        object.__setattr__(self, "faces", tuple(self.faces))

    @property
    def n_faces(self) -> int:
        return len(self.faces)


@dataclass(frozen=True)
class FeatureVector:
    image_id: str
    channel: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValidationError("feature vector must be one-dimensional", record_id=self.image_id)
        if not np.all(np.isfinite(v)):
            raise ValidationError("feature vector has non-finite values", record_id=self.image_id)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return (
            self.image_id == other.image_id
            and self.channel == other.channel
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple
    class_names: tuple = DEFAULT_CLASSES
    channels: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "channels", dict(self.channels))
        if len(set(self.class_names)) != len(self.class_names):
            raise ValidationError("duplicate class names")
        known = set(self.class_names)
        seen = set()
        for r in self.records:
            if r.id in seen:
                raise ValidationError("duplicate image id", record_id=r.id)
            seen.add(r.id)
            if r.label not in known:
                raise ValidationError(f"unknown label {r.label!r}", record_id=r.id)

    def __len__(self):
        return len(self.records)

    def ids(self):
        return [r.id for r in self.records]

    def labels(self) -> np.ndarray:
        """Integer class index per record, in record order."""
        index = {c: k for k, c in enumerate(self.class_names)}
        return np.array([index[r.label] for r in self.records], dtype=np.int64)

    def by_id(self):
        return {r.id: r for r in self.records}

    def with_channel(self, name, dim):
        channels = dict(self.channels)
        channels[name] = int(dim)
        return replace(self, channels=channels)


# ---------------------------------------------------------------------------
# annotation files


def _face_from_obj(obj, record_id, width, height):
    try:
        cx, cy = float(obj["cx"]), float(obj["cy"])
        w, h = float(obj["w"]), float(obj["h"])
        theta = obj.get("orientation")
        source = obj.get("source", "ground-truth")
        mirrored = bool(obj.get("mirrored", False))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad face entry: {exc}", record_id=record_id) from exc
    if not all(math.isfinite(v) for v in (cx, cy, w, h)):
        raise ValidationError("non-finite face geometry", record_id=record_id)
    if not (w > 0 and h > 0):
        raise ValidationError(f"face size must be positive, got w={w} h={h}", record_id=record_id)
    if source not in SOURCES:
        raise ValidationError(f"unknown face source {source!r}", record_id=record_id)
    ccx, ccy = min(max(cx, 0.0), width), min(max(cy, 0.0), height)
    if (ccx, ccy) != (cx, cy):
        log.warning("record %s: face center (%g, %g) clamped into the image", record_id, cx, cy)
    if theta is not None:
        try:
            theta = snap_orientation(theta)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad orientation: {exc}", record_id=record_id) from exc
    return FaceBox(ccx, ccy, w, h, theta, source, mirrored)


def record_from_obj(obj, line=None) -> ImageRecord:
    if not isinstance(obj, dict):
        raise FormatError("record is not an object", line=line)
    rid = obj.get("id")
    if not isinstance(rid, str) or not rid:
        raise FormatError("record id missing or not a string", line=line)
    try:
        width, height = float(obj["width"]), float(obj["height"])
        label = obj["label"]
        faces = obj.get("faces", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad record: {exc}", record_id=rid, line=line) from exc
    if not isinstance(label, str):
        raise FormatError("label must be a string", record_id=rid, line=line)
    if not (width > 0 and height > 0):
        raise ValidationError("image dimensions must be positive", record_id=rid, line=line)
    if not isinstance(faces, list):
        raise FormatError("faces must be a list", record_id=rid, line=line)
    return ImageRecord(rid, width, height, label, tuple(_face_from_obj(f, rid, width, height) for f in faces))


def record_to_obj(record: ImageRecord) -> dict:
    faces = []
    for f in record.faces:
        d = {"cx": f.cx, "cy": f.cy, "w": f.w, "h": f.h, "orientation": f.orientation, "source": f.source}
        if f.mirrored:
            d["mirrored"] = True
        faces.append(d)
    return {"id": record.id, "width": record.width, "height": record.height, "label": record.label, "faces": faces}


def _json_lines(path):
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                yield lineno, json.loads(raw)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line=lineno) from exc


def load_annotations(path, class_names=None, strict_labels=True) -> DatasetManifest:
    """Read an annotation file into a validated manifest.

    Without a header line, ``class_names`` (default: the ten interaction
    classes) is used. With ``strict_labels=False`` unseen labels are appended
    to the class list instead of raising, which is how detector dumps with
    meaningless labels are read.
    """
    header = None
    records = []
    for lineno, obj in _json_lines(path):
        if isinstance(obj, dict) and "format" in obj and not records and header is None:
            if obj["format"] != ANNOTATION_FORMAT:
                raise FormatError(f"unexpected format {obj['format']!r}", line=lineno)
            if obj.get("version") != ANNOTATION_VERSION:
                raise FormatError(f"unsupported annotation version {obj.get('version')!r}", line=lineno)
            header = obj
            continue
        try:
            records.append(record_from_obj(obj, line=lineno))
        except FormatError as exc:
            if exc.line is None:
                exc.line = lineno
            raise
    if header is not None:
        classes = list(header.get("class_names", DEFAULT_CLASSES))
        channels = header.get("channels", {})
    else:
        classes = list(class_names if class_names is not None else DEFAULT_CLASSES)
        channels = {}
    if not strict_labels:
        for r in records:
            if r.label not in classes:
                classes.append(r.label)
    return DatasetManifest(tuple(records), tuple(classes), channels)


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def save_annotations(manifest: DatasetManifest, path) -> None:
    header = {
        "format": ANNOTATION_FORMAT,
        "version": ANNOTATION_VERSION,
        "class_names": list(manifest.class_names),
        "channels": dict(manifest.channels),
    }
    lines = [_dumps(header)] + [_dumps(record_to_obj(r)) for r in manifest.records]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# channel files


def load_channel(path, channel: str, manifest: Optional[DatasetManifest] = None):
    """Read a channel file. With ``manifest``, every image id must resolve."""
    known = set(manifest.ids()) if manifest is not None else None
    vectors = []
    dim = None
    for lineno, obj in _json_lines(path):
        if lineno == 1 and isinstance(obj, dict) and obj.get("format") == CHANNEL_FORMAT:
            if obj.get("version") != CHANNEL_VERSION:
                raise FormatError(f"unsupported channel version {obj.get('version')!r}", line=lineno)
            continue
        if not isinstance(obj, dict) or "image_id" not in obj or "values" not in obj:
            raise FormatError("channel row needs image_id and values", line=lineno)
        rid = obj["image_id"]
        values = obj["values"]
        if not isinstance(values, list) or not values:
            raise FormatError("values must be a nonempty list", record_id=rid, line=lineno)
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise ValidationError(
                f"dimension mismatch in channel {channel!r}: expected {dim}, got {len(values)}",
                record_id=rid,
                line=lineno,
            )
        if known is not None and rid not in known:
            raise ValidationError(f"unknown image id in channel {channel!r}", record_id=rid, line=lineno)
        try:
            vectors.append(FeatureVector(rid, channel, np.array(values, dtype=np.float64)))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, FormatError):
                exc.line = lineno
                raise
            raise FormatError(f"non-numeric values: {exc}", record_id=rid, line=lineno) from exc
    return vectors


def save_channel(vectors: Iterable[FeatureVector], path, config: Optional[dict] = None) -> None:
    """Write rows; with ``config``, a header line echoing how they were produced goes first."""
    vectors = list(vectors)
    lines = []
    if config is not None:
        header = {"format": CHANNEL_FORMAT, "version": CHANNEL_VERSION}
        if vectors:
            header["channel"] = vectors[0].channel
            header["dim"] = int(vectors[0].values.size)
        header["config"] = config
        lines.append(_dumps(header))
    dim = None
    for v in vectors:
        if dim is None:
            dim = v.values.size
        elif v.values.size != dim:
            raise ValidationError("dimension mismatch", record_id=v.image_id)
        lines.append(_dumps({"image_id": v.image_id, "values": [float(x) for x in v.values]}))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def channel_matrix(vectors, ids):
    """Stack vectors into rows ordered like ``ids``; raises listing missing ids."""
    table = {v.image_id: v.values for v in vectors}
    missing = [i for i in ids if i not in table]
    if missing:
        shown = ", ".join(missing[:10]) + (" ..." if len(missing) > 10 else "")
        raise ValidationError(f"{len(missing)} image(s) lack vectors: {shown}")
    return np.vstack([table[i] for i in ids]) if ids else np.empty((0, 0))
