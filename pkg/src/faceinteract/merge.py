"""Combine oriented-detector and Viola-Jones frontal/profile detections.

Rules, applied per image:

1. an oriented detection overlapping any VJ box keeps its own output and the
   VJ box is dropped;
2. a lone VJ frontal box gets orientation 0, a lone profile box +90
   (-90 when flagged ``mirrored``);
3. an overlapping frontal/profile pair collapses to one box whose
   orientation is ``(1 - IoU) * 90`` snapped to 15 degrees.

"Overlapping" means IoU >= ``same_region_iou``. A final greedy pass keeps
the output free of overlapping pairs.
"""

from dataclasses import dataclass, replace

from .data import FaceBox, snap_orientation

QUANTIZATION_STEP = 15


@dataclass(frozen=True)
class MergeConfig:
    same_region_iou: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.same_region_iou <= 1.0:
            raise ValueError(f"same_region_iou must lie in (0, 1], got {self.same_region_iou}")


def iou(a: FaceBox, b: FaceBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners
    bx0, by0, bx1, by1 = b.corners
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


_PRIORITY = {"oriented-detector": 0, "merged": 1, "vj-frontal": 2, "vj-profile": 3}


def _key(box):
    # canonical order: bigger first, then position; the rest only breaks exact duplicates
    return (
        _PRIORITY.get(box.source, 0),
        -box.area,
        box.cx,
        box.cy,
        box.w,
        box.h,
        -999 if box.orientation is None else box.orientation,
        box.mirrored,
    )


def _profile_sign(box):
    return -1 if box.mirrored else 1


def merge_detections(oriented, vj, cfg: MergeConfig = MergeConfig()):
    thr = cfg.same_region_iou
    oriented = sorted(oriented, key=_key)
    frontal = sorted((b for b in vj if b.source == "vj-frontal"), key=_key)
    profile = sorted((b for b in vj if b.source == "vj-profile"), key=_key)
    stray = [b for b in vj if b.source not in ("vj-frontal", "vj-profile")]
    if stray:
        raise ValueError(f"vj detections must be vj-frontal or vj-profile, got {stray[0].source!r}")

    # rule 1
    frontal = [b for b in frontal if all(iou(b, o) < thr for o in oriented)]
    profile = [b for b in profile if all(iou(b, o) < thr for o in oriented)]

    # rule 3: greedy pairing by descending IoU; index order breaks ties
    pairs = []
    for fi, f in enumerate(frontal):
        for pi, p in enumerate(profile):
            r = iou(f, p)
            if r >= thr:
                pairs.append((-r, fi, pi))
    pairs.sort()
    used_f, used_p = set(), set()
    candidates = list(oriented)
    for neg_r, fi, pi in pairs:
        if fi in used_f or pi in used_p:
            continue
        used_f.add(fi)
        used_p.add(pi)
        theta = snap_orientation((1.0 + neg_r) * 90.0) * _profile_sign(profile[pi])
        candidates.append(replace(frontal[fi], orientation=theta + 0, source="merged", mirrored=False))

    # rule 2
    for fi, f in enumerate(frontal):
        if fi not in used_f:
            candidates.append(replace(f, orientation=0))
    for pi, p in enumerate(profile):
        if pi not in used_p:
            candidates.append(replace(p, orientation=90 * _profile_sign(p)))

    kept = []
    for box in sorted(candidates, key=_key):
        if box.orientation is None:
            raise ValueError("oriented detections must carry an orientation")
        if all(iou(box, k) < thr for k in kept):
            kept.append(box)
    return kept
