"""Cross-validated evaluation: fold plans, pooled AP/mAP, report rendering."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .data import DatasetManifest, FeatureVector, ValidationError, channel_matrix
from .learn import DEFAULT_COSTS, DEFAULT_GAMMAS, fit_stack, grid_search, stratified_assign
from .metrics import UndefinedAPError, average_precision, per_class_ap

log = logging.getLogger(__name__)

REPORT_FORMAT = "faceinteract-report"
REPORT_VERSION = 1
FUSED = "fused"

__all__ = [
    "EvalConfig",
    "EvalReport",
    "FoldPlan",
    "UndefinedAPError",
    "average_precision",
    "format_table",
    "make_folds",
    "mean_ap",
    "run_cv",
]


@dataclass(frozen=True)
class FoldPlan:
    seed: int
    k: int
    assignments: dict  # image id -> fold

    def fold_array(self, ids):
        return np.array([self.assignments[i] for i in ids], dtype=np.int64)


def make_folds(manifest: DatasetManifest, k: int = 5, seed: int = 0) -> FoldPlan:
    """Stratified k-fold assignment; deterministic in ``seed``."""
    labels = manifest.labels()
    counts = np.bincount(labels, minlength=len(manifest.class_names))
    for name, n in zip(manifest.class_names, counts):
        if n < k:
            raise ValidationError(f"class {name!r} has {n} images, fewer than {k} folds")
    folds = stratified_assign(labels, k, seed)
    return FoldPlan(seed, k, {rid: int(f) for rid, f in zip(manifest.ids(), folds)})


def mean_ap(aps) -> float:
    aps = list(aps)
    return float(sum(aps) / len(aps))


@dataclass(frozen=True)
class EvalConfig:
    folds: int = 5
    inner_folds: int = 5
    seed: int = 0
    costs: tuple = DEFAULT_COSTS
    gammas: tuple = DEFAULT_GAMMAS
    params: Optional[dict] = None  # channel -> SvmParams; skips the grid search
    tol: float = 1e-3
    fusion_cost: float = 1.0
    threads: int = 1

    def echo(self, channels):
        d = asdict(self)
        d["costs"] = list(self.costs)
        d["gammas"] = list(self.gammas)
        d["params"] = None if self.params is None else {k: v.to_dict() for k, v in self.params.items()}
        d.pop("threads")  # results do not depend on it
        d["channels"] = list(channels)
        return d


@dataclass
class EvalReport:
    class_names: list
    channels: list
    ap: dict  # row name ("<channel>" or "fused") -> per-class AP list
    per_fold_ap: dict  # row name -> [fold][class]
    ranked: dict  # row name -> class -> [(image_id, score), ...]
    folds: dict
    chosen_params: dict  # channel -> per-fold params dicts
    config: dict = field(default_factory=dict)

    def map(self, row: str) -> float:
        return mean_ap(self.ap[row])

    def to_dict(self):
        rows = {}
        for row, aps in self.ap.items():
            rows[row] = {
                "ap": dict(zip(self.class_names, aps)),
                "map": self.map(row),
                "per_fold_ap": self.per_fold_ap[row],
            }
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "config": self.config,
            "class_names": list(self.class_names),
            "channels": list(self.channels),
            "ranking": "pooled held-out decision values; ties keep dataset order",
            "results": rows,
            "chosen_params": self.chosen_params,
            "folds": self.folds,
            "ranked": {row: {c: [[i, s] for i, s in lst] for c, lst in per.items()}
                       for row, per in self.ranked.items()},
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != REPORT_FORMAT:
            raise ValidationError("not an evaluation report")
        classes = d["class_names"]
        ap = {row: [v["ap"][c] for c in classes] for row, v in d["results"].items()}
        per_fold = {row: v["per_fold_ap"] for row, v in d["results"].items()}
        ranked = {row: {c: [tuple(x) for x in lst] for c, lst in per.items()} for row, per in d["ranked"].items()}
        return cls(classes, d["channels"], ap, per_fold, ranked, d["folds"], d["chosen_params"], d["config"])


def format_table(report: EvalReport) -> str:
    """Aligned AP table (percent), classes as rows and channels plus fusion as columns."""
    cols = list(report.ap)
    width = max(len(c) for c in list(report.class_names) + ["mAP"]) + 2
    colw = max(9, max(len(c) for c in cols) + 2)
    lines = ["".ljust(width) + "".join(c.rjust(colw) for c in cols)]
    for k, name in enumerate(report.class_names):
        lines.append(name.ljust(width) + "".join(f"{100 * report.ap[c][k]:.2f}".rjust(colw) for c in cols))
    lines.append("mAP".ljust(width) + "".join(f"{100 * report.map(c):.2f}".rjust(colw) for c in cols))
    return "\n".join(lines)


def _as_matrix(manifest, data):
    if isinstance(data, np.ndarray):
        if data.shape[0] != len(manifest):
            raise ValidationError("channel matrix rows must align with manifest records")
        return np.asarray(data, dtype=np.float64)
    data = list(data)
    if data and not isinstance(data[0], FeatureVector):
        raise TypeError("channel data must be an array or a list of FeatureVector")
    return channel_matrix(data, manifest.ids())


def _ranked(ids, scores):
    order = np.argsort(-scores, kind="stable")
    return [(ids[i], float(scores[i])) for i in order]


def run_cv(manifest: DatasetManifest, channels: dict, cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """k-fold evaluation of every channel alone and of their late fusion.

    ``channels`` maps channel name to an array aligned with
    ``manifest.records`` or to a list of FeatureVector. For each outer fold
    the hyperparameter search, channel models and fusion layer see only the
    other folds; held-out scores are pooled over folds before computing AP.
    """
    if not channels:
        raise ValueError("at least one channel is required")
    names = list(channels)
    mats = {ch: _as_matrix(manifest, channels[ch]) for ch in names}
    class_names = list(manifest.class_names)
    n_classes = len(class_names)
    labels = manifest.labels()
    ids = manifest.ids()
    plan = make_folds(manifest, cfg.folds, cfg.seed)
    folds = plan.fold_array(ids)
    rows = names + [FUSED]
    pooled = {row: np.zeros((len(ids), n_classes)) for row in rows}
    chosen = {ch: [] for ch in names}

    for f in range(cfg.folds):
        tr = np.flatnonzero(folds != f)
        te = np.flatnonzero(folds == f)
        train_mats = {ch: mats[ch][tr] for ch in names}
        params = {}
        for ch in names:
            if cfg.params is not None and ch in cfg.params:
                params[ch] = cfg.params[ch]
            else:
                params[ch] = grid_search(train_mats[ch], labels[tr], class_names, cfg.costs, cfg.gammas,
                                         cfg.inner_folds, cfg.seed + f, cfg.tol, cfg.threads)
            chosen[ch].append(params[ch].to_dict())
        stack = fit_stack(train_mats, labels[tr], class_names, params, cfg.inner_folds, cfg.seed + f,
                          cfg.fusion_cost, cfg.threads)
        per_channel, fused = stack.predict({ch: mats[ch][te] for ch in names})
        for ch in names:
            pooled[ch][te] = per_channel[ch]
        pooled[FUSED][te] = fused
        log.info("fold %d/%d done", f + 1, cfg.folds)

    ap, per_fold, ranked = {}, {}, {}
    for row in rows:
        ap[row] = [float(x) for x in per_class_ap(pooled[row], labels, n_classes)]
        per_fold[row] = []
        for f in range(cfg.folds):
            te = folds == f
            fold_aps = []
            for c in range(n_classes):
                pos = labels[te] == c
                fold_aps.append(float(average_precision(pooled[row][te, c], pos)) if pos.any() else None)
            per_fold[row].append(fold_aps)
        ranked[row] = {class_names[c]: _ranked(ids, pooled[row][:, c]) for c in range(n_classes)}

    return EvalReport(class_names, names, ap, per_fold, ranked, plan.assignments, chosen,
                      {**cfg.echo(names), "fold_seed": plan.seed})
