"""Kernel SVMs trained by SMO, one-vs-rest channel models and linear late fusion."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _accel
from .metrics import per_class_ap

log = logging.getLogger(__name__)

DEFAULT_COSTS = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMAS = tuple(2.0 ** p for p in range(-7, 4))

# slack for float rounding when asserting the dual objective never drops
_MONOTONE_RTOL = 1e-10


class DegenerateTrainingError(ValueError):
    pass


@dataclass(frozen=True)
class SvmParams:
    cost: float = 1.0
    gamma: float = 2.0 ** -3
    tol: float = 1e-3
    max_passes: int = 1_000_000
    kernel: str = "rbf"

    def __post_init__(self):
        if not self.cost > 0:
            raise ValueError(f"cost must be positive, got {self.cost}")
        if self.kernel == "rbf" and not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.kernel not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel {self.kernel!r}")

    def to_dict(self):
        return {"cost": self.cost, "gamma": self.gamma, "tol": self.tol,
                "max_passes": self.max_passes, "kernel": self.kernel}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["cost"]), float(d["gamma"]), float(d["tol"]), int(d["max_passes"]), d["kernel"])


def kernel_matrix(X, Z, params: SvmParams) -> np.ndarray:
    if params.kernel == "linear":
        return _accel.dot(X, Z)
    return np.exp(-params.gamma * _accel.sqdist(X, Z))


def _canonical_order(sv, coef):
    keys = (coef,) + tuple(sv[:, k] for k in range(sv.shape[1] - 1, -1, -1))
    return np.lexsort(keys)


@dataclass(frozen=True, eq=False)
class BinarySvm:
    """Kernel expansion ``score(x) = sum_i coef_i k(sv_i, x) + bias``.

    ``coef_i = alpha_i * y_i``; support vectors are stored in a canonical
    (lexicographic) order so the sum does not depend on insertion order.
    """

    support_vectors: np.ndarray
    coef: np.ndarray
    bias: float
    params: SvmParams
    converged: bool = True
    n_iter: int = 0
    dual_objective: float = 0.0

    def __post_init__(self):
        sv = np.atleast_2d(np.asarray(self.support_vectors, dtype=np.float64))
        coef = np.asarray(self.coef, dtype=np.float64).ravel()
        if sv.shape[0] != coef.size:
            raise ValueError("one coefficient per support vector required")
        if np.any(np.abs(coef) > self.params.cost * (1 + 1e-12)):
            raise ValueError("dual coefficients exceed the cost bound")
        order = _canonical_order(sv, coef) if coef.size else np.arange(0)
        object.__setattr__(self, "support_vectors", np.ascontiguousarray(sv[order]))
        object.__setattr__(self, "coef", np.ascontiguousarray(coef[order]))
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dual_coef(self):
        return np.abs(self.coef)

    def decision(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.coef.size == 0:
            return np.full(X.shape[0], self.bias)
        if X.shape[1] != self.support_vectors.shape[1]:
            raise ValueError(f"expected {self.support_vectors.shape[1]} features, got {X.shape[1]}")
        return _accel.expand(kernel_matrix(X, self.support_vectors, self.params), self.coef) + self.bias

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "support_vectors": self.support_vectors.tolist(),
            "coef": self.coef.tolist(),
            "bias": self.bias,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "dual_objective": self.dual_objective,
        }

    @classmethod
    def from_dict(cls, d):
        params = SvmParams.from_dict(d["params"])
        sv = np.array(d["support_vectors"], dtype=np.float64)
        if sv.size == 0:
            sv = sv.reshape(0, 0)
        return cls(sv, np.array(d["coef"], dtype=np.float64), d["bias"], params,
                   bool(d["converged"]), int(d["n_iter"]), float(d["dual_objective"]))


def decision(model: BinarySvm, x) -> float | np.ndarray:
    """Score one vector (returns a float) or a matrix of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    out = model.decision(x)
    return float(out[0]) if x.ndim == 1 else out


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    history: np.ndarray
    n_iter: int
    converged: bool
    kkt_gap: float


def _bias_from_gradient(alpha, grad, y, cost):
    """-rho as LIBSVM computes it: mean of y*G over free vectors, else mid-bracket."""
    yg = y * grad
    upper = alpha >= cost
    lower = alpha <= 0
    free = ~(upper | lower)
    if free.any():
        rho = float(np.add.reduce(yg[free]) / free.sum())
    else:
        ub_mask = (upper & (y < 0)) | (lower & (y > 0))
        lb_mask = (upper & (y > 0)) | (lower & (y < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2
    return -rho


def kkt_gap(alpha, grad, y, cost) -> float:
    """max over I_up of -yG minus min over I_low of -yG (<= tol at convergence)."""
    v = -y * grad
    pos = y > 0
    up = (pos & (alpha < cost)) | (~pos & (alpha > 0))
    low = (pos & (alpha > 0)) | (~pos & (alpha < cost))
    if not up.any() or not low.any():
        return 0.0
    return float(v[up].max() - v[low].min())


def solve_dual(K, y, params: SvmParams, seed: int = 0, check_monotone=True) -> SmoResult:
    y = np.asarray(y, dtype=np.float64)
    rank = np.random.default_rng(seed).permutation(y.size)
    alpha, grad, history, n_iter, converged = _accel.smo(K, y, params.cost, params.tol, params.max_passes, rank)
    if check_monotone and history.size > 1:
        drops = np.diff(history) < -_MONOTONE_RTOL * (1.0 + np.abs(history[1:]))
        if drops.any():
            at = int(np.flatnonzero(drops)[0]) + 1
            raise AssertionError(f"SMO dual objective decreased at iteration {at}")
    if not converged:
        log.warning("SMO stopped after %d iterations without meeting tol=%g", n_iter, params.tol)
    return SmoResult(alpha, _bias_from_gradient(alpha, grad, y, params.cost), history, int(n_iter),
                     bool(converged), kkt_gap(alpha, grad, y, params.cost))


def _signs(labels):
    y = np.asarray(labels)
    if y.dtype == bool:
        y = np.where(y, 1.0, -1.0)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("binary labels must be +1/-1 or boolean")
    if not ((y > 0).any() and (y < 0).any()):
        raise DegenerateTrainingError("binary training needs at least one example of each sign")
    return y


def _fit_from_kernel(X, y, K, params, seed):
    res = solve_dual(K, y, params, seed)
    sv = res.alpha > 0
    return BinarySvm(X[sv], res.alpha[sv] * y[sv], res.bias, params, res.converged, res.n_iter,
                     float(res.history[-1]))


def train_binary(X, labels, params: SvmParams = SvmParams(), seed: int = 0, K=None) -> BinarySvm:
    """Fit a C-SVC. ``K`` may carry a precomputed ``kernel_matrix(X, X)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = _signs(labels)
    if X.shape[0] != y.size:
        raise ValueError("one label per row required")
    if K is None:
        K = kernel_matrix(X, X, params)
    return _fit_from_kernel(X, y, K, params, seed)


# ---------------------------------------------------------------------------
# standardization and one-vs-rest channel models


def zscore_stats(X):
    mean = np.add.reduce(X, axis=0) / X.shape[0]
    var = np.add.reduce((X - mean) ** 2, axis=0) / X.shape[0]
    scale = np.sqrt(var)
    scale[scale <= 1e-12] = 1.0
    return mean, scale


def _map(fn, items, threads):
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _check_classes(labels, class_names):
    present = np.bincount(labels, minlength=len(class_names))
    if len(class_names) < 2:
        raise DegenerateTrainingError("one-vs-rest training needs at least two classes")
    for c, name in enumerate(class_names):
        if present[c] == 0:
            raise DegenerateTrainingError(f"class {name!r} has no training examples")
        if present[c] == labels.size:
            raise DegenerateTrainingError(f"class {name!r} has no negatives")


@dataclass(frozen=True, eq=False)
class TrainedChannelModel:
    channel: str
    class_names: tuple
    models: tuple
    mean: np.ndarray
    scale: np.ndarray
    params: SvmParams

    def decision_matrix(self, X) -> np.ndarray:
        """Scores, one column per class in ``class_names`` order."""
        Xs = (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.mean) / self.scale
        return np.column_stack([m.decision(Xs) for m in self.models])

    def to_dict(self):
        return {
            "channel": self.channel,
            "class_names": list(self.class_names),
            "params": self.params.to_dict(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "models": [m.to_dict() for m in self.models],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["channel"], tuple(d["class_names"]), tuple(BinarySvm.from_dict(m) for m in d["models"]),
                   np.array(d["mean"], dtype=np.float64), np.array(d["scale"], dtype=np.float64),
                   SvmParams.from_dict(d["params"]))


def _ovr_from_kernel(Xs, labels, K, params, n_classes, seed, threads):
    def fit(c):
        y = np.where(labels == c, 1.0, -1.0)
        return _fit_from_kernel(Xs, y, K, params, seed + c)
    return tuple(_map(fit, list(range(n_classes)), threads))


def train_channel(X, labels, class_names: Sequence[str], params: SvmParams = SvmParams(),
                  channel: str = "facedesc", seed: int = 0, threads: int = 1) -> TrainedChannelModel:
    """One-vs-rest RBF models, one per class, on z-scored features."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    _check_classes(labels, class_names)
    mean, scale = zscore_stats(X)
    Xs = (X - mean) / scale
    K = kernel_matrix(Xs, Xs, params)
    models = _ovr_from_kernel(Xs, labels, K, params, len(class_names), seed, threads)
    return TrainedChannelModel(channel, tuple(class_names), models, mean, scale, params)


# ---------------------------------------------------------------------------
# folds and hyperparameter search


def stratified_assign(labels, k: int, seed: int) -> np.ndarray:
    """Fold index per sample; per-class fold sizes differ by at most one."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (np.arange(idx.size) + offset) % k
        offset = (offset + idx.size) % k
    return folds


def _oof_scores_from_kernel(Xs, labels, K, params, n_classes, folds, k, seed, threads):
    """Out-of-fold one-vs-rest scores using slices of a precomputed kernel."""
    scores = np.zeros((labels.size, n_classes))
    for f in range(k):
        tr = np.flatnonzero(folds != f)
        va = np.flatnonzero(folds == f)
        if va.size == 0:
            continue
        sub = labels[tr]
        Ktr = K[np.ix_(tr, tr)]
        Kva = K[np.ix_(va, tr)]

        def fit(c, tr=tr, sub=sub, Ktr=Ktr, Kva=Kva, f=f):
            y = np.where(sub == c, 1.0, -1.0)
            if not ((y > 0).any() and (y < 0).any()):
                return np.full(Kva.shape[0], 1.0 if (y > 0).all() else -1.0)
            res = solve_dual(Ktr, y, params, seed + 1000 * f + c)
            sv = np.flatnonzero(res.alpha > 0)
            return _accel.expand(Kva[:, sv], res.alpha[sv] * y[sv]) + res.bias

        cols = _map(fit, list(range(n_classes)), threads)
        scores[va] = np.column_stack(cols)
    return scores


def grid_search(X, labels, class_names: Sequence[str], costs=DEFAULT_COSTS, gammas=DEFAULT_GAMMAS,
                inner_folds: int = 5, seed: int = 0, tol: float = 1e-3, threads: int = 1,
                return_table: bool = False):
    """Pick (cost, gamma) by inner cross-validated mAP on the given training split.

    Ties go to the smaller cost, then the smaller gamma.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = len(class_names)
    costs = sorted(set(float(c) for c in costs))
    gammas = sorted(set(float(g) for g in gammas))
    if not costs or not gammas:
        raise ValueError("grid must be nonempty")
    if len(costs) == 1 and len(gammas) == 1:
        best = SvmParams(costs[0], gammas[0], tol)
        return (best, {(costs[0], gammas[0]): float("nan")}) if return_table else best
    _check_classes(labels, class_names)
    mean, scale = zscore_stats(X)
    Xs = (X - mean) / scale
    D = _accel.sqdist(Xs, Xs)
    folds = stratified_assign(labels, inner_folds, seed)
    table = {}
    for gamma in gammas:
        K = np.exp(-gamma * D)
        for cost in costs:
            params = SvmParams(cost, gamma, tol)
            s = _oof_scores_from_kernel(Xs, labels, K, params, n_classes, folds, inner_folds, seed, threads)
            table[(cost, gamma)] = float(np.mean(per_class_ap(s, labels, n_classes)))
    best_key = None
    for cost in costs:
        for gamma in gammas:
            if best_key is None or table[(cost, gamma)] > table[best_key]:
                best_key = (cost, gamma)
    best = SvmParams(best_key[0], best_key[1], tol)
    return (best, table) if return_table else best


def oof_channel_scores(X, labels, class_names, params: SvmParams, inner_folds: int = 5, seed: int = 0,
                       threads: int = 1) -> np.ndarray:
    """Out-of-fold decision values for every training sample (fusion-layer inputs)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    mean, scale = zscore_stats(X)
    Xs = (X - mean) / scale
    K = kernel_matrix(Xs, Xs, params)
    folds = stratified_assign(labels, inner_folds, seed)
    return _oof_scores_from_kernel(Xs, labels, K, params, len(class_names), folds, inner_folds, seed, threads)


# ---------------------------------------------------------------------------
# late fusion


@dataclass(frozen=True, eq=False)
class FusionModel:
    """Per-class linear SVM over the concatenated per-channel class scores."""

    channels: tuple
    class_names: tuple
    weights: np.ndarray  # (n_classes, n_channels * n_classes)
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    cost: float = 1.0

    @property
    def input_dim(self):
        return len(self.channels) * len(self.class_names)

    def decision_matrix(self, S) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=np.float64))
        if S.shape[1] != self.input_dim:
            raise ValueError(f"fusion expects {self.input_dim} scores per image, got {S.shape[1]}")
        Ss = (S - self.mean) / self.scale
        return np.column_stack([_accel.expand(Ss, w) + b for w, b in zip(self.weights, self.bias)])

    def to_dict(self):
        return {
            "channels": list(self.channels),
            "class_names": list(self.class_names),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["channels"]), tuple(d["class_names"]), np.array(d["weights"], dtype=np.float64),
                   np.array(d["bias"], dtype=np.float64), np.array(d["mean"], dtype=np.float64),
                   np.array(d["scale"], dtype=np.float64), float(d["cost"]))


def train_fusion(scores, labels, class_names: Sequence[str], channels: Sequence[str], cost: float = 1.0,
                 seed: int = 0, tol: float = 1e-3, threads: int = 1) -> FusionModel:
    """Second-layer linear SVMs; ``scores`` columns are grouped channel-major."""
    S = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = len(class_names)
    if S.shape[1] != len(channels) * n_classes:
        raise ValueError(f"expected {len(channels) * n_classes} score columns, got {S.shape[1]}")
    _check_classes(labels, class_names)
    mean, scale = zscore_stats(S)
    Ss = (S - mean) / scale
    params = SvmParams(cost=cost, gamma=1.0, tol=tol, kernel="linear")
    K = kernel_matrix(Ss, Ss, params)

    def fit(c):
        y = np.where(labels == c, 1.0, -1.0)
        res = solve_dual(K, y, params, seed + c)
        coef = res.alpha * y
        w = np.add.reduce(coef[:, None] * Ss, axis=0)
        return w, res.bias

    fitted = _map(fit, list(range(n_classes)), threads)
    W = np.vstack([w for w, _ in fitted])
    b = np.array([b for _, b in fitted])
    return FusionModel(tuple(channels), tuple(class_names), W, b, mean, scale, cost)


@dataclass(frozen=True, eq=False)
class StackedModel:
    """First-layer channel models plus the fusion layer on top."""

    channel_models: dict = field(default_factory=dict)
    fusion: Optional[FusionModel] = None

    @property
    def channels(self):
        return tuple(self.channel_models)

    def channel_scores(self, mats) -> dict:
        return {name: m.decision_matrix(mats[name]) for name, m in self.channel_models.items()}

    def predict(self, mats):
        per_channel = self.channel_scores(mats)
        S = np.hstack([per_channel[name] for name in self.channels])
        return per_channel, self.fusion.decision_matrix(S)


def fit_stack(mats: dict, labels, class_names, params: dict, inner_folds: int = 5, seed: int = 0,
              fusion_cost: float = 1.0, threads: int = 1) -> StackedModel:
    """Train channel models on all rows and a fusion layer on inner out-of-fold scores."""
    labels = np.asarray(labels, dtype=np.int64)
    channels = tuple(mats)
    oof = [oof_channel_scores(mats[ch], labels, class_names, params[ch], inner_folds, seed, threads)
           for ch in channels]
    fusion = train_fusion(np.hstack(oof), labels, class_names, channels, cost=fusion_cost, seed=seed,
                          threads=threads)
    models = {ch: train_channel(mats[ch], labels, class_names, params[ch], ch, seed, threads) for ch in channels}
    return StackedModel(models, fusion)
