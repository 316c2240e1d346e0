"""Evaluation protocols and decision-level metrics.

Predictions are class indices into a fixed emotion order with ``REJECT``
(-1) marking samples the thresholding step declined to label.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import GroupKFold, StratifiedKFold, train_test_split

from .dimred import FeatureNormalizer, SubsetPCA
from .exceptions import ArgumentError, EmosetError
from .svm import C_GRID, REJECT, OneVsAllSVM, decide

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
HOLDOUT = "holdout_70_30"
CV = "cv_7fold"


class LeakageError(EmosetError, AssertionError):
    """A test row reached a fitting step."""


class ScenarioError(EmosetError):
    """A pipeline stage failed inside an evaluation scenario."""

    def __init__(self, stage, fold, cause):
        super().__init__(f"stage {stage!r} failed on fold {fold}: {cause}")
        self.stage = stage
        self.fold = fold


# --------------------------------------------------------------------------
# Metrics


@dataclass
class ConfusionStats:
    tp: np.ndarray
    fn: np.ndarray
    fp: np.ndarray
    rejected: int
    N: int

    @property
    def n_classes(self) -> int:
        return self.tp.size

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int) -> "ConfusionStats":
        """Counts from true indices and predicted indices (``REJECT`` allowed).

        Rejected samples count in neither tp nor fn, so
        ``sum(tp + fn) + rejected == N``.
        """
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        if y_true.shape != y_pred.shape:
            raise ArgumentError("prediction and truth lengths differ")
        accepted = y_pred != REJECT
        hit = accepted & (y_pred == y_true)
        miss = accepted & (y_pred != y_true)
        tp = np.bincount(y_true[hit], minlength=n_classes)
        fn = np.bincount(y_true[miss], minlength=n_classes)
        fp = np.bincount(y_pred[miss], minlength=n_classes)
        return cls(tp, fn, fp, int((~accepted).sum()), int(y_true.size))

    def __add__(self, other):
        return ConfusionStats(self.tp + other.tp, self.fn + other.fn, self.fp + other.fp,
                              self.rejected + other.rejected, self.N + other.N)


def dl_classification_rate(stats: ConfusionStats) -> float:
    """Correctly labelled utterances over all test utterances."""
    if stats.N <= 0:
        raise ArgumentError("no test utterances")
    return float(stats.tp.sum() / stats.N)


def dl_recall(stats: ConfusionStats, emotion: int) -> Optional[float]:
    """``tp / (tp + fn)`` for one class; None when the class has no accepted test samples."""
    denom = stats.tp[emotion] + stats.fn[emotion]
    if denom == 0:
        return None
    return float(stats.tp[emotion] / denom)


def rejection_rate(stats: ConfusionStats) -> float:
    if stats.N <= 0:
        raise ArgumentError("no test utterances")
    return stats.rejected / stats.N


def unweighted_accuracy(stats: ConfusionStats) -> float:
    recalls = [r for r in (dl_recall(stats, i) for i in range(stats.n_classes)) if r is not None]
    return float(np.mean(recalls)) if recalls else float("nan")


def topk_accuracy(probs, y_true, k: int) -> float:
    """Share of samples whose true class is among the ``k`` highest scores.

    Equal scores rank by class index (lower first).
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y_true = np.asarray(y_true)
    if probs.shape[0] == 0:
        raise ArgumentError("empty prediction set")
    if not 1 <= k <= probs.shape[1]:
        raise ArgumentError(f"k={k} outside [1, {probs.shape[1]}]")
    ranked = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(ranked == y_true[:, None], axis=1)))


@dataclass(frozen=True)
class CurvePoint:
    theta: float
    rejection_rate: float
    accuracy: Optional[float]  # over accepted samples; None when all are rejected


def rejection_curve(probs, y_true, thresholds: Sequence[float]) -> list:
    """Accepted-sample accuracy and rejection rate for each threshold."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y_true = np.asarray(y_true)
    points = []
    for theta in thresholds:
        pred = decide(probs, theta)
        accepted = pred != REJECT
        n_acc = int(accepted.sum())
        acc = float(np.mean(pred[accepted] == y_true[accepted])) if n_acc else None
        points.append(CurvePoint(float(theta), 1.0 - n_acc / y_true.size, acc))
    return points


def parse_sweep(spec: str) -> list:
    """``"start:stop:step"`` to an inclusive list of thresholds."""
    try:
        start, stop, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise ArgumentError(f"sweep must look like start:stop:step, got {spec!r}") from None
    if step <= 0 or stop < start:
        raise ArgumentError(f"invalid sweep {spec!r}")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(n)]


# --------------------------------------------------------------------------
# Resampling and splits


def oversample_indices(labels, seed, mode: str = "balance") -> np.ndarray:
    """Row indices of a class-balanced training set.

    ``balance`` draws duplicates (with replacement) of each minority class
    until it matches the majority count. ``factor`` caps the growth of each
    class at five times its original size. Original rows come first, in order.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    target = counts.max()
    extra = []
    for cls, count in zip(classes, counts):
        want = target - count
        if mode == "factor":
            want = min(want, 4 * count)
        elif mode != "balance":
            raise ArgumentError(f"unknown oversampling mode {mode!r}")
        if want > 0:
            extra.append(rng.choice(np.flatnonzero(labels == cls), size=want, replace=True))
    return np.concatenate([np.arange(labels.size)] + extra).astype(np.int64)


def oversample_train(rows, labels, seed, mode: str = "balance"):
    idx = oversample_indices(labels, seed, mode)
    return np.asarray(rows)[idx], np.asarray(labels)[idx]


@dataclass
class SplitPlan:
    mode: str = CV
    folds: int = 7
    repeats: int = 5
    gender_filter: Optional[str] = None
    speaker_independent: bool = False
    seed: int = 0


def make_splits(labels, plan: SplitPlan, speakers=None) -> list:
    labels = np.asarray(labels)
    idx = np.arange(labels.size)
    if plan.mode == HOLDOUT:
        tr, te = train_test_split(idx, test_size=0.3, stratify=labels, random_state=plan.seed)
        return [(np.sort(tr), np.sort(te))]
    if plan.mode != CV:
        raise ArgumentError(f"unknown split mode {plan.mode!r}")
    if plan.speaker_independent:
        if speakers is None:
            raise ArgumentError("speaker-independent folds need speaker ids")
        splitter = GroupKFold(n_splits=plan.folds)
        return [(tr, te) for tr, te in splitter.split(idx, labels, groups=speakers)]
    splitter = StratifiedKFold(n_splits=plan.folds, shuffle=True, random_state=plan.seed)
    return [(tr, te) for tr, te in splitter.split(idx, labels)]


def _unit_seed(seed, fold, repeat) -> int:
    return int(np.random.SeedSequence([seed, fold, repeat]).generate_state(1)[0])


# --------------------------------------------------------------------------
# Scenario


@dataclass
class EvalConfig:
    normalizer: str = "global"
    pca_components: tuple = (90, 8, 2)
    pca_mode: str = "subset"
    c_grid: tuple = C_GRID
    inner_folds: int = 5
    svm_tol: float = 1e-4
    svm_max_epochs: int = 10000
    oversample: str = "balance"
    threshold: float = 0.0
    thresholds: tuple = tuple(round(0.05 * i, 2) for i in range(21))
    n_jobs: int = 1


@dataclass
class EvaluationReport:
    scenario: str
    corpus: str
    classes: list
    plan: dict
    config: dict
    threshold: float
    dl_classification_rate: float
    rejection_rate: float
    top1: float
    top2: float
    top3: float
    recall: dict
    unweighted_accuracy: float
    confusion: dict
    folds: list = field(default_factory=list)
    rejection_curve: list = field(default_factory=list)
    seed: int = 0
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvaluationReport":
        return cls(**json.loads(text))

    def write(self, prefix) -> None:
        """``<prefix>.json``, ``<prefix>_folds.csv`` and ``<prefix>_curve.csv``."""
        with open(f"{prefix}.json", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json() + "\n")
        with open(f"{prefix}_folds.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["fold", "n_train", "n_test", "dl_classification_rate", "top2", "top3", "rejection_rate"])
            for f in self.folds:
                writer.writerow([f["fold"], f["n_train"], f["n_test"], repr(f["dl_classification_rate"]),
                                 repr(f["top2"]), repr(f["top3"]), repr(f["rejection_rate"])])
        write_curve_csv(f"{prefix}_curve.csv", self.rejection_curve)


def write_curve_csv(path, curve) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["theta", "rejection_rate", "accuracy"])
        for p in curve:
            p = p if isinstance(p, dict) else asdict(p)
            writer.writerow([repr(p["theta"]), repr(p["rejection_rate"]),
                             "NA" if p["accuracy"] is None else repr(p["accuracy"])])


def _check_disjoint(train_idx, test_idx):
    if np.intersect1d(train_idx, test_idx).size:
        raise LeakageError("train and test folds share rows")


def _run_fold(fold, train_idx, test_idx, X, y, speakers, n_classes, plan, cfg):
    stage = "split"
    try:
        _check_disjoint(train_idx, test_idx)
        stage = "normalize"
        spk_tr = speakers[train_idx] if speakers is not None else None
        spk_te = speakers[test_idx] if speakers is not None else None
        norm = FeatureNormalizer(cfg.normalizer).fit(X[train_idx], speakers=spk_tr)
        Xtr = norm.transform(X[train_idx], speakers=spk_tr)
        Xte = norm.transform(X[test_idx], speakers=spk_te)
        stage = "pca"
        pca = SubsetPCA(tuple(cfg.pca_components), mode=cfg.pca_mode).fit(Xtr)
        Ztr, Zte = pca.transform(Xtr), pca.transform(Xte)
        ytr = y[train_idx]
        units = []
        for rep in range(plan.repeats):
            stage = "oversample"
            over = oversample_indices(ytr, _unit_seed(plan.seed, fold, rep), cfg.oversample)
            stage = "train"
            model = OneVsAllSVM(classes=list(range(n_classes)), C_grid=tuple(cfg.c_grid),
                                inner_folds=cfg.inner_folds, tol=cfg.svm_tol,
                                max_iter=cfg.svm_max_epochs,
                                random_state=_unit_seed(plan.seed, fold, rep) % (2 ** 31))
            model.fit(Ztr[over], ytr[over], groups=over)
            stage = "predict"
            units.append({
                "probs": model.predict_proba(Zte),
                "C": [b.C for b in model.binaries_],
                "converged": all(b.converged for b in model.binaries_),
            })
        return {"fold": fold, "train": train_idx, "test": test_idx, "units": units,
                "captured_variance": pca.captured_variance_}
    except EmosetError as exc:
        if isinstance(exc, LeakageError):
            raise
        raise ScenarioError(stage, fold, exc) from exc
    except (ValueError, ArithmeticError) as exc:
        raise ScenarioError(stage, fold, exc) from exc


def run_scenario(X, y, classes, plan: SplitPlan, config: EvalConfig = None, speakers=None,
                 genders=None, scenario: str = "general", corpus: str = "") -> EvaluationReport:
    """Split, normalise, reduce, oversample, train and score; average over folds and repeats.

    ``y`` holds class indices into ``classes``. With ``plan.gender_filter``
    both training and test rows are restricted to that gender.
    """
    cfg = config or EvalConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    speakers = None if speakers is None else np.asarray(speakers)
    if plan.gender_filter is not None:
        if genders is None:
            raise ArgumentError("gender filter needs per-row genders")
        keep = np.asarray(genders) == plan.gender_filter
        X, y = X[keep], y[keep]
        speakers = None if speakers is None else speakers[keep]
    if X.shape[0] == 0:
        raise ArgumentError("no rows left to evaluate")
    n_classes = len(classes)

    splits = make_splits(y, plan, speakers)
    results = Parallel(n_jobs=cfg.n_jobs)(
        delayed(_run_fold)(f, tr, te, X, y, speakers, n_classes, plan, cfg)
        for f, (tr, te) in enumerate(splits)
    )

    pooled_probs, pooled_truth = [], []
    unit_rates, unit_top, unit_rej, unit_ua = [], {1: [], 2: [], 3: []}, [], []
    recall_sums = np.zeros(n_classes)
    recall_counts = np.zeros(n_classes)
    total = ConfusionStats(np.zeros(n_classes, int), np.zeros(n_classes, int), np.zeros(n_classes, int), 0, 0)
    folds = []
    for res in results:
        yte = y[res["test"]]
        fold_rates, fold_t2, fold_t3, fold_rej = [], [], [], []
        for unit in res["units"]:
            probs = unit["probs"]
            stats = ConfusionStats.from_predictions(yte, decide(probs, cfg.threshold), n_classes)
            total = total + stats
            rate = dl_classification_rate(stats)
            unit_rates.append(rate)
            unit_rej.append(rejection_rate(stats))
            unit_ua.append(unweighted_accuracy(stats))
            for k in (1, 2, 3):
                unit_top[k].append(topk_accuracy(probs, yte, min(k, n_classes)))
            for i in range(n_classes):
                r = dl_recall(stats, i)
                if r is not None:
                    recall_sums[i] += r
                    recall_counts[i] += 1
            fold_rates.append(rate)
            fold_t2.append(unit_top[2][-1])
            fold_t3.append(unit_top[3][-1])
            fold_rej.append(unit_rej[-1])
            pooled_probs.append(probs)
            pooled_truth.append(yte)
        folds.append({
            "fold": res["fold"],
            "n_train": int(res["train"].size),
            "n_test": int(res["test"].size),
            "dl_classification_rate": float(np.mean(fold_rates)),
            "top2": float(np.mean(fold_t2)),
            "top3": float(np.mean(fold_t3)),
            "rejection_rate": float(np.mean(fold_rej)),
            "C": [u["C"] for u in res["units"]],
            "converged": all(u["converged"] for u in res["units"]),
            "captured_variance": res["captured_variance"],
        })

    curve = rejection_curve(np.vstack(pooled_probs), np.concatenate(pooled_truth), cfg.thresholds)
    recall = {
        str(classes[i]): (float(recall_sums[i] / recall_counts[i]) if recall_counts[i] else None)
        for i in range(n_classes)
    }
    plan_d = asdict(plan)
    # worker count must not leak into the report: outputs are identical for any value
    cfg_d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items() if k != "n_jobs"}
    return EvaluationReport(
        scenario=scenario,
        corpus=corpus,
        classes=[str(c) for c in classes],
        plan=plan_d,
        config=cfg_d,
        threshold=float(cfg.threshold),
        dl_classification_rate=float(np.mean(unit_rates)),
        rejection_rate=float(np.mean(unit_rej)),
        top1=float(np.mean(unit_top[1])),
        top2=float(np.mean(unit_top[2])),
        top3=float(np.mean(unit_top[3])),
        recall=recall,
        unweighted_accuracy=float(np.nanmean(unit_ua)),
        confusion={"tp": total.tp.tolist(), "fn": total.fn.tolist(), "fp": total.fp.tolist(),
                   "rejected": total.rejected, "N": total.N},
        folds=folds,
        rejection_curve=[asdict(p) for p in curve],
        seed=plan.seed,
    )


def accuracy_at_rejection(curve, target: float = 0.5):
    """Accepted-sample accuracy of the curve point whose rejection rate is closest to ``target``."""
    pts = [p if isinstance(p, dict) else asdict(p) for p in curve]
    pts = [p for p in pts if p["accuracy"] is not None]
    if not pts:
        return None, None
    best = min(pts, key=lambda p: (abs(p["rejection_rate"] - target), p["theta"]))
    return best["rejection_rate"], best["accuracy"]
