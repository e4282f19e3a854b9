"""Stratified K-fold cross-validation, classification metrics, and the
paired t-test used to compare band variants over shared fold partitions.

Fold membership depends only on (labels, K, seed), so runs that differ
in band mode but share a manifest pair up fold-for-fold; the pairing is
asserted through fold fingerprints.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import dataset as dataset_mod
from . import gbdt
from .errors import (
    ConfigurationError,
    EmptyEvaluationError,
    ShapeError,
)
from .spectrum import BandMode

log = logging.getLogger(__name__)

METRIC_NAMES = ("accuracy", "macro_precision", "macro_recall", "macro_f1")


@dataclass(frozen=True)
class FoldAssignment:
    """Row-to-fold map; per class, fold counts differ by at most one."""

    fold_of: np.ndarray
    k: int
    seed: int

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)

    @property
    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(f"{self.k}:{self.seed}:".encode())
        digest.update(np.ascontiguousarray(self.fold_of, dtype="<i8").tobytes())
        return digest.hexdigest()


def stratified_kfold(labels: np.ndarray, k: int, seed: int) -> FoldAssignment:
    """Shuffle each class with the seeded generator and deal it round-robin.

    The dealing pointer carries over between classes so overall fold
    sizes stay balanced too.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    if k > n:
        raise ConfigurationError(f"k={k} exceeds the {n} available rows")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    cursor = 0
    for cls in np.unique(labels):
        rows = np.flatnonzero(labels == cls)
        rows = rng.permutation(rows)
        for j, row in enumerate(rows):
            fold_of[row] = (cursor + j) % k
        cursor = (cursor + rows.shape[0]) % k
    return FoldAssignment(fold_of=fold_of, k=k, seed=seed)


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    """Count matrix M[i, j] = number of rows with true class i predicted j."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ShapeError(
            f"label vectors must be 1-D and equal length, got {y_true.shape} vs {y_pred.shape}"
        )
    if y_true.size and (
        y_true.min() < 0
        or y_true.max() >= n_classes
        or y_pred.min() < 0
        or y_pred.max() >= n_classes
    ):
        raise ShapeError(f"labels out of range for {n_classes} classes")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (y_true, y_pred), 1)
    return matrix


@dataclass(frozen=True)
class MetricSet:
    """The four headline metrics plus the confusion matrix they came from.

    A class never predicted (zero column) contributes precision 0 to the
    macro mean, and a class never present (zero row) contributes recall
    0; the undefined_* counters record how often that happened.
    """

    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray
    undefined_precision: int = 0
    undefined_recall: int = 0

    # For single-label classification the micro averages all collapse to
    # accuracy, so they are exposed as views rather than stored.
    @property
    def micro_precision(self) -> float:
        return self.accuracy

    @property
    def micro_recall(self) -> float:
        return self.accuracy

    @property
    def micro_f1(self) -> float:
        return self.accuracy

    def values(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}

    def to_dict(self) -> dict:
        out = self.values()
        out["confusion"] = self.confusion.tolist()
        out["undefined_precision"] = self.undefined_precision
        out["undefined_recall"] = self.undefined_recall
        return out


def metrics(confusion: np.ndarray) -> MetricSet:
    """Accuracy plus macro-averaged precision, recall and F1."""
    confusion = np.asarray(confusion)
    if confusion.ndim != 2 or confusion.shape[0] != confusion.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {confusion.shape}")
    if (confusion < 0).any():
        raise ShapeError("confusion matrix counts must be non-negative")
    total = int(confusion.sum())
    if total == 0:
        raise EmptyEvaluationError("confusion matrix is all zeros")
    diag = np.diag(confusion).astype(np.float64)
    col_sums = confusion.sum(axis=0).astype(np.float64)
    row_sums = confusion.sum(axis=1).astype(np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(col_sums > 0, diag / col_sums, 0.0)
        recall = np.where(row_sums > 0, diag / row_sums, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / pr, 0.0)
    undefined_precision = int((col_sums == 0).sum())
    undefined_recall = int((row_sums == 0).sum())
    if undefined_precision or undefined_recall:
        log.warning(
            "metrics over %d classes: %d with undefined precision, %d with undefined recall",
            confusion.shape[0],
            undefined_precision,
            undefined_recall,
        )
    return MetricSet(
        accuracy=float(diag.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        confusion=confusion,
        undefined_precision=undefined_precision,
        undefined_recall=undefined_recall,
    )


def config_fingerprint(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass(frozen=True)
class CvReport:
    """Per-fold metrics with their sample mean and standard deviation."""

    per_fold: list[MetricSet]
    k: int
    seed: int
    mean: dict[str, float]
    std: dict[str, float]
    config: dict
    config_fingerprint: str
    fold_fingerprint: str

    def fold_scores(self, metric: str = "accuracy") -> np.ndarray:
        return np.array([getattr(m, metric) for m in self.per_fold])

    def to_dict(self) -> dict:
        return {
            "k_folds": self.k,
            "seed_data": self.seed,
            "per_fold": [m.to_dict() for m in self.per_fold],
            "mean": self.mean,
            "std": self.std,
            "config": self.config,
            "config_fingerprint": self.config_fingerprint,
            "fold_fingerprint": self.fold_fingerprint,
        }


def _fold_confusion(
    features: np.ndarray,
    labels: np.ndarray,
    fold_of: np.ndarray,
    fold: int,
    config: gbdt.TrainConfig,
) -> np.ndarray:
    train_rows = np.flatnonzero(fold_of != fold)
    test_rows = np.flatnonzero(fold_of == fold)
    model = gbdt.train(features[train_rows], labels[train_rows], config)
    predicted = gbdt.predict(model, features[test_rows])
    return confusion_matrix(labels[test_rows], predicted, config.n_classes)


def cross_validate(
    dataset: "dataset_mod.LabeledDataset",
    train_config: gbdt.TrainConfig,
    k: int = 10,
    seed: int = 0,
    jobs: int = 1,
) -> CvReport:
    """Train K times, each fold held out once; folds are fixed by seed."""
    if train_config.n_classes != dataset.schema.n_classes:
        raise ConfigurationError(
            f"train config declares {train_config.n_classes} classes but the "
            f"dataset schema has {dataset.schema.n_classes}"
        )
    folds = stratified_kfold(dataset.labels, k, seed)
    for fold in range(k):
        if folds.test_rows(fold).size == 0:
            raise ConfigurationError(f"fold {fold} has no test rows")

    confusions: list[np.ndarray | None] = [None] * k
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(
                    _fold_confusion,
                    dataset.features,
                    dataset.labels,
                    folds.fold_of,
                    fold,
                    train_config,
                ): fold
                for fold in range(k)
            }
            for future, fold in futures.items():
                confusions[fold] = future.result()
    else:
        for fold in range(k):
            confusions[fold] = _fold_confusion(
                dataset.features, dataset.labels, folds.fold_of, fold, train_config
            )

    per_fold = [metrics(c) for c in confusions]
    mean = {}
    std = {}
    for name in METRIC_NAMES:
        scores = np.array([getattr(m, name) for m in per_fold])
        mean[name] = float(scores.mean())
        std[name] = float(scores.std(ddof=1))
    config = {
        "train": dataclasses.asdict(train_config),
        "k_folds": k,
        "seed_data": seed,
    }
    return CvReport(
        per_fold=per_fold,
        k=k,
        seed=seed,
        mean=mean,
        std=std,
        config=config,
        config_fingerprint=config_fingerprint(config),
        fold_fingerprint=folds.fingerprint,
    )


# ---------------------------------------------------------------------------
# Student-t critical values via the regularized incomplete beta function.
# ---------------------------------------------------------------------------

_BETA_MAX_ITER = 400
_BETA_EPS = 3e-16
_BETA_TINY = 1e-300


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETA_TINY:
        d = _BETA_TINY
    d = 1.0 / d
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETA_TINY:
            d = _BETA_TINY
        c = 1.0 + aa / c
        if abs(c) < _BETA_TINY:
            c = _BETA_TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    return h


def _betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        a * math.log(x)
        + b * math.log1p(-x)
        + math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_cdf(t: float, df: int) -> float:
    """CDF of the Student-t distribution with df degrees of freedom."""
    if df < 1:
        raise ConfigurationError(f"degrees of freedom must be >= 1, got {df}")
    if t == 0.0:
        return 0.5
    x = df / (df + t * t)
    tail = 0.5 * _betainc(0.5 * df, 0.5, x)
    return 1.0 - tail if t > 0 else tail


def t_critical(prob: float, df: int) -> float:
    """Quantile of the Student-t distribution (inverse CDF) by bisection."""
    if not (0.0 < prob < 1.0):
        raise ConfigurationError(f"quantile probability must be in (0, 1), got {prob}")
    if df < 1:
        raise ConfigurationError(f"degrees of freedom must be >= 1, got {df}")
    if prob == 0.5:
        return 0.0
    target = prob if prob > 0.5 else 1.0 - prob
    lo, hi = 0.0, 1.0
    while student_t_cdf(hi, df) < target:
        hi *= 2.0
        if hi > 1e300:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if student_t_cdf(mid, df) < target:
            lo = mid
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    return t if prob > 0.5 else -t


@dataclass(frozen=True)
class TTestResult:
    """Two-sided paired t-test on per-fold score differences a - b."""

    mean_diff: float
    t_stat: float
    dof: int
    ci_low: float
    ci_high: float
    alpha: float
    rejected: bool
    degenerate: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def paired_ttest(
    scores_a: np.ndarray, scores_b: np.ndarray, alpha: float = 0.05
) -> TTestResult:
    """Test the null that the mean per-fold difference is zero.

    The pairs must come from identical fold partitions; callers enforce
    that with fold fingerprints. A zero-spread difference vector is
    reported as degenerate: t = 0 and no rejection when the mean is also
    zero, otherwise an infinite t with a point confidence interval.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"score vectors must be 1-D and equal length, got {a.shape} vs {b.shape}")
    k = a.shape[0]
    if k < 2:
        raise ConfigurationError(f"paired t-test needs at least 2 pairs, got {k}")
    if not (0.0 < alpha < 1.0):
        raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
    diff = a - b
    mean_diff = float(diff.mean())
    s_d = float(diff.std(ddof=1))
    dof = k - 1
    if s_d == 0.0:
        if mean_diff == 0.0:
            return TTestResult(0.0, 0.0, dof, 0.0, 0.0, alpha, False, degenerate=True)
        log.warning("paired t-test: zero spread with nonzero mean difference %g", mean_diff)
        t_stat = math.inf if mean_diff > 0 else -math.inf
        return TTestResult(
            mean_diff, t_stat, dof, mean_diff, mean_diff, alpha, True, degenerate=True
        )
    se = s_d / math.sqrt(k)
    t_stat = mean_diff / se
    half_width = t_critical(1.0 - alpha / 2.0, dof) * se
    ci_low = mean_diff - half_width
    ci_high = mean_diff + half_width
    rejected = not (ci_low <= 0.0 <= ci_high)
    return TTestResult(mean_diff, t_stat, dof, ci_low, ci_high, alpha, rejected)


@dataclass(frozen=True)
class BandComparison:
    """Cross-validation of all three band layouts over one fold partition."""

    case: "dataset_mod.Case"
    reports: dict[BandMode, CvReport]
    lb_vs_ub: TTestResult
    lb_vs_both: TTestResult
    alpha: float
    fold_fingerprint: str

    def to_dict(self) -> dict:
        fingerprints = {rep.config_fingerprint for rep in self.reports.values()}
        return {
            "case": self.case.value,
            "bands": {mode.value: rep.to_dict() for mode, rep in self.reports.items()},
            "ttests": {
                "lb_vs_ub": self.lb_vs_ub.to_dict(),
                "lb_vs_both": self.lb_vs_both.to_dict(),
            },
            "alpha": self.alpha,
            "config_fingerprint": fingerprints.pop() if len(fingerprints) == 1 else sorted(fingerprints),
            "fold_fingerprint": self.fold_fingerprint,
        }


def compare_bands(
    manifest: "dataset_mod.Manifest",
    case: "dataset_mod.Case",
    train_config: gbdt.TrainConfig,
    k: int = 10,
    seed: int = 0,
    alpha: float = 0.05,
    frame_size: int = 2048,
    hop: int | None = None,
    q: int = 8,
    window: str = "rectangular",
    jobs: int = 1,
) -> BandComparison:
    """Run lower-only, upper-only and concatenated CV plus the two t-tests.

    All three runs share one fold partition (same labels, K and seed),
    which the paired t-tests require.
    """
    schema = dataset_mod.LabelSchema.for_case(case)
    train_config = dataclasses.replace(train_config, n_classes=schema.n_classes)
    reports: dict[BandMode, CvReport] = {}
    for mode in (BandMode.LOWER_ONLY, BandMode.UPPER_ONLY, BandMode.CONCATENATED):
        ds = dataset_mod.build_dataset(
            manifest,
            mode,
            case,
            frame_size=frame_size,
            hop=hop,
            q=q,
            window=window,
            jobs=jobs,
        )
        reports[mode] = cross_validate(ds, train_config, k=k, seed=seed, jobs=jobs)
    fingerprints = {rep.fold_fingerprint for rep in reports.values()}
    if len(fingerprints) != 1:
        raise ConfigurationError("band runs produced different fold partitions")
    acc = {mode: rep.fold_scores("accuracy") for mode, rep in reports.items()}
    return BandComparison(
        case=case,
        reports=reports,
        lb_vs_ub=paired_ttest(acc[BandMode.LOWER_ONLY], acc[BandMode.UPPER_ONLY], alpha),
        lb_vs_both=paired_ttest(
            acc[BandMode.LOWER_ONLY], acc[BandMode.CONCATENATED], alpha
        ),
        alpha=alpha,
        fold_fingerprint=fingerprints.pop(),
    )


def metric_csv_rows(reports: dict[str, CvReport], case_value: int) -> list[tuple]:
    """Plot-ready rows: one per fold x band-mode x metric."""
    rows = []
    for band_label, report in reports.items():
        for fold, metric_set in enumerate(report.per_fold):
            for name, value in metric_set.values().items():
                rows.append((case_value, band_label, fold, name, value))
    return rows
