"""Scalar quality measures: entropies, Brier score, ECE, AUARC, and
Pareto / ideal-point selection over configuration sweeps.

All functions here are pure and operate on immutable inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SUM_TOL = 1e-6


@dataclass
class ScoredPrediction:
    """One prediction with everything the calibration metrics need."""

    probs: np.ndarray
    confidence: float
    correct: bool
    uncertainty: float
    true_label: int | None = None


@dataclass
class ConfigPoint:
    """One cell of the hyperparameter grid."""

    method: str            # MCD | MCDB | MCSD
    drop_rate: float
    T: int
    conf_threshold: float
    adapted_blocks: str    # preset descriptor, e.g. "all", "first-half"

    def key(self) -> tuple:
        return (self.method, self.drop_rate, self.T, self.conf_threshold,
                self.adapted_blocks)


@dataclass
class EvalReport:
    """One row of metric results for one configuration point.

    For classification runs the ``map_50_95`` slot carries plain accuracy
    (both live in [0, 1] and fill the performance axis of the Pareto and
    ideal-point analyses).
    """

    map_50_95: float
    brier: float
    ece: float
    auarc: float
    mean_entropy: float
    config_echo: ConfigPoint | None = None


def shannon_entropy(probs: np.ndarray) -> float:
    """Entropy in bits of a distribution over classes; 0 log 0 = 0.

    Entries must be non-negative and sum to 1 within 1e-6 (the vector is
    renormalized inside that tolerance, rejected outside it).
    """
    p = np.asarray(probs, dtype=np.float64)
    if (p < 0).any():
        raise ValueError("negative probability entry")
    total = p.sum()
    if abs(total - 1.0) > SUM_TOL:
        raise ValueError(f"probabilities sum to {total}, not 1")
    if abs(total - 1.0) > 1e-13:
        # renormalizing a vector already within rounding error of 1 would
        # only perturb it
        p = p / total
    nz = p[p > 0]
    return float(-(nz * np.log2(nz)).sum())


def mean_binary_entropy(probs: np.ndarray) -> float:
    """Mean over classes of the binary entropy of each entry, in bits.

    Used for per-class sigmoid outputs, where entries are independent
    probabilities and do not sum to 1.
    """
    p = np.asarray(probs, dtype=np.float64)
    if ((p < 0) | (p > 1)).any():
        raise ValueError("entries must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log2(p), 0.0) \
            - np.where(p < 1, (1 - p) * np.log2(1 - p), 0.0)
    return float(h.mean())


def entropy_for_mode(probs: np.ndarray, mode: str) -> float:
    if mode == "softmax":
        return shannon_entropy(probs)
    return mean_binary_entropy(probs)


def brier(preds: list[ScoredPrediction]) -> float:
    """Mean squared error between probability vectors and one-hot labels,
    normalized by N * C."""
    if not preds:
        raise ValueError("empty prediction set")
    total = 0.0
    n_classes = len(preds[0].probs)
    for p in preds:
        if p.true_label is None:
            raise ValueError("brier needs a true label on every prediction")
        onehot = np.zeros(n_classes)
        onehot[p.true_label] = 1.0
        total += float(np.sum((np.asarray(p.probs) - onehot) ** 2))
    return total / (len(preds) * n_classes)


def ece(preds: list[ScoredPrediction], n_bins: int = 15) -> float:
    """Expected calibration error over equally spaced confidence bins.

    Bin m covers [(m-1)/M, m/M), with the last bin closed at 1.0; empty
    bins contribute nothing.
    """
    if not preds:
        raise ValueError("empty prediction set")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    conf = np.array([p.confidence for p in preds])
    correct = np.array([p.correct for p in preds], dtype=np.float64)
    if ((conf < 0) | (conf > 1)).any():
        raise ValueError("confidences must lie in [0, 1]")
    n = len(preds)
    total = 0.0
    for m in range(n_bins):
        lower, upper = m / n_bins, (m + 1) / n_bins
        if m < n_bins - 1:
            in_bin = (conf >= lower) & (conf < upper)
        else:
            in_bin = (conf >= lower) & (conf <= 1.0)
        count = int(in_bin.sum())
        if count == 0:
            continue
        acc = correct[in_bin].mean()
        avg_conf = conf[in_bin].mean()
        total += (count / n) * abs(acc - avg_conf)
    return float(total)


def accuracy_rejection_curve(preds: list[ScoredPrediction]) -> list[tuple[float, float]]:
    """(rejected fraction, accuracy of retained) pairs at every rejection
    step k/N for k = 0..N-1, rejecting most-uncertain first.

    Ties in uncertainty are broken by stable input order.
    """
    if not preds:
        raise ValueError("empty prediction set")
    n = len(preds)
    unc = np.array([p.uncertainty for p in preds])
    correct = np.array([p.correct for p in preds], dtype=np.float64)
    order = np.argsort(-unc, kind="stable")  # most uncertain first
    correct_by_rejection = correct[order]
    curve = []
    for k in range(n):
        retained = correct_by_rejection[k:]
        curve.append((k / n, float(retained.mean())))
    return curve


def auarc(preds: list[ScoredPrediction]) -> float:
    """Area under the accuracy-rejection curve (left Riemann sum over the
    N rejection steps; the all-rejected point is never evaluated)."""
    curve = accuracy_rejection_curve(preds)
    return float(sum(acc for _, acc in curve) / len(curve))


def ipp_distance(report: EvalReport) -> float:
    """Euclidean distance to the ideal point (performance 1, AUARC 1)."""
    return math.sqrt((1.0 - report.auarc) ** 2 + (1.0 - report.map_50_95) ** 2)


def ipp_select(points: list[tuple[ConfigPoint, EvalReport]]) -> ConfigPoint:
    """Configuration closest to the ideal performance point; ties go to the
    first occurrence in input order."""
    if not points:
        raise ValueError("empty point list")
    best_cfg, best_d = None, float("inf")
    for cfg, report in points:
        d = ipp_distance(report)
        if d < best_d:
            best_cfg, best_d = cfg, d
    return best_cfg


def pareto_front(points: list[tuple[ConfigPoint, EvalReport]]) -> list[tuple[ConfigPoint, EvalReport]]:
    """Points not dominated in (performance, AUARC): a point is dominated
    when another is at least as good in both coordinates and strictly
    better in one."""
    if not points:
        raise ValueError("empty point list")
    front = []
    for i, (cfg_i, rep_i) in enumerate(points):
        dominated = False
        for j, (_, rep_j) in enumerate(points):
            if j == i:
                continue
            if (rep_j.map_50_95 >= rep_i.map_50_95
                    and rep_j.auarc >= rep_i.auarc
                    and (rep_j.map_50_95 > rep_i.map_50_95
                         or rep_j.auarc > rep_i.auarc)):
                dominated = True
                break
        if not dominated:
            front.append((cfg_i, rep_i))
    return front


REPORT_COLUMNS = ["method", "drop_rate", "T", "conf_threshold",
                  "adapted_blocks", "map_50_95", "brier", "ece", "auarc",
                  "mean_entropy"]


def report_row(cfg: ConfigPoint, report: EvalReport) -> list[str]:
    return [cfg.method, repr(float(cfg.drop_rate)), str(cfg.T),
            repr(float(cfg.conf_threshold)), cfg.adapted_blocks,
            repr(float(report.map_50_95)), repr(float(report.brier)),
            repr(float(report.ece)), repr(float(report.auarc)),
            repr(float(report.mean_entropy))]


def save_reports(points: list[tuple[ConfigPoint, EvalReport]],
                 path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for cfg, report in points:
            w.writerow(report_row(cfg, report))


def load_reports(path: str | Path) -> list[tuple[ConfigPoint, EvalReport]]:
    points = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            cfg = ConfigPoint(method=row["method"],
                              drop_rate=float(row["drop_rate"]),
                              T=int(row["T"]),
                              conf_threshold=float(row["conf_threshold"]),
                              adapted_blocks=row["adapted_blocks"])
            rep = EvalReport(map_50_95=float(row["map_50_95"]),
                             brier=float(row["brier"]), ece=float(row["ece"]),
                             auarc=float(row["auarc"]),
                             mean_entropy=float(row["mean_entropy"]),
                             config_echo=cfg)
            points.append((cfg, rep))
    return points
