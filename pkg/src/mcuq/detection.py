"""Desk-scale detection machinery.

Covers box geometry, sequential fusion of multi-pass detections into object
observations, COCO-style mAP over IoU thresholds 0.50:0.95, TP/FP labelling
for the calibration metrics, and a synthetic stochastic detector that stands
in for a trained vision model.

File formats (one record per line, no header):

* detection records: image_id, pass_index, x1, y1, x2, y2, p_1 .. p_C
* ground truth:      image_id, class_id, x1, y1, x2, y2
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import ScoredPrediction, entropy_for_mode
from .rng import substream

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * k, 2) for k in range(10))
RECALL_LEVELS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box {(self.x1, self.y1, self.x2, self.y2)}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass
class Detection:
    box: Box
    probs: np.ndarray
    pass_index: int
    image_id: int

    @property
    def confidence(self) -> float:
        return float(np.max(self.probs))

    @property
    def class_id(self) -> int:
        return int(np.argmax(self.probs))


@dataclass
class GroundTruth:
    box: Box
    class_id: int
    image_id: int


@dataclass
class ClusteredObservation:
    """A fused group of detections: running means of box and probabilities."""

    members: list[Detection]
    mean_box: Box
    mean_probs: np.ndarray
    image_id: int

    @property
    def support(self) -> int:
        return len(self.members)

    @property
    def confidence(self) -> float:
        return float(np.max(self.mean_probs))

    @property
    def class_id(self) -> int:
        return int(np.argmax(self.mean_probs))

    @property
    def box(self) -> Box:
        """The mean box stands in as the observation's box for matching."""
        return self.mean_box


def iou(a: Box, b: Box) -> float:
    """Intersection over union; disjoint boxes give 0."""
    ix1, iy1 = max(a.x1, b.x1), max(a.y1, b.y1)
    ix2, iy2 = min(a.x2, b.x2), min(a.y2, b.y2)
    iw, ih = ix2 - ix1, iy2 - iy1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


@dataclass
class BsasTraceEntry:
    detection_pos: int             # position in processing order
    cluster_index: int
    founded: bool
    iou_at_insert: float           # 1.0 for founders by convention
    mean_box_at_insert: Box


def bsas_cluster(dets: list[Detection], theta_iou: float = 0.5,
                 return_trace: bool = False):
    """Sequential single-pass fusion of one image's detections.

    Detections are visited in (pass_index, input-order) order.  Each one
    joins the first existing cluster whose running mean box overlaps it with
    IoU >= theta_iou and whose mean-probability argmax matches its own;
    otherwise it founds a new cluster.  Cluster means update incrementally,
    so identical input order always yields identical clusters.
    """
    image_ids = {d.image_id for d in dets}
    if len(image_ids) > 1:
        raise ValueError(f"detections span several images: {sorted(image_ids)}")
    order = sorted(range(len(dets)), key=lambda i: (dets[i].pass_index, i))
    clusters: list[ClusteredObservation] = []
    trace: list[BsasTraceEntry] = []
    for pos, i in enumerate(order):
        det = dets[i]
        placed = None
        overlap = 1.0
        for ci, cluster in enumerate(clusters):
            overlap_ci = iou(cluster.mean_box, det.box)
            if overlap_ci >= theta_iou and cluster.class_id == det.class_id:
                placed, overlap = ci, overlap_ci
                break
        if placed is None:
            cluster = ClusteredObservation(members=[det], mean_box=det.box,
                                           mean_probs=np.asarray(det.probs, dtype=np.float64).copy(),
                                           image_id=det.image_id)
            clusters.append(cluster)
            entry = BsasTraceEntry(pos, len(clusters) - 1, True, 1.0, det.box)
        else:
            cluster = clusters[placed]
            entry = BsasTraceEntry(pos, placed, False, overlap, cluster.mean_box)
            k = cluster.support
            cluster.members.append(det)
            cluster.mean_probs = (cluster.mean_probs * k + det.probs) / (k + 1)
            cluster.mean_box = Box(
                x1=(cluster.mean_box.x1 * k + det.box.x1) / (k + 1),
                y1=(cluster.mean_box.y1 * k + det.box.y1) / (k + 1),
                x2=(cluster.mean_box.x2 * k + det.box.x2) / (k + 1),
                y2=(cluster.mean_box.y2 * k + det.box.y2) / (k + 1))
        trace.append(entry)
    if return_trace:
        return clusters, trace
    return clusters


def cluster_all(dets: list[Detection], theta_iou: float = 0.5) -> list[ClusteredObservation]:
    """BSAS per image, images processed in sorted image_id order."""
    by_image: dict[int, list[Detection]] = {}
    for d in dets:
        by_image.setdefault(d.image_id, []).append(d)
    clusters: list[ClusteredObservation] = []
    for image_id in sorted(by_image):
        clusters.extend(bsas_cluster(by_image[image_id], theta_iou))
    return clusters


def _greedy_match(items, gts: list[GroundTruth], tau: float) -> list[bool]:
    """Confidence-descending greedy matching at IoU >= tau with class
    agreement, per image; returns a TP flag per item (items order kept)."""
    order = sorted(range(len(items)),
                   key=lambda i: -items[i].confidence)
    matched_gt: set[int] = set()
    is_tp = [False] * len(items)
    for i in order:
        item = items[i]
        best_j, best_iou = None, 0.0
        for j, gt in enumerate(gts):
            if j in matched_gt or gt.class_id != item.class_id \
                    or gt.image_id != item.image_id:
                continue
            overlap = iou(item.box, gt.box)
            if overlap >= tau and overlap > best_iou:
                best_j, best_iou = j, overlap
        if best_j is not None:
            matched_gt.add(best_j)
            is_tp[i] = True
    return is_tp


def average_precision(tp_flags: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from confidence-ordered TP flags."""
    if n_gt == 0:
        return 0.0
    if len(tp_flags) == 0:
        return 0.0
    tp_cum = np.cumsum(tp_flags)
    fp_cum = np.cumsum(1 - tp_flags)
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)
    ap = 0.0
    for r in RECALL_LEVELS:
        reachable = precision[recall >= r]
        ap += reachable.max() if reachable.size else 0.0
    return ap / len(RECALL_LEVELS)


def map_50_95(items, gts: list[GroundTruth], conf_threshold: float = 0.0) -> float:
    """COCO-style mean average precision over IoU thresholds 0.50:0.95.

    Detections below the confidence threshold are dropped first.  AP is
    averaged over every class with at least one ground truth and over the
    ten thresholds; detections of classes without ground truths are ignored.
    """
    if not gts:
        raise ValueError("no ground truths")
    if not 0.0 <= conf_threshold <= 1.0:
        raise ValueError("conf_threshold must be in [0, 1]")
    items = [it for it in items if it.confidence >= conf_threshold]
    classes = sorted({gt.class_id for gt in gts})
    ap_total = 0.0
    for cls in classes:
        cls_gts = [gt for gt in gts if gt.class_id == cls]
        cls_items = sorted((it for it in items if it.class_id == cls),
                           key=lambda it: -it.confidence)
        for tau in IOU_THRESHOLDS:
            flags = np.array(_greedy_match(cls_items, cls_gts, tau), dtype=np.float64)
            ap_total += average_precision(flags, len(cls_gts))
    return ap_total / (len(classes) * len(IOU_THRESHOLDS))


def label_tp_fp(items, gts: list[GroundTruth], tau: float = 0.5,
                mode: str = "softmax") -> list[ScoredPrediction]:
    """Score fused observations as TP/FP for the calibration metrics.

    Greedy confidence-descending matching at IoU >= tau with class
    agreement; matched observations are correct and carry the matched
    ground-truth class as true label.  Uncertainty is the mode-appropriate
    entropy of the mean probabilities.
    """
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must be in [0, 1]")
    items = list(items)
    is_tp = _greedy_match(items, gts, tau)
    preds = []
    for item, tp in zip(items, is_tp):
        probs = np.asarray(item.mean_probs if hasattr(item, "mean_probs")
                           else item.probs, dtype=np.float64)
        preds.append(ScoredPrediction(
            probs=probs, confidence=float(probs.max()), correct=tp,
            uncertainty=entropy_for_mode(probs, mode),
            true_label=item.class_id if tp else None))
    return preds


@dataclass
class NoiseSpec:
    """Knobs of the synthetic stochastic detector."""

    box_jitter: float = 0.0       # stddev of corner jitter, in coordinate units
    miss_prob: float = 0.0        # per-pass, per-object miss probability
    halluc_rate: float = 0.0      # Poisson rate of spurious boxes per pass
    sharpness: float = 0.9        # probability mass on the true class
    image_size: tuple[float, float] = (100.0, 100.0)

    def __post_init__(self):
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ValueError("miss_prob must be in [0, 1]")
        if self.halluc_rate < 0 or self.box_jitter < 0:
            raise ValueError("rates must be non-negative")
        if not 0.0 < self.sharpness <= 1.0:
            raise ValueError("sharpness must be in (0, 1]")


def _peaked_probs(true_class: int, n_classes: int, sharpness: float,
                  mode: str) -> np.ndarray:
    probs = np.full(n_classes, (1.0 - sharpness) / max(n_classes - 1, 1))
    probs[true_class] = sharpness
    if mode == "sigmoid":
        # independent per-class scores: confident on the true class only
        probs = np.full(n_classes, 1.0 - sharpness)
        probs[true_class] = sharpness
    return probs


def _jittered_box(box: Box, jitter: float, rng: np.random.Generator) -> Box:
    if jitter == 0.0:
        return box
    for _ in range(100):
        d = rng.normal(0.0, jitter, size=4)
        x1, y1 = box.x1 + d[0], box.y1 + d[1]
        x2, y2 = box.x2 + d[2], box.y2 + d[3]
        if x1 < x2 and y1 < y2:
            return Box(x1, y1, x2, y2)
    return box


def synth_detector(scene: list[GroundTruth], noise: NoiseSpec, T: int,
                   seed: int, n_classes: int,
                   mode: str = "softmax") -> list[Detection]:
    """Generate T passes of detections for one scene.

    Per pass and per object: with probability 1 - miss_prob emit a jittered
    copy of the ground-truth box with a probability vector peaked at the
    true class; then add Poisson(halluc_rate) spurious boxes with diffuse
    probability vectors.  Pass t draws from the (seed, "synth", t) stream.
    """
    dets: list[Detection] = []
    W, H = noise.image_size
    for t in range(T):
        rng = substream(seed, "synth", t)
        for gt in scene:
            if rng.random() < noise.miss_prob:
                continue
            box = _jittered_box(gt.box, noise.box_jitter, rng)
            probs = _peaked_probs(gt.class_id, n_classes, noise.sharpness, mode)
            dets.append(Detection(box=box, probs=probs, pass_index=t,
                                  image_id=gt.image_id))
        image_ids = sorted({gt.image_id for gt in scene})
        for image_id in image_ids:
            for _ in range(rng.poisson(noise.halluc_rate)):
                cx, cy = rng.uniform(0, W), rng.uniform(0, H)
                w, h = rng.uniform(2.0, W / 4), rng.uniform(2.0, H / 4)
                box = Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
                if mode == "sigmoid":
                    probs = rng.uniform(0.05, 0.5, n_classes)
                else:
                    probs = rng.dirichlet(np.full(n_classes, 2.0))
                dets.append(Detection(box=box, probs=probs, pass_index=t,
                                      image_id=image_id))
    return dets


def save_detections(dets: list[Detection], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for d in dets:
            w.writerow([d.image_id, d.pass_index,
                        repr(d.box.x1), repr(d.box.y1),
                        repr(d.box.x2), repr(d.box.y2)]
                       + [repr(float(p)) for p in d.probs])


def load_detections(path: str | Path) -> list[Detection]:
    dets = []
    with open(path, newline="") as f:
        for row in csv.reader(f):
            dets.append(Detection(
                box=Box(*(float(v) for v in row[2:6])),
                probs=np.array([float(v) for v in row[6:]]),
                pass_index=int(row[1]), image_id=int(row[0])))
    return dets


def save_ground_truths(gts: list[GroundTruth], path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for gt in gts:
            w.writerow([gt.image_id, gt.class_id, repr(gt.box.x1),
                        repr(gt.box.y1), repr(gt.box.x2), repr(gt.box.y2)])


def load_ground_truths(path: str | Path) -> list[GroundTruth]:
    gts = []
    with open(path, newline="") as f:
        for row in csv.reader(f):
            gts.append(GroundTruth(box=Box(*(float(v) for v in row[2:6])),
                                   class_id=int(row[1]),
                                   image_id=int(row[0])))
    return gts
