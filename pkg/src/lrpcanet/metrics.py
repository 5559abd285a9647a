"""Segmentation loss and detection metrics."""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

SOFT_IOU_EPS = 1e-6
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _check_same(op, a, b):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- loss ------------------------------------------------------------------------

@dataclass(frozen=True)
class LossConfig:
    eta: float = 0.01
    binarize_threshold: float = 0.5

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be non-negative, got {self.eta}")
        if not 0 < self.binarize_threshold < 1:
            raise ValueError("binarize_threshold must lie in (0, 1)")


def _per_image(a):
    return a.reshape(a.shape[0], -1) if a.ndim > 2 else a.reshape(1, -1)


def soft_iou_loss(pred, gt, return_grad=False):
    """``1 - mean_b  sum(p*g) / (sum p + sum g - sum(p*g) + eps)``.

    Leading axis is the batch (a 2-D input is treated as a single image).
    """
    _check_same("soft_iou_loss", pred, gt)
    p = _per_image(pred).astype(np.float64)
    g = _per_image(gt).astype(np.float64)
    inter = (p * g).sum(axis=1)
    union = p.sum(axis=1) + g.sum(axis=1) - inter + SOFT_IOU_EPS
    loss = 1.0 - float(np.mean(inter / union))
    if not return_grad:
        return loss
    nb = p.shape[0]
    # d(I/U)/dp = g/U - I (1 - g) / U^2
    d = -(g / union[:, None] - (inter / union ** 2)[:, None] * (1 - g)) / nb
    return loss, d.reshape(pred.shape)


def fidelity_loss(recon, image, return_grad=False):
    """Mean over the batch of ``||recon - image||_F^2 / M``, M = pixels per image."""
    _check_same("fidelity_loss", recon, image)
    diff = _per_image(recon).astype(np.float64) - _per_image(image)
    nb, npx = diff.shape
    loss = float(np.mean((diff ** 2).sum(axis=1) / npx))
    if not return_grad:
        return loss
    return loss, (2.0 * diff / (nb * npx)).reshape(recon.shape)


def total_loss(pred, gt, recon, image, config=LossConfig(), return_grad=False):
    """Returns ``(total, seg, fidelity)``; with ``return_grad`` also
    ``(dpred, drecon)``."""
    if return_grad:
        seg, dpred = soft_iou_loss(pred, gt, True)
        fid, drecon = fidelity_loss(recon, image, True)
        return (seg + config.eta * fid, seg, fid), (dpred, config.eta * drecon)
    seg = soft_iou_loss(pred, gt)
    fid = fidelity_loss(recon, image)
    return seg + config.eta * fid, seg, fid


# -- pixel metrics ---------------------------------------------------------------

@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)


def confusion(pred_mask, gt_mask):
    p = np.asarray(pred_mask, dtype=bool)
    g = np.asarray(gt_mask, dtype=bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    return ConfusionCounts(tp, fp, fn, p.size - tp - fp - fn)


def iou_from_counts(c):
    denom = c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else c.tp / denom


def f1_from_counts(c):
    denom = 2 * c.tp + c.fp + c.fn
    return 1.0 if denom == 0 else 2 * c.tp / denom


def pixel_metrics(pred, gt, threshold=0.5):
    """Binarise ``pred > threshold`` and return ``(miou, f1, fa, counts)``.

    IoU is over the single target class; empty prediction against empty ground
    truth scores 1.  ``fa`` is false-positive pixels over all pixels.
    """
    _check_same("pixel_metrics", pred, gt)
    if pred.size == 0:
        raise ValueError("pixel_metrics: empty image")
    counts = confusion(pred > threshold, gt > 0)
    return iou_from_counts(counts), f1_from_counts(counts), counts.fp / counts.total, counts


# -- target-level detection ------------------------------------------------------

@dataclass
class Component:
    label: int
    pixels: np.ndarray  # (k, 2) row/col indices
    centroid: tuple


def connected_components(mask):
    """8-connected components of a binary 2-D mask, in label order."""
    labels, n = ndimage.label(np.asarray(mask) > 0, structure=EIGHT_CONNECTED)
    comps = []
    for lab in range(1, n + 1):
        pix = np.argwhere(labels == lab)
        comps.append(Component(lab, pix, tuple(pix.mean(axis=0))))
    return labels, comps


def target_pd(pred_mask, gt_mask, match_radius=3.0):
    """Greedy one-to-one matching of predicted to ground-truth components.

    A pair is eligible if the components overlap or their centroids are within
    ``match_radius`` pixels; pairs are taken by descending overlap, then by
    ascending centroid distance.  Returns ``(pd, matched, total)``.
    """
    _check_same("target_pd", pred_mask, gt_mask)
    gt_labels, gts = connected_components(gt_mask)
    pr_labels, prs = connected_components(pred_mask)
    if not gts:
        return 1.0, 0, 0
    pairs = []
    for gi, g in enumerate(gts):
        hit = pr_labels[g.pixels[:, 0], g.pixels[:, 1]]
        for pj, p in enumerate(prs):
            overlap = int(np.count_nonzero(hit == p.label))
            dist = float(np.hypot(g.centroid[0] - p.centroid[0], g.centroid[1] - p.centroid[1]))
            if overlap > 0 or dist <= match_radius:
                pairs.append((-overlap, dist, gi, pj))
    pairs.sort()
    used_g, used_p = set(), set()
    for _, _, gi, pj in pairs:
        if gi in used_g or pj in used_p:
            continue
        used_g.add(gi)
        used_p.add(pj)
    matched = len(used_g)
    return matched / len(gts), matched, len(gts)


# -- ROC -------------------------------------------------------------------------

def roc_curve(scores, gt):
    """ROC points (fpr, tpr) from a sweep over every distinct score."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(gt).ravel() > 0
    npos = int(y.sum())
    nneg = y.size - npos
    if npos == 0 or nneg == 0:
        raise ValueError("roc_auc: ground truth must contain both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each run of tied scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    fpr = np.r_[0.0, fps / nneg]
    tpr = np.r_[0.0, tps / npos]
    return fpr, tpr


def roc_auc(scores, gt):
    fpr, tpr = roc_curve(scores, gt)
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))


# -- reports ---------------------------------------------------------------------

CSV_COLUMNS = ("image_id", "miou", "f1", "pd", "fa", "auc", "tp", "fp", "fn", "tn")


@dataclass
class MetricReport:
    miou: float
    f1: float
    pd: float
    fa: float
    auc: float
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)
    matched_targets: int = 0
    total_targets: int = 0
    predicted_components: int = 0

    def csv_row(self, image_id):
        c = self.counts
        return [image_id, repr(float(self.miou)), repr(float(self.f1)), repr(float(self.pd)),
                repr(float(self.fa)), repr(float(self.auc)), c.tp, c.fp, c.fn, c.tn]


def image_report(score, gt, threshold=0.5, match_radius=3.0):
    """Metrics of one score map in [0, 1] against a binary mask."""
    miou, f1, fa, counts = pixel_metrics(score, gt, threshold)
    pred_mask = score > threshold
    pd, matched, total = target_pd(pred_mask, gt, match_radius)
    try:
        auc = roc_auc(score, gt)
    except ValueError:
        auc = float("nan")
    npred = len(connected_components(pred_mask)[1])
    return MetricReport(miou, f1, pd, fa, auc, counts, matched, total, npred)


def summarize(reports, scores, gts):
    """Aggregate per-image reports.

    mIoU and F1 are means of the per-image values; Pd pools all targets; Fa pools
    all pixels; AUC is computed on the pooled pixels of ``scores``/``gts``.
    """
    counts = ConfusionCounts()
    for r in reports:
        counts = counts + r.counts
    matched = sum(r.matched_targets for r in reports)
    total = sum(r.total_targets for r in reports)
    pooled_s = np.concatenate([np.ravel(s) for s in scores])
    pooled_g = np.concatenate([np.ravel(g) for g in gts])
    try:
        auc = roc_auc(pooled_s, pooled_g)
    except ValueError:
        auc = float("nan")
    return MetricReport(
        miou=float(np.mean([r.miou for r in reports])),
        f1=float(np.mean([r.f1 for r in reports])),
        pd=1.0 if total == 0 else matched / total,
        fa=counts.fp / counts.total,
        auc=auc,
        counts=counts,
        matched_targets=matched,
        total_targets=total,
        predicted_components=sum(r.predicted_components for r in reports),
    )
