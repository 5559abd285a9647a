from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lrpcanet.metrics import (
    CSV_COLUMNS, ConfusionCounts, LossConfig, confusion, connected_components, f1_from_counts,
    fidelity_loss, image_report, pixel_metrics, roc_auc, soft_iou_loss, summarize, target_pd,
    total_loss,
)


def bfs_components(mask):
    """Independent 8-connected labelling by breadth-first search."""
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    count = 0
    for i in range(h):
        for j in range(w):
            if mask[i, j] and not seen[i, j]:
                count += 1
                q = deque([(i, j)])
                seen[i, j] = True
                while q:
                    y, x = q.popleft()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            a, b = y + dy, x + dx
                            if 0 <= a < h and 0 <= b < w and mask[a, b] and not seen[a, b]:
                                seen[a, b] = True
                                q.append((a, b))
    return count


def square(shape, top, left, size):
    m = np.zeros(shape)
    m[top:top + size, left:left + size] = 1
    return m


# -- loss --------------------------------------------------------------------------

def test_soft_iou_perfect_and_empty():
    gt = square((8, 8), 2, 2, 3)
    relaxed = np.where(gt > 0, 1 - 1e-6, 1e-6)
    assert soft_iou_loss(relaxed, gt) == pytest.approx(0.0, abs=1e-4)
    assert soft_iou_loss(np.full((8, 8), 1e-9), gt) == pytest.approx(1.0, abs=1e-6)


def test_soft_iou_half_overlap():
    # two 4x4 squares sharing half their area: I = 8, U = 24
    gt = square((10, 10), 0, 0, 4)
    pred = square((10, 10), 0, 2, 4)
    assert soft_iou_loss(pred, gt) == pytest.approx(1 - 1 / 3, abs=1e-6)


def test_soft_iou_batch_mean():
    gt = np.stack([square((6, 6), 0, 0, 2), square((6, 6), 0, 0, 2)])
    pred = np.stack([gt[0], np.zeros((6, 6))])
    assert soft_iou_loss(pred, gt) == pytest.approx(0.5, abs=1e-6)


def test_soft_iou_gradient_finite_differences():
    rng = np.random.default_rng(0)
    pred = rng.uniform(0.05, 0.95, (2, 1, 5, 5))
    gt = (rng.random((2, 1, 5, 5)) > 0.6).astype(float)
    _, grad = soft_iou_loss(pred, gt, return_grad=True)
    h = 1e-6
    for idx in [(0, 0, 1, 1), (1, 0, 4, 2), (0, 0, 3, 0)]:
        p, m = pred.copy(), pred.copy()
        p[idx] += h
        m[idx] -= h
        num = (soft_iou_loss(p, gt) - soft_iou_loss(m, gt)) / (2 * h)
        assert grad[idx] == pytest.approx(num, rel=1e-6, abs=1e-9)


def test_fidelity_gradient():
    rng = np.random.default_rng(1)
    r, x = rng.random((2, 2, 1, 4, 4))
    loss, grad = fidelity_loss(r, x, return_grad=True)
    assert loss == pytest.approx(np.mean(np.sum((r - x) ** 2, axis=(1, 2, 3)) / 16))
    np.testing.assert_allclose(grad, 2 * (r - x) / 32)


def test_total_loss_arithmetic():
    # seg 0.4 from a constructed pair; fidelity 0.02 per pixel; eta 0.01
    gt = square((10, 10), 0, 0, 5)  # 25 px
    pred = square((10, 10), 0, 0, 5) * 0.6  # I = 15, U = 15 + 25 - 15 = 25 -> IoU 0.6
    recon = np.full((10, 10), np.sqrt(0.02))
    total, seg, fid = total_loss(pred, gt, recon, np.zeros((10, 10)), LossConfig(eta=0.01))
    assert seg == pytest.approx(0.4, abs=1e-6)
    assert fid == pytest.approx(0.02)
    assert total == pytest.approx(0.4002, abs=1e-6)


def test_total_loss_eta_zero_and_perfect():
    rng = np.random.default_rng(2)
    pred, gt, r, x = rng.random((4, 6, 6))
    total, seg, _ = total_loss(pred, gt > 0.5, r, x, LossConfig(eta=0.0))
    assert total == seg
    gt = square((6, 6), 1, 1, 2)
    total, _, _ = total_loss(np.where(gt > 0, 1 - 1e-9, 1e-9), gt, x, x)
    assert total == pytest.approx(0.0, abs=1e-6)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        soft_iou_loss(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        LossConfig(eta=-1)
    with pytest.raises(ValueError):
        LossConfig(binarize_threshold=1.0)


# -- pixel metrics -----------------------------------------------------------------

def test_pixel_metrics_identity_disjoint_empty():
    gt = square((10, 10), 0, 0, 3)
    assert pixel_metrics(gt, gt)[:3] == (1.0, 1.0, 0.0)
    pred = np.zeros((10, 10))
    pred[9, :] = 1
    gt = np.zeros((10, 10))
    gt[0, :] = 1
    miou, f1, fa, c = pixel_metrics(pred, gt)
    assert (miou, f1, fa) == (0.0, 0.0, 0.1)
    assert (c.tp, c.fp, c.fn, c.tn) == (0, 10, 10, 80)
    empty = np.zeros((4, 4))
    assert pixel_metrics(empty, empty)[:3] == (1.0, 1.0, 0.0)


def test_pixel_metrics_rejects_empty():
    with pytest.raises(ValueError):
        pixel_metrics(np.zeros((0, 3)), np.zeros((0, 3)))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 20))
def test_f1_matches_precision_recall(seed):
    rng = np.random.default_rng(seed)
    pred, gt = rng.random((2, 12, 12)) > rng.uniform(0.2, 0.8, 2)[:, None, None]
    c = confusion(pred, gt)
    assert c.total == 144
    if c.tp == 0:
        return
    p, r = c.tp / (c.tp + c.fp), c.tp / (c.tp + c.fn)
    assert f1_from_counts(c) == pytest.approx(2 * p * r / (p + r))


def test_fa_monotone_over_threshold_sweep():
    rng = np.random.default_rng(3)
    score = rng.random((32, 32))
    gt = rng.random((32, 32)) > 0.9
    fas = [pixel_metrics(score, gt, t)[2] for t in np.linspace(0.9, 0.1, 9)]
    assert all(b >= a for a, b in zip(fas, fas[1:]))


# -- components and Pd -------------------------------------------------------------

def test_component_examples():
    assert len(connected_components(square((6, 6), 1, 1, 3))[1]) == 1
    diag = np.zeros((4, 4))
    diag[0, 0] = diag[1, 1] = 1
    assert len(connected_components(diag)[1]) == 1
    two = square((8, 8), 0, 0, 2) + square((8, 8), 0, 4, 2)
    _, comps = connected_components(two)
    assert len(comps) == 2
    assert comps[0].centroid == (0.5, 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 20), st.floats(0.5, 0.9))
def test_components_match_bfs(seed, density):
    mask = np.random.default_rng(seed).random((12, 15)) > density
    assert len(connected_components(mask)[1]) == bfs_components(mask)


def test_pd_examples():
    gt = square((20, 20), 1, 1, 2) + square((20, 20), 8, 8, 2) + square((20, 20), 15, 15, 2)
    assert target_pd(gt, gt) == (1.0, 3, 3)
    assert target_pd(np.zeros_like(gt), gt) == (0.0, 0, 3)
    pred = square((20, 20), 1, 1, 2) + square((20, 20), 8, 8, 2)
    pd, matched, total = target_pd(pred, gt)
    assert (matched, total) == (2, 3) and pd == pytest.approx(2 / 3)
    assert target_pd(pred, np.zeros_like(gt)) == (1.0, 0, 0)


def test_pd_centroid_radius_and_one_to_one():
    gt = square((20, 20), 5, 5, 1)
    near = square((20, 20), 5, 7, 1)  # 2 px away, no overlap
    far = square((20, 20), 5, 12, 1)
    assert target_pd(near, gt)[0] == 1.0
    assert target_pd(far, gt)[0] == 0.0
    # one prediction cannot detect two adjacent targets
    gts = square((20, 20), 5, 5, 1) + square((20, 20), 5, 8, 1)
    assert target_pd(square((20, 20), 5, 6, 1), gts)[1] == 1


# -- ROC ---------------------------------------------------------------------------

def test_auc_examples():
    assert roc_auc(np.array([0.9, 0.8, 0.4, 0.3]), np.array([1, 0, 1, 0])) == pytest.approx(0.75)
    assert roc_auc(np.array([0.9, 0.8, 0.1]), np.array([1, 1, 0])) == 1.0
    assert roc_auc(np.full(10, 0.3), np.arange(10) % 2) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        roc_auc(np.array([0.1, 0.2]), np.array([1, 1]))


def test_auc_monotone_transform_invariance():
    rng = np.random.default_rng(5)
    for _ in range(20):
        s = rng.random((16, 16))
        gt = rng.random((16, 16)) > 0.8
        base = roc_auc(s, gt)
        assert roc_auc(s ** 3, gt) == pytest.approx(base, abs=1e-12)
        assert roc_auc(np.log(s + 1e-3) * 2 + 7, gt) == pytest.approx(base, abs=1e-12)


# -- reports -----------------------------------------------------------------------

def test_report_and_summary():
    gt = square((10, 10), 2, 2, 2)
    r1 = image_report(gt * 0.9, gt)
    r2 = image_report(np.zeros((10, 10)), gt)
    assert r1.miou == 1.0 and r2.miou == 0.0
    s = summarize([r1, r2], [gt * 0.9, np.zeros((10, 10))], [gt, gt])
    assert s.miou == 0.5 and s.pd == 0.5 and s.total_targets == 2
    assert s.counts == ConfusionCounts(4, 0, 4, 192)
    row = s.csv_row("__summary__")
    assert len(row) == len(CSV_COLUMNS) and row[0] == "__summary__"
    for v in (s.miou, s.f1, s.pd, s.fa, s.auc):
        assert 0 <= v <= 1


def test_report_without_targets_has_nan_auc():
    r = image_report(np.zeros((4, 4)), np.zeros((4, 4)))
    assert np.isnan(r.auc) and r.pd == 1.0 and r.miou == 1.0
