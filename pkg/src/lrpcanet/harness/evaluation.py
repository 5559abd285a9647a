"""Evaluation, threshold/robustness sweeps, the classical baseline, and
per-stage decomposition dumps."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..metrics import CSV_COLUMNS, confusion, image_report, summarize
from ..model import model_forward
from ..nn import ShapeError
from ..rpca import RPCAConfig, rpca_solve
from ..scenes import NoiseSpec, Sample, add_noise
from .rawio import write_png8, write_raw
from .training import predict, stack

SUMMARY_ID = "__summary__"
GAUSSIAN_LEVELS = (0.0, 5.0, 10.0, 15.0, 20.0)  # variance, 0-255 scale
SALT_LEVELS = (0.0, 0.02, 0.04, 0.06, 0.08, 0.10)
PEPPER_PROB = 0.04
THRESHOLD_GRID = tuple(np.round(np.linspace(0.1, 0.9, 9), 10))
SWEEP_COLUMNS = ("protocol", "level", "miou", "f1", "pd", "fa", "auc")


@dataclass
class Evaluation:
    summary: object  # MetricReport
    reports: list
    scores: list


def sample_ids(samples):
    return [s.meta.get("id", f"{i:04d}") for i, s in enumerate(samples)]


def score_samples(scores, samples, threshold=0.5, match_radius=3.0):
    """Metrics of precomputed score maps (one per sample)."""
    if len(scores) != len(samples):
        raise ValueError(f"{len(scores)} score maps for {len(samples)} samples")
    reports = []
    for s, smp in zip(scores, samples):
        if s.shape != smp.mask.shape:
            raise ShapeError("evaluate", "score shape", smp.mask.shape, s.shape)
        reports.append(image_report(s, smp.mask, threshold, match_radius))
    summary = summarize(reports, scores, [smp.mask for smp in samples])
    return Evaluation(summary, reports, list(scores))


def model_scores(model, samples, batch_size=8):
    if not samples:
        return []
    x, _ = stack(samples, model.dtype)
    h, w = x.shape[-2:]
    if h < 3 or w < 3:
        raise ShapeError("evaluate", "image size", ">= 3x3", (h, w))
    p = predict(model, x, batch_size)
    return [p[i, 0].astype(np.float64) for i in range(len(p))]


def evaluate(model, samples, threshold=0.5, batch_size=8, csv_path=None, match_radius=3.0):
    ev = score_samples(model_scores(model, samples, batch_size), samples, threshold, match_radius)
    if csv_path is not None:
        write_report_csv(csv_path, ev, sample_ids(samples))
    return ev


def write_report_csv(path, ev, ids):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for i, r in zip(ids, ev.reports):
            w.writerow(r.csv_row(i))
        w.writerow(ev.summary.csv_row(SUMMARY_ID))


def threshold_sweep(scores, samples, thresholds=THRESHOLD_GRID):
    """``[(threshold, pooled ConfusionCounts)]`` for each threshold."""
    out = []
    for t in thresholds:
        c = confusion(scores[0] > t, samples[0].mask > 0)
        for s, smp in zip(scores[1:], samples[1:]):
            c = c + confusion(s > t, smp.mask > 0)
        out.append((float(t), c))
    return out


# -- classical baseline ----------------------------------------------------------

def baseline_scores(samples, config=None):
    """Per-image sparse component of ``rpca_solve``, scaled into [0, 1] by its
    maximum positive value (negative residue is clipped away)."""
    scores = []
    for smp in samples:
        T = rpca_solve(smp.image.astype(np.float64), config or RPCAConfig()).T
        peak = T.max()
        scores.append(np.clip(T / peak, 0, 1) if peak > 0 else np.zeros_like(T))
    return scores


def evaluate_baseline(samples, threshold=0.5, config=None, csv_path=None):
    ev = score_samples(baseline_scores(samples, config), samples, threshold)
    if csv_path is not None:
        write_report_csv(csv_path, ev, sample_ids(samples))
    return ev


# -- robustness ------------------------------------------------------------------

def noise_spec(protocol, level):
    if protocol == "gaussian":
        return NoiseSpec("gaussian", gaussian_variance=float(level))
    if protocol == "salt_pepper":
        # pepper is fixed; level 0 means a clean image
        return NoiseSpec("salt_pepper", salt_prob=float(level), pepper_prob=PEPPER_PROB if level > 0 else 0.0)
    raise ValueError(f"unknown protocol {protocol!r}")


def default_levels(protocol):
    grids = {"gaussian": GAUSSIAN_LEVELS, "salt_pepper": SALT_LEVELS}
    if protocol not in grids:
        raise ValueError(f"unknown protocol {protocol!r}")
    return grids[protocol]


def noisy_copy(samples, spec, seed):
    return [Sample(add_noise(s.image, spec, seed=seed + i), s.mask, s.meta) for i, s in enumerate(samples)]


def robustness_sweep(model, samples, protocol, levels=None, seed=0, threshold=0.5, csv_path=None):
    """One row ``(protocol, level, miou, f1, pd, fa, auc)`` per noise level."""
    levels = default_levels(protocol) if levels is None else tuple(levels)
    rows = []
    for level in levels:
        ev = evaluate(model, noisy_copy(samples, noise_spec(protocol, level), seed), threshold)
        s = ev.summary
        rows.append((protocol, float(level), s.miou, s.f1, s.pd, s.fa, s.auc))
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in rows:
                w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])
    return rows


# -- decomposition dumps ---------------------------------------------------------

COMPONENTS = ("B", "T", "N", "D")


def decompose(model, image, out_dir):
    """Dump every stage's B, T, N, D as ``.raw`` + ``.png`` and write
    ``manifest.csv``.  Returns the manifest rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    img = np.asarray(image)
    if img.ndim != 2:
        raise ShapeError("decompose", "image", "(H, W)", img.shape)
    model.eval()
    _, _, trace = model_forward(img[None, None].astype(model.dtype), model, keep_trace=True)
    rows = []
    for k, rec in enumerate(trace, 1):
        for name in COMPONENTS:
            plane = getattr(rec, name)[0, 0]
            stem = f"stage{k:02d}_{name}"
            write_raw(out / f"{stem}.raw", plane)
            write_png8(out / f"{stem}.png", plane)
            rows.append((k, name, f"{stem}.raw", f"{stem}.png"))
    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("stage", "component", "raw", "png"))
        w.writerows(rows)
    return rows
