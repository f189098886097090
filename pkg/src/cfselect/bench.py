"""One-pass evaluation: precision/success curves, strategy comparison reports."""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .feature import center_error, iou
from .tracker import track_sequence

PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)  # px
SUCCESS_THRESHOLDS = np.arange(51) / 50.0  # overlap, step 0.02; exact at 0.6


def precision_curve(errors, thresholds=PRECISION_THRESHOLDS):
    """Fraction of frames whose center error is within each threshold."""
    errors = np.asarray(errors, dtype=np.float64)
    return (errors[None, :] <= thresholds[:, None]).mean(axis=1)


def success_curve(overlaps, thresholds=SUCCESS_THRESHOLDS):
    """Fraction of frames whose IOU reaches each threshold (ties count)."""
    overlaps = np.asarray(overlaps, dtype=np.float64)
    return (overlaps[None, :] >= thresholds[:, None]).mean(axis=1)


@dataclass
class OpeReport:
    precision: np.ndarray
    success: np.ndarray
    n_frames: int
    attributes: dict = field(default_factory=dict)  # event tag -> OpeReport

    def __post_init__(self):
        for name, curve in (("precision", self.precision), ("success", self.success)):
            if np.any(curve < 0) or np.any(curve > 1):
                raise ValueError(f"{name} curve leaves [0, 1]")
        if np.any(np.diff(self.precision) < 0):
            raise ValueError("precision curve decreases with the threshold")
        if np.any(np.diff(self.success) > 0):
            raise ValueError("success curve increases with the threshold")

    @property
    def dp20(self):
        return float(self.precision[20])

    @property
    def os06(self):
        return float(self.success[30])

    @property
    def auc(self):
        return float(self.success.mean())

    @classmethod
    def from_frames(cls, errors, overlaps, attributes=None):
        if len(errors) != len(overlaps) or len(errors) == 0:
            raise ValueError("need the same non-zero number of center errors and overlaps")
        return cls(precision_curve(errors), success_curve(overlaps), len(errors), attributes or {})


def _frame_scores(result, seq):
    if len(result.rects) != len(seq.ground_truth):
        raise ValueError(
            f"result has {len(result.rects)} rects but sequence {seq.name or '?'} has {len(seq.ground_truth)}"
        )
    errs = [center_error(p, g) for p, g in zip(result.rects, seq.ground_truth)]
    ious = [iou(p, g) for p, g in zip(result.rects, seq.ground_truth)]
    return errs, ious


def ope_metrics(results, sequences):
    """Pool every frame of every sequence into one report, plus one sub-report
    per event tag covering the sequences where that event occurs."""
    results, sequences = list(results), list(sequences)
    if len(results) != len(sequences):
        raise ValueError(f"{len(results)} results for {len(sequences)} sequences")
    scored = [_frame_scores(r, s) for r, s in zip(results, sequences)]
    errs = np.concatenate([e for e, _ in scored])
    ious = np.concatenate([o for _, o in scored])
    tags = sorted({tag for s in sequences for frame_tags in s.event_tags for tag in frame_tags})
    attributes = {}
    for tag in tags:
        idx = [i for i, s in enumerate(sequences) if any(tag in ft for ft in s.event_tags)]
        attributes[tag] = OpeReport.from_frames(
            np.concatenate([scored[i][0] for i in idx]), np.concatenate([scored[i][1] for i in idx])
        )
    return OpeReport.from_frames(errs, ious, attributes)


def mean_report(reports):
    """Average the curves of several reports (e.g. random_update over seeds)."""
    reports = list(reports)
    precision = np.mean([r.precision for r in reports], axis=0)
    success = np.mean([r.success for r in reports], axis=0)
    return OpeReport(precision, success, reports[0].n_frames)


def run_strategy(sequences, strategy, params=None, seed=0, dtype=np.float64):
    results = [
        track_sequence(seq, strategy=strategy, params=params, seed=seed + i, dtype=dtype)
        for i, seq in enumerate(sequences)
    ]
    return results, ope_metrics(results, sequences)


def compare_strategies(eval_set, checkpoints=None, seeds=(0,), baselines=("always_update", "random_update"),
                       dtype=np.float64):
    """Reports keyed by row label.

    ``checkpoints`` maps labels such as ``decision_k3`` to trained parameters;
    random_update is averaged over ``seeds``, deterministic strategies run once.
    """
    eval_set = list(eval_set)
    rows = {}
    for label, params in (checkpoints or {}).items():
        rows[label] = run_strategy(eval_set, "decision", params, dtype=dtype)[1]
    for strategy in baselines:
        if strategy == "random_update":
            rows[strategy] = mean_report(run_strategy(eval_set, strategy, seed=s)[1] for s in seeds)
        else:
            rows[strategy] = run_strategy(eval_set, strategy)[1]
    return rows


def _fmt(v):
    return f"{v:.6f}"


def write_reports(rows, out_dir, plots=True):
    """``comparison.csv`` plus per-strategy curve files; PNG figures alongside when ``plots``."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "comparison.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["strategy", "os_0.6", "dp_20", "auc"])
        for label, rep in rows.items():
            w.writerow([label, _fmt(rep.os06), _fmt(rep.dp20), _fmt(rep.auc)])
    for label, rep in rows.items():
        for kind, grid, curve in (("precision", PRECISION_THRESHOLDS, rep.precision),
                                  ("success", SUCCESS_THRESHOLDS, rep.success)):
            with open(os.path.join(out_dir, f"{kind}_{label}.csv"), "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["threshold", "value"])
                for th, v in zip(grid, curve):
                    w.writerow([f"{th:g}", _fmt(v)])
    if plots:
        plot_curves(rows, out_dir)


def plot_curves(rows, out_dir):
    """precision.png and success.png, one line per strategy."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    specs = (
        ("precision", PRECISION_THRESHOLDS, "location error threshold (px)", "precision", "dp20", "DP@20"),
        ("success", SUCCESS_THRESHOLDS, "overlap threshold", "success rate", "auc", "AUC"),
    )
    paths = []
    for kind, grid, xlabel, ylabel, stat, stat_name in specs:
        fig, ax = plt.subplots(figsize=(5.0, 3.8))
        for label, rep in rows.items():
            ax.plot(grid, getattr(rep, kind), label=f"{label} [{stat_name} {getattr(rep, stat):.3f}]")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_ylim(0, 1.02)
        ax.set_xlim(grid[0], grid[-1])
        ax.grid(alpha=0.3)
        ax.legend(loc="lower left" if kind == "success" else "lower right", fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{kind}.png")
        fig.savefig(path, dpi=120, metadata={"Software": None})
        plt.close(fig)
        paths.append(path)
    return paths
