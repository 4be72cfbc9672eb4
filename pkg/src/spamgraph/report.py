"""Figure rendering for training logs and score files.

All figures go through the Agg backend so reports work headless; every figure
is written next to a delimited summary so downstream tooling can consume
either.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evalkit import auc, precision_recall_at_ratio, roc_points


def read_training_log(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def read_scores_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read a node,score,label,split CSV; returns (scores, labels, split_tags)."""
    scores, labels, splits = [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            scores.append(float(row["score"]))
            labels.append(int(row["label"]) if row["label"] != "" else -1)
            splits.append(int(row["split"]))
    return np.asarray(scores), np.asarray(labels), np.asarray(splits)


def write_scores_csv(path, scores, labels, split_tags) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "score", "label", "split"])
        for i, (s, y, t) in enumerate(zip(scores, labels, split_tags)):
            writer.writerow([i, f"{float(s):.8f}", "" if y < 0 else int(y), int(t)])


def plot_training_curves(log_rows: list[dict], out_path) -> None:
    epochs = [r["epoch"] for r in log_rows]
    losses = [r["train_loss"] for r in log_rows]
    aucs = [r["valid_auc"] for r in log_rows]
    fig, ax_loss = plt.subplots(figsize=(6, 4))
    ax_loss.plot(epochs, losses, color="tab:red", label="train loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss", color="tab:red")
    if any(a is not None for a in aucs):
        ax_auc = ax_loss.twinx()
        ax_auc.plot(epochs, aucs, color="tab:blue", label="valid AUC")
        ax_auc.set_ylabel("validation AUC", color="tab:blue")
        ax_auc.set_ylim(0.0, 1.05)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_roc(scores, labels, out_path) -> None:
    points = roc_points(scores, labels)
    fpr = [p[0] for p in points]
    tpr = [p[1] for p in points]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(fpr, tpr, color="tab:blue")
    ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"ROC (AUC = {auc(scores, labels):.4f})")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_score_histogram(scores, labels, out_path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    bins = np.linspace(0.0, 1.0, 41)
    ax.hist(scores[labels == 0], bins=bins, alpha=0.6, label="normal", color="tab:green")
    ax.hist(scores[labels == 1], bins=bins, alpha=0.6, label="spam", color="tab:red")
    ax.set_xlabel("spam probability")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def write_roc_csv(scores, labels, out_path) -> None:
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr"])
        for fpr, tpr in roc_points(scores, labels):
            writer.writerow([f"{fpr:.8f}", f"{tpr:.8f}"])


def render_report(out_dir, log_path=None, scores_path=None, ratio: float = 0.03) -> list[str]:
    """Render all applicable figures plus a summary CSV; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    summary_rows = []
    if log_path:
        rows = read_training_log(log_path)
        if rows:
            fig = out_dir / "training_curves.png"
            plot_training_curves(rows, fig)
            written.append(str(fig))
            final = rows[-1]
            summary_rows.append(("epochs_run", len(rows)))
            summary_rows.append(("final_train_loss", final["train_loss"]))
            summary_rows.append(("final_valid_auc", final["valid_auc"]))
    if scores_path:
        scores, labels, splits = read_scores_csv(scores_path)
        mask = labels >= 0
        if np.any(labels[mask] == 1) and np.any(labels[mask] == 0):
            roc_fig = out_dir / "roc_curve.png"
            plot_roc(scores[mask], labels[mask], roc_fig)
            written.append(str(roc_fig))
            hist_fig = out_dir / "score_histogram.png"
            plot_score_histogram(scores[mask], labels[mask], hist_fig)
            written.append(str(hist_fig))
            roc_csv = out_dir / "roc_points.csv"
            write_roc_csv(scores[mask], labels[mask], roc_csv)
            written.append(str(roc_csv))
            precision, recall = precision_recall_at_ratio(scores[mask], labels[mask], ratio)
            summary_rows.append(("auc", auc(scores[mask], labels[mask])))
            summary_rows.append(("precision_at_ratio", precision))
            summary_rows.append(("recall_at_ratio", recall))
            summary_rows.append(("ratio", ratio))
    summary = out_dir / "summary.csv"
    with open(summary, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(summary_rows)
    written.append(str(summary))
    return written
