"""CSV emission and figure rendering for the batch commands.

CSVs are the primary machine-readable outputs (UTF-8, header row, floats
formatted with %.12g so reruns are byte-stable).  Each report CSV gets a
companion PNG rendered with matplotlib's Agg backend; figures are
diagnostic companions, not primary outputs.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import IoError


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_csv(path, header, rows):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_trace_csv(path, trace):
    """Optimizer convergence rows: iteration,best_fitness,evaluations,elapsed_ms."""
    write_csv(path, ["iteration", "best_fitness", "evaluations", "elapsed_ms"],
              trace.rows())


def write_train_trace_csv(path, rows):
    write_csv(path, ["epoch", "mean_loss", "train_accuracy", "elapsed_ms"], rows)


def write_roc_csv(path, points, auc):
    """fpr,tpr rows followed by one summary row carrying the AUC."""
    rows = [(f"{fpr:.12g}", f"{tpr:.12g}") for fpr, tpr in points]
    rows.append(("auc", f"{auc:.12g}"))
    write_csv(path, ["fpr", "tpr"], rows)


def write_confusion_csv(path, matrix, class_names):
    header = ["true\\pred"] + list(class_names)
    rows = [
        [class_names[i]] + [int(v) for v in np.asarray(matrix)[i]]
        for i in range(len(class_names))
    ]
    write_csv(path, header, rows)


def write_metrics_csv(path, items):
    write_csv(path, ["metric", "value"], items)


def write_descriptor_csv(path, seq, names):
    """Descriptor sequence as rows (timestep, matrix, <one column per name>)."""
    per_step = seq.feature_size // len(names)
    rows = []
    for t in range(seq.timesteps):
        for d in range(per_step):
            block = seq.features[t][d * len(names) : (d + 1) * len(names)]
            rows.append([t, d] + [float(v) for v in block])
    write_csv(path, ["timestep", "matrix"] + list(names), rows)


def write_config(path, mapping):
    """Resolved key=value run configuration, one pair per line."""
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for key in sorted(mapping):
                fh.write(f"{key}={mapping[key]}\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_convergence(trace, path, title="Threshold search convergence"):
    rows = trace.rows()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r[0] for r in rows], [r[1] for r in rows], lw=1.5)
    ax.set_xlabel("iteration")
    ax.set_ylabel("best fitness")
    ax.set_title(title)
    _save(fig, path)


def fig_training(rows, path):
    epochs = [r[0] for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(epochs, [r[1] for r in rows], lw=1.5)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("mean loss")
    ax2.plot(epochs, [r[2] for r in rows], lw=1.5, color="tab:green")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("train accuracy")
    ax2.set_ylim(0, 1.05)
    _save(fig, path)


def fig_roc(curves, path):
    """curves: {class name: (points, auc)}."""
    fig, ax = plt.subplots(figsize=(5.5, 5))
    for name, (points, auc) in curves.items():
        ax.plot([p[0] for p in points], [p[1] for p in points],
                label=f"{name} (AUC {auc:.3f})", lw=1.5)
    ax.plot([0, 1], [0, 1], ls="--", color="gray", lw=0.8)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(loc="lower right")
    _save(fig, path)


def fig_bench(rows, path):
    """rows: (hist, m, method, repeat, fitness, evaluations, elapsed_ms)."""
    methods = sorted({r[2] for r in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in methods:
        ms = sorted({r[1] for r in rows if r[2] == method})
        means = [
            np.mean([r[6] for r in rows if r[2] == method and r[1] == m])
            for m in ms
        ]
        ax.plot(ms, means, marker="o", label=method)
    ax.set_xlabel("threshold count m")
    ax.set_ylabel("mean time (ms)")
    ax.set_yscale("log")
    ax.legend()
    _save(fig, path)
