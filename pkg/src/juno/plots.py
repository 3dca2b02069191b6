"""Report figures written next to the JSON/TSV outputs."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 120,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "grid.linewidth": 0.5,
    "legend.fancybox": False,
    "legend.fontsize": 9,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

MARKERS = ["o", "s", "^", "D", "v"]


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training_log(log_rows, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ep = [r["epoch"] for r in log_rows]
        ax.plot(ep, [r["train_loss"] for r in log_rows], marker=MARKERS[0], label="train")
        ax.plot(ep, [r["val_loss"] for r in log_rows], marker=MARKERS[1], label="validation")
        ax.set_xlabel("epoch")
        ax.set_ylabel("triplet loss")
        ax.legend()
        return _save(fig, path)


def plot_eval(report, path):
    """Precision and F1 (percent) per k."""
    rows = report.rows()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = range(len(rows))
        ax.bar([i - 0.2 for i in x], [r[1] for r in rows], width=0.4, label="precision")
        ax.bar([i + 0.2 for i in x], [r[3] for r in rows], width=0.4, label="F1")
        ax.set_xticks(list(x), [f"@{r[0]}" for r in rows])
        ax.set_ylim(0, 100)
        ax.set_ylabel("%")
        ax.legend(loc="lower right")
        return _save(fig, path)


def plot_bench(rows, path):
    """Comparisons and latency per document against table size, log-log."""
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.6))
        n = [r.db_size for r in rows]
        a1.loglog(n, [r.comparisons_unpruned for r in rows], marker=MARKERS[0], label="no attention")
        a1.loglog(n, [r.comparisons_pruned for r in rows], marker=MARKERS[1], label="attention")
        a1.set_xlabel("tuples")
        a1.set_ylabel("comparisons / document")
        a1.legend()
        a2.loglog(n, [r.latency_unpruned_ms for r in rows], marker=MARKERS[0])
        a2.loglog(n, [r.latency_pruned_ms for r in rows], marker=MARKERS[1])
        a2.set_xlabel("tuples")
        a2.set_ylabel("latency / document (ms)")
        return _save(fig, path)


def plot_label_efficiency(curves: dict, path):
    """``curves`` maps a label (e.g. seed) to {size: F1}."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for k, (label, curve) in enumerate(sorted(curves.items())):
            sizes = sorted(curve)
            ax.plot(sizes, [100 * curve[s] for s in sizes], marker=MARKERS[k % len(MARKERS)],
                    label=str(label))
        ax.set_xlabel("training triplets")
        ax.set_ylabel("F1@1 (%)")
        ax.legend(title="seed")
        return _save(fig, path)
