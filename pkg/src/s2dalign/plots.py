"""Figure rendering for run directories: loss curves and ablation charts.

Every figure is a pure function of its delimited input (metrics.tsv or
table.tsv), and the numbers behind each figure are re-emitted as TSV next to
the image so the plots stay optional for downstream tooling.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .errors import MetricsError


def read_metrics(path: Path) -> list[tuple[int, int, str, float, float]]:
    path = Path(path)
    if not path.exists():
        raise MetricsError(f"no metrics file at {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != ["step", "stage", "split", "loss", "lr"]:
            raise MetricsError(f"unexpected metrics header {header} in {path}")
        for ln, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise MetricsError(f"{path}:{ln}: expected 5 columns, got {len(parts)}")
            step, stage, split, loss, lr = parts
            try:
                rows.append((int(step), int(stage), split, float(loss), float(lr)))
            except ValueError:
                raise MetricsError(f"{path}:{ln}: malformed row {line.rstrip()!r}") from None
    if not rows:
        raise MetricsError(f"metrics file {path} has no rows")
    return rows


def read_table(path: Path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.exists():
        raise MetricsError(f"no ablation table at {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if len(lines) < 2:
        raise MetricsError(f"ablation table {path} has no rows")
    header = lines[0].split("\t")
    return header, [line.split("\t") for line in lines[1:]]


def plot_loss_curves(metrics_path: Path, out_dir: Path) -> list[Path]:
    """One loss-curve figure per stage found in metrics.tsv, plus its TSV."""
    rows = read_metrics(metrics_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for stage in sorted({r[1] for r in rows}):
        train = [(r[0], r[3]) for r in rows if r[1] == stage and r[2] == "train"]
        val = [(r[0], r[3]) for r in rows if r[1] == stage and r[2] == "val"]
        fig, ax = plt.subplots(figsize=(6, 4))
        if train:
            ax.plot(*zip(*train), label="train", color="tab:blue", linewidth=1)
        if val:
            ax.plot(*zip(*val), label="val", color="tab:orange",
                    marker="o", markersize=3, linewidth=1)
        ax.set_xlabel("step")
        ax.set_ylabel("token loss (nats)")
        ax.set_title(f"stage {stage} loss")
        ax.legend()
        fig.tight_layout()
        img = out_dir / f"loss_stage{stage}.png"
        fig.savefig(img, dpi=120)
        plt.close(fig)
        tsv = out_dir / f"loss_stage{stage}.tsv"
        with open(tsv, "w", encoding="utf-8") as fh:
            fh.write("step\tsplit\tloss\n")
            for step, loss in train:
                fh.write(f"{step}\ttrain\t{loss:.6f}\n")
            for step, loss in val:
                fh.write(f"{step}\tval\t{loss:.6f}\n")
        written += [img, tsv]
    return written


def plot_ablation(table_path: Path, out_dir: Path) -> list[Path]:
    """Bar chart of per-variant means with sd whiskers, plus its TSV."""
    header, rows = read_table(table_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    idx = {name: i for i, name in enumerate(header)}
    metrics = ("bleu_1", "bleu_4", "rouge_l", "ce_f1")
    for m in metrics:
        if f"{m}_mean" not in idx:
            raise MetricsError(f"ablation table missing column {m}_mean")
    labels = [r[idx["variant"]] for r in rows]
    fig, ax = plt.subplots(figsize=(1.8 + 1.3 * len(labels), 4.2))
    width = 0.8 / len(metrics)
    for k, m in enumerate(metrics):
        means = [float(r[idx[f"{m}_mean"]]) for r in rows]
        sds = [float(r[idx[f"{m}_sd"]]) for r in rows]
        xs = [i + (k - (len(metrics) - 1) / 2) * width for i in range(len(labels))]
        ax.bar(xs, means, width=width, yerr=sds, capsize=2, label=m)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=20, ha="right")
    ax.set_ylabel("score")
    ax.set_title("ablation (mean over seeds, sd whiskers)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    img = out_dir / "ablation.png"
    fig.savefig(img, dpi=120)
    plt.close(fig)
    tsv = out_dir / "ablation.tsv"
    tsv.write_text(
        "\t".join(header) + "\n" + "\n".join("\t".join(r) for r in rows) + "\n",
        encoding="utf-8",
    )
    return [img, tsv]


def render_run(run_dir: Path, out_dir: Path | None = None) -> list[Path]:
    """Render everything available under a run directory."""
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "plots"
    written = plot_loss_curves(run_dir / "metrics.tsv", out_dir)
    table = run_dir / "table.tsv"
    if table.exists():
        written += plot_ablation(table, out_dir)
    return written
