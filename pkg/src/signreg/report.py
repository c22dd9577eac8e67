"""Text table and SVG figure of log ratios, built from a results CSV only."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from .simulate import CellSummary, read_results, summarize


def trend(cells: list[CellSummary]) -> dict:
    """Spearman correlation of mean log ratio against rho within one (p, s) panel."""
    pts = [(c.rho, c.mean_log_ratio) for c in cells if np.isfinite(c.mean_log_ratio)]
    if len(pts) < 3:
        return {"spearman": None, "label": "too few points"}
    r = float(spearmanr([a for a, _ in pts], [b for _, b in pts]).statistic)
    if r < 0:
        label = "decreasing in rho"
    elif r > 0:
        label = "increasing in rho"
    else:
        label = "no monotone trend"
    return {"spearman": r, "label": label}


def panels(summary: list[CellSummary]) -> dict:
    out = {}
    for c in summary:
        out.setdefault((c.p, c.s), []).append(c)
    for v in out.values():
        v.sort(key=lambda c: c.rho)
    return out


def text_table(summary: list[CellSummary]) -> str:
    lines = [f"{'p':>5} {'s':>4} {'rho':>6} {'mean_log_ratio':>15} {'se':>10} {'reps':>5}  excluded"]
    for (p, s), cells in sorted(panels(summary).items()):
        for c in cells:
            exc = ",".join(f"{k}={v}" for k, v in sorted(c.excluded.items())) or "-"
            lines.append(f"{p:>5} {s:>4} {c.rho:>6.2f} {c.mean_log_ratio:>15.6f} "
                         f"{c.se:>10.6f} {c.count:>5}  {exc}")
        t = trend(cells)
        sp = "n/a" if t["spearman"] is None else f"{t['spearman']:.3f}"
        lines.append(f"{'':>5} {'':>4} trend: spearman={sp} ({t['label']})")
    return "\n".join(lines) + "\n"


def render_svg(summary: list[CellSummary], path, title: str = "") -> None:
    """One panel per (p, s): mean log ratio +- se against rho, zero line, trend label."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "signreg"
    groups = sorted(panels(summary).items())
    fig, axes = plt.subplots(1, max(len(groups), 1), figsize=(4.0 * max(len(groups), 1), 3.4),
                             squeeze=False)
    for ax, ((p, s), cells) in zip(axes[0], groups):
        rho = [c.rho for c in cells]
        ax.errorbar(rho, [c.mean_log_ratio for c in cells], yerr=[c.se for c in cells],
                    marker="o", capsize=3)
        ax.axhline(0.0, color="grey", lw=0.8, ls="--")
        ax.set_xticks(rho)
        ax.set_xticklabels([f"{r:g}" for r in rho], fontsize=7)
        ax.set_xlabel("rho")
        ax.set_ylabel("log(l1 err sign / l1 err lasso)")
        ax.set_title(f"p={p}, s={s}", fontsize=9)
        t = trend(cells)
        sp = "n/a" if t["spearman"] is None else f"{t['spearman']:.2f}"
        ax.text(0.02, 0.03, f"Spearman {sp}: {t['label']}", transform=ax.transAxes, fontsize=7)
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def build_report(csv_path, out_dir) -> dict:
    """Write ``report.txt`` and ``report.svg`` into ``out_dir``; return their paths and trends."""
    records = read_results(csv_path)
    summary = summarize(records)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = text_table(summary)
    (out_dir / "report.txt").write_text(table)
    models = sorted({r.model for r in records})
    render_svg(summary, out_dir / "report.svg", title=", ".join(models))
    return {
        "table": str(out_dir / "report.txt"),
        "svg": str(out_dir / "report.svg"),
        "trends": {f"p={p},s={s}": trend(c) for (p, s), c in sorted(panels(summary).items())},
    }
