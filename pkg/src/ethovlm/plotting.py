"""Grouped-bar F1 chart, one group per behavior class and one bar per config."""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .core import GOLD_CLASSES  # noqa: E402

if TYPE_CHECKING:
    from .evaluator import ReportEntry

# Fixed salt and no date so identical input renders identical bytes.
SVG_RC = {
    "svg.hashsalt": "ethovlm",
    "svg.fonttype": "none",
    "font.size": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

_MODE_SHORT = {"WholeVideo": "video", "SegmentVideo": "clip", "SegmentFrames": "frames"}


def config_label(config: Mapping, fallback: str = "") -> str:
    if not config:
        return fallback
    icl = "ICL" if config.get("icl_enabled") else "no ICL"
    mode = _MODE_SHORT.get(str(config.get("input_mode")), str(config.get("input_mode")))
    return f"{config.get('prompt_style')} / {icl} / {mode}"


def f1_comparison_chart(entries: Sequence["ReportEntry"], path: str | Path) -> Path:
    path = Path(path)
    n_cfg = len(entries)
    width = 0.8 / n_cfg
    cmap = plt.get_cmap("tab10" if n_cfg <= 10 else "tab20")
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(max(6.0, 0.5 * n_cfg + 5), 3.6))
        for j, entry in enumerate(entries):
            rep = entry.report
            xs = [i - 0.4 + width * (j + 0.5) for i in range(len(GOLD_CLASSES))]
            ys = [rep.per_class[c].f1 for c in GOLD_CLASSES]
            bars = ax.bar(xs, ys, width=width * 0.95, color=cmap(j % cmap.N),
                          label=config_label(rep.config, rep.config_id))
            for bar, y in zip(bars, ys):
                ax.text(bar.get_x() + bar.get_width() / 2, y + 0.01, f"{y:.2f}",
                        ha="center", va="bottom", fontsize=6)
        ax.set_xticks(range(len(GOLD_CLASSES)))
        ax.set_xticklabels([c.value for c in GOLD_CLASSES])
        ax.set_ylim(0, 1.1)
        ax.set_ylabel("F1")
        ax.set_title("Per-class F1 by configuration")
        ax.legend(fontsize=6, frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
