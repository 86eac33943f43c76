"""Matplotlib rendering for the report paths.

Every report-emitting command drops a PNG next to its delimited output.
Rendering is kept deliberately plain: fixed figure sizes, default
style, no timestamps, so reruns produce identical bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_DPI = 150


def _save(fig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_traces(path: str | Path, traces: list[list[float | None]], labels: list[str]) -> None:
    """Objective-versus-step curves, one line per fold."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for curve, label in zip(traces, labels):
        steps = range(1, len(curve) + 1)
        values = [v if v is not None else float("nan") for v in curve]
        ax.plot(steps, values, linewidth=1.2, label=label)
    ax.set_xlabel("training step")
    ax.set_ylabel("batch objective")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_importance(
    path: str | Path,
    names: list[str],
    importances: list[float],
    stds: list[float],
    top: int = 20,
) -> None:
    """Horizontal bars of the largest importance entries."""
    order = sorted(range(len(names)), key=lambda i: importances[i], reverse=True)[:top]
    order = order[::-1]
    fig, ax = plt.subplots(figsize=(7, max(2.5, 0.3 * len(order) + 1.2)))
    ax.barh(
        range(len(order)),
        [importances[i] for i in order],
        xerr=[stds[i] for i in order],
        color="tab:blue",
        height=0.7,
    )
    ax.set_yticks(range(len(order)))
    ax.set_yticklabels([names[i] for i in order], fontsize=8)
    ax.set_xlabel("importance (mean Spearman drop)")
    fig.tight_layout()
    _save(fig, path)


def render_univariate(
    path: str | Path, unit_scores: list[float], multivariate_score: float
) -> None:
    """Distribution of per-unit scores against the multivariate reference."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.hist(unit_scores, bins=min(30, max(5, len(unit_scores) // 2)), color="tab:blue", alpha=0.8)
    ax.axvline(multivariate_score, color="tab:orange", linewidth=2, label="multivariate")
    ax.set_xlabel("held-out pair Spearman")
    ax.set_ylabel("units")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_comparison(
    path: str | Path,
    labels: list[str],
    series: dict[str, list[float]],
) -> None:
    """Grouped bars, one group per compared item."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    n_groups = len(labels)
    n_series = max(len(series), 1)
    width = 0.8 / n_series
    for s, (name, values) in enumerate(sorted(series.items())):
        offsets = [g + (s - (n_series - 1) / 2) * width for g in range(n_groups)]
        ax.bar(offsets, values, width=width, label=name)
    ax.set_xticks(range(n_groups))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("value")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
