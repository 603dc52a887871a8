"""Simple figures written straight to files (non-interactive backend)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def boxplot(groups: dict, path, *, title="", ylabel="") -> Path:
    """One box per key of ``groups`` (label -> sequence of values)."""
    fig, ax = plt.subplots(figsize=(max(4, 0.9 * len(groups) + 2), 4))
    ax.boxplot(list(groups.values()))
    ax.set_xticks(range(1, len(groups) + 1), list(groups.keys()), rotation=30, ha="right")
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    ax.axhline(0.0, color="grey", lw=0.6)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def line_chart(x, series: dict, path, *, title="", xlabel="", ylabel="", logy=False) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in series.items():
        ax.plot(x, y, label=str(label))
    if logy:
        ax.set_yscale("log")
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if len(series) > 1:
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def breach_grid_chart(rows, path, *, attacker="semi_trusted_owner", p=None) -> Path:
    """Iterations-to-breach against ``T``, one line per ``n`` (fixed ``p``)."""
    df = pd.DataFrame(rows)
    df = df[df["attacker"] == attacker]
    p = p if p is not None else int(df["p"].min())
    df = df[df["p"] == p]
    series = {}
    Ts = sorted(df["T"].unique())
    for n, g in df.groupby("n"):
        g = g.set_index("T").reindex(Ts)
        series[f"n={n}"] = g["k"].to_numpy(dtype=float)
    return line_chart(Ts, series, path, title=f"{attacker}, p={p}", xlabel="T",
                      ylabel="iterations to breach")
