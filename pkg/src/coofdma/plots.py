"""SVG figures for a run report. Needs matplotlib (the ``plots`` extra)."""
from __future__ import annotations

from pathlib import Path

_COLORS = {"RTS": "#d95f02", "CTS": "#7570b3", "ACK": "#999999", "DATA_SU": "#1b9e77",
           "DATA_MU": "#1b9e77", "CO_OFDMA": "#e7298a", "TRIGGER_WIRED": "#66a61e"}


def _pyplot():
    try:
        import matplotlib
    except ImportError as e:
        raise RuntimeError("plots need matplotlib: pip install 'artifact[plots]'") from e
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "coofdma"
    import matplotlib.pyplot as plt
    return plt


def cfo_figure(res, path: Path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for name in res.closed:
        s = res.series(name)
        ax.plot(s.time_s, s.true_hz / 1e3, label=name, lw=1)
    ax.axhline(0.35, ls=":", c="k", lw=0.8)
    ax.axhline(-0.35, ls=":", c="k", lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("CFO at carrier [kHz]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return path


def gantt_figure(metrics, path: Path) -> Path:
    plt = _pyplot()
    rows = sorted({f.tx_node for f in metrics.frames})
    fig, ax = plt.subplots(figsize=(8, 0.5 + 0.45 * len(rows)))
    for f in metrics.frames:
        y = rows.index(f.tx_node)
        ax.broken_barh([(f.start / 1e3, f.duration / 1e3)], (y - 0.35, 0.7),
                       facecolors=_COLORS[f.kind.value], edgecolor="k", lw=0.4,
                       hatch="//" if getattr(f, "collided", False) else None)
        if f.duration >= 20_000:
            ax.text((f.start + f.duration / 2) / 1e3, y, f.kind.value, ha="center",
                    va="center", fontsize=7)
    ax.set_yticks(range(len(rows)), rows)
    ax.set_xlabel("time [us]")
    ax.set_title(metrics.scheme)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return path


def render(rep, out: Path) -> list[Path]:
    files = []
    for key, m in rep.runs.items():
        files.append(gantt_figure(m, out / f"schedule_{key}.svg"))
    if rep.cfo is not None:
        files.append(cfo_figure(rep.cfo, out / "cfo.svg"))
    return files
