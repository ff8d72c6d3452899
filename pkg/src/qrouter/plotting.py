"""Optional PNG figures written next to the CSV results (``--figures``)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _columns(rows):
    cols = {}
    for r in rows:
        for k, v in r.items():
            cols.setdefault(k, []).append(v)
    return cols


def render_figures(kind: str, summary: dict, rows: list[dict], out: Path, sweep: bool = False) -> list[Path]:
    """Render the figure that suits ``kind``; returns the files written."""
    out = Path(out)
    cols = _columns(rows)
    written = []
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if sweep:
        axes = summary["axes"]
        x = cols[axes[0]]
        numeric = [k for k, v in cols.items() if k not in axes and all(isinstance(e, (int, float)) for e in v)]
        for k in numeric:
            ax.plot(x, cols[k], "o-", label=k)
        ax.set_xlabel(axes[0])
        ax.legend(fontsize=7)
    elif kind == "chirality":
        for k in cols:
            if k.startswith("p_"):
                ax.plot(cols["t_ns"], cols[k], label=k[2:])
        ax.set_xlabel("t (ns)")
        ax.set_ylabel("population")
        ax.legend()
    elif kind == "oxebit_train":
        ax.plot(cols["epoch"], cols["reward_mean"], lw=0.8, label="mean")
        ax.plot(cols["epoch"], cols["value"], lw=0.8, label="V")
        ax.set_xlabel("epoch")
        ax.set_ylabel("reward")
        ax.legend()
    elif kind == "xeb":
        ax.plot(cols["depth"], cols["f_ref"], "o-", label="reference")
        ax.plot(cols["depth"], cols["f_gate"], "s--", label="interleaved")
        ax.set_xlabel("depth m")
        ax.set_ylabel("sequence fidelity")
        ax.legend()
    elif kind == "w_state":
        ax.bar(cols["qubit"], cols["population"])
        ax.set_xlabel("qubit")
        ax.set_ylabel("population")
    elif kind == "cswap_calibrate":
        ax.plot(cols["label"], cols["true_rad"], "o", label="true")
        ax.plot(cols["label"], cols["recovered_rad"], "x", label="recovered")
        ax.set_ylabel("phase (rad)")
        ax.legend()
    else:
        plt.close(fig)
        return written
    path = out / f"{kind}.png"
    _save(fig, path)
    written.append(path)
    return written
