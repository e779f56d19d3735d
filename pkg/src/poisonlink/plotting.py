"""Deterministic SVG figures of experiment records.

Every plot averages over repetitions and draws one series per (receiver, arm).
SER axes are logarithmic; non-positive points are masked.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LABELS = {"deepsic": "DeepSIC", "meta_deepsic": "Meta-DeepSIC", "mlp": "Black-box DNN",
          "resnet": "ResNet"}
_COLORS = {"deepsic": "tab:blue", "meta_deepsic": "tab:orange", "mlp": "tab:green",
           "resnet": "tab:red"}
_RC = {"svg.hashsalt": "poisonlink", "svg.fonttype": "none", "path.simplify": False}


def _series_key(r):
    return (r.receiver, r.poisoned)


def _label(receiver, poisoned):
    return f"{LABELS.get(receiver, receiver)} ({'poisoned' if poisoned else 'clean'})"


def _grouped(records):
    groups = {}
    for r in records:
        groups.setdefault(_series_key(r), []).append(r)
    order = {name: i for i, name in enumerate(LABELS)}
    return sorted(groups.items(), key=lambda kv: (order.get(kv[0][0], 99), kv[0][0], kv[0][1]))


def _style(receiver, poisoned):
    return dict(color=_COLORS.get(receiver), linestyle="--" if poisoned else "-",
                marker="x" if poisoned else "o", markersize=3, linewidth=1.2)


def _save(fig, path):
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": "poisonlink"})
    plt.close(fig)
    Path(path).write_text(buf.getvalue())
    return Path(path)


def _require(records, what):
    if not records:
        raise ValueError(f"no records to plot for {what}")


def _finish(ax, title, xlabel):
    ax.set_yscale("log", nonpositive="mask")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("SER")
    ax.set_title(title)
    ax.grid(True, which="both", linewidth=0.3)
    handles, labels = ax.get_legend_handles_labels()
    ax.legend(handles, labels, fontsize=7)
    return labels


def plot_ser_vs_block(records, path, title="Cumulative SER vs block"):
    """Cumulative SER per block, averaged over repetitions. Returns legend labels."""
    _require(records, "SER vs block")
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for (recv, pois), recs in _grouped(records):
            cum = np.mean([r.ser_cum for r in recs], axis=0)
            ax.plot(np.arange(1, len(cum) + 1), cum, label=_label(recv, pois), **_style(recv, pois))
        labels = _finish(ax, title, "block index")
        _save(fig, path)
    return labels


def _final_vs(records, attr, path, title, xlabel):
    _require(records, title)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for (recv, pois), recs in _grouped(records):
            xs = sorted({getattr(r, attr) for r in recs})
            ys = [np.mean([r.final_ser for r in recs if getattr(r, attr) == x]) for x in xs]
            ax.plot(xs, ys, label=_label(recv, pois), **_style(recv, pois))
        labels = _finish(ax, title, xlabel)
        _save(fig, path)
    return labels


def plot_ser_vs_snr(records, path, title="Final SER vs SNR"):
    return _final_vs(records, "snr_db", path, title, "SNR [dB]")


def plot_ser_vs_pilot(records, path, title="Final SER vs pilot size"):
    return _final_vs(records, "l_pilot", path, title, "pilot size L_pilot")


def render(records, out_dir, name, plots=("ser_vs_block", "ser_vs_snr", "ser_vs_pilot"),
           block_snr=None, title=None):
    """Write the requested figures for ``records``; return the written paths."""
    _require(records, name)
    out_dir = Path(out_dir)
    title = title or name
    written = []
    snrs = sorted({r.snr_db for r in records})
    pilots = sorted({r.l_pilot for r in records})
    if "ser_vs_block" in plots:
        snr = float(block_snr) if block_snr is not None and float(block_snr) in snrs else snrs[-1]
        subset = [r for r in records if r.snr_db == snr and r.l_pilot == pilots[0]]
        path = out_dir / f"{name}_ser_vs_block.svg"
        plot_ser_vs_block(subset, path, f"{title}: SNR {snr:g} dB, L_pilot {pilots[0]}")
        written.append(path)
    if "ser_vs_snr" in plots:
        subset = [r for r in records if r.l_pilot == pilots[0]]
        path = out_dir / f"{name}_ser_vs_snr.svg"
        plot_ser_vs_snr(subset, path, f"{title}: L_pilot {pilots[0]}")
        written.append(path)
    if "ser_vs_pilot" in plots:
        snr = float(block_snr) if block_snr is not None and float(block_snr) in snrs else snrs[-1]
        subset = [r for r in records if r.snr_db == snr]
        path = out_dir / f"{name}_ser_vs_pilot.svg"
        plot_ser_vs_pilot(subset, path, f"{title}: SNR {snr:g} dB")
        written.append(path)
    return written
