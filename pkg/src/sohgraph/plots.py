"""SVG charts for reports and sweeps. Output is byte-stable for equal input."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .data_io import atomic_write_text  # noqa: E402


def _save_svg(fig, path) -> None:
    buf = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": "sohgraph", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())


def soh_chart(report, path) -> None:
    """Measured vs estimated SOH per online cycle."""
    g = [r.gamma for r in report.rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(g, [r.measured for r in report.rows], label="measured")
    ax.plot(g, [r.estimated for r in report.rows], "--", label="estimated")
    ax.set_xlabel("cycle")
    ax.set_ylabel("SOH")
    ax.set_title(f"RMSE {report.rmse:.4f}  MAE {report.mae:.4f}")
    ax.legend()
    fig.tight_layout()
    _save_svg(fig, path)


def sweep_chart(rows, path) -> None:
    """Online RMSE per candidate threshold; the discord-selected bar is highlighted."""
    rows = sorted(rows, key=lambda r: -r.v_ref)
    labels = [f"{r.v_ref:.2f}" + ("*" if r.selected else "") for r in rows]
    vals = [0.0 if r.error else r.rmse for r in rows]
    colors = ["tab:red" if r.selected else "tab:blue" for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(labels, vals, color=colors)
    ax.set_xlabel("threshold voltage [V]")
    ax.set_ylabel("online RMSE")
    fig.tight_layout()
    _save_svg(fig, path)


def loss_chart(history, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(range(1, len(history) + 1), history)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    fig.tight_layout()
    _save_svg(fig, path)


def profile_chart(series, mp, path) -> None:
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
    top.plot(series.values, lw=0.6)
    top.set_ylabel("voltage [V]")
    bottom.plot(mp.distances, lw=0.6, color="tab:orange")
    bottom.set_ylabel("profile")
    bottom.set_xlabel("time step")
    fig.tight_layout()
    _save_svg(fig, path)
