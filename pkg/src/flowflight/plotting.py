"""Matplotlib figures written straight to files (Agg backend)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .flow import flow_to_color  # noqa: E402

__all__ = [
    "plot_field",
    "plot_curves",
    "plot_trajectories",
    "plot_encoding",
    "plot_flow",
    "plot_metric_rows",
    "plot_latency",
]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_field(x, y, k, log_d, obstacle, v_dobs, v_quad, path):
    """Reshaping coefficient and reshaped log-distance over a plane grid."""
    fig, axes = plt.subplots(1, 2, figsize=(10, 4.4))
    for ax, data, title in ((axes[0], k, "reshaping coefficient k"), (axes[1], log_d, "reshaped log distance")):
        im = ax.pcolormesh(x, y, data, shading="auto", cmap="viridis")
        fig.colorbar(im, ax=ax)
        ax.set_aspect("equal")
        ax.set_title(title)
        ax.plot(*obstacle[:2], "wo", ms=6)
        rel = np.asarray(v_dobs) - np.asarray(v_quad)
        ax.arrow(obstacle[0], obstacle[1], v_dobs[0], v_dobs[1], color="r", width=0.02, length_includes_head=True)
        ax.arrow(obstacle[0], obstacle[1], rel[0], rel[1], color="w", width=0.02, length_includes_head=True)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
    return _save(fig, path)


def plot_curves(curves, path, keys=("mean_reward", "mean_r_v", "mean_r_j", "goal_rate")):
    steps = [c["env_steps"] for c in curves]
    fig, axes = plt.subplots(1, len(keys), figsize=(4 * len(keys), 3.2))
    for ax, key in zip(np.atleast_1d(axes), keys):
        ax.plot(steps, [c[key] for c in curves], lw=1.2)
        ax.set_title(key)
        ax.set_xlabel("environment steps")
        ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_trajectories(logs, path, max_logs=20):
    fig, ax = plt.subplots(figsize=(7, 5))
    colors = {"success": "tab:green", "crash": "tab:red"}
    for lg in logs[:max_logs]:
        pts = lg.positions()
        ax.plot(pts[:, 0], pts[:, 1], color=colors.get(lg.termination, "tab:gray"), lw=1)
        sc = lg.header["scenario"]
        ax.plot(*sc["goal"][:2], "k*", ms=6)
    if logs:
        sc = logs[0].header["scenario"]
        ax.set_xlim(*sc["field"]["x"])
        ax.set_ylim(*sc["field"]["y"])
        for ob in sc["obstacles"]:
            if ob["shape"] == "cylinder":
                ax.add_patch(plt.Circle(ob["center"], ob["radius"], color="0.6", alpha=0.5))
            else:
                c, h = ob["center"], ob["half_extents"]
                ax.add_patch(plt.Rectangle((c[0] - h[0], c[1] - h[1]), 2 * h[0], 2 * h[1], color="0.4", alpha=0.5))
    ax.set_aspect("equal")
    ax.set_title("trajectories (obstacles of the first trial at t=0)")
    return _save(fig, path)


def plot_encoding(gray, dmap, path):
    """Grayscale image and min-pooled distance map, azimuth horizontal."""
    fig, axes = plt.subplots(2, 1, figsize=(9, 4))
    axes[0].imshow(np.asarray(gray).T[::-1], cmap="gray", vmin=0, vmax=1, aspect="auto")
    axes[0].set_title("grayscale (d / d_max)")
    im = axes[1].imshow(np.asarray(dmap).T[::-1], cmap="magma", aspect="auto")
    axes[1].set_title("distance map [m]")
    fig.colorbar(im, ax=axes[1])
    for ax in axes:
        ax.set_xlabel("azimuth cell")
    return _save(fig, path)


def plot_flow(flow, path):
    """Color-coded ``(2, W, H)`` flow."""
    fig, ax = plt.subplots(figsize=(8, 2.2))
    ax.imshow(flow_to_color(flow), aspect="auto")
    ax.set_title("point flow")
    ax.set_xlabel("azimuth cell")
    return _save(fig, path)


def plot_metric_rows(labels, values, path, ylabel="success rate"):
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 3.2))
    ax.bar(range(len(labels)), [np.nan if v is None else v for v in values], color="tab:blue")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_ylabel(ylabel)
    ax.set_ylim(0, 1.05 if ylabel == "success rate" else None)
    return _save(fig, path)


def plot_latency(rows, path):
    n = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(n, [r[1] for r in rows], "o-", label="mean")
    ax.plot(n, [r[2] for r in rows], "s--", label="p95")
    ax.set_xlabel("points per scan")
    ax.set_ylabel("encode + flow + forward [ms]")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)
