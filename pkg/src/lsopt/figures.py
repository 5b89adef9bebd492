"""Matplotlib rendering for run reports: convergence curves and designs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def history_figure(history, path):
    """Objective/Lagrangian and constraint/CFL curves over the iterations."""
    if not len(history):
        return None
    it = history.column("iteration")
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(it, history.column("J"), label="J", color="tab:blue")
    ax1.plot(it, history.column("L"), label="L", color="tab:orange", ls="--")
    ax1.set_ylabel("objective / Lagrangian")
    ax1.legend(loc="best")
    ax1.grid(alpha=0.3)
    C = np.array([r.C for r in history])
    for i in range(C.shape[1]):
        ax2.plot(it, C[:, i], label=f"C_{i+1}")
    ax2.axhline(0.0, color="k", lw=0.5)
    ax2.set_ylabel("constraints")
    ax2.set_xlabel("iteration")
    ax2b = ax2.twinx()
    ax2b.plot(it, history.column("gamma"), color="tab:red", alpha=0.5, label="gamma")
    ax2b.set_ylabel("CFL gamma", color="tab:red")
    ax2.legend(loc="best")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def design_figure(mesh, phi, path):
    """Filled material region (negative level set) on the node grid."""
    if mesh.dim != 2:
        return None
    nx, ny = mesh.el_size
    counts = (nx + 1, ny + 1)
    idx = [np.arange(counts[ax]) % mesh.node_counts[ax] for ax in range(2)]
    flat = (idx[1][:, None] * mesh.node_counts[0] + idx[0][None, :]).ravel()
    grid = np.asarray(phi)[flat].reshape(counts[1], counts[0])
    x = mesh.origin[0] + mesh.delta[0] * np.arange(counts[0])
    y = mesh.origin[1] + mesh.delta[1] * np.arange(counts[1])
    fig, ax = plt.subplots(figsize=(6, 6 * mesh.lengths[1] / mesh.lengths[0]))
    ax.contourf(x, y, grid, levels=[grid.min() - 1, 0.0], colors=["0.2"])
    ax.contour(x, y, grid, levels=[0.0], colors="k", linewidths=0.8)
    ax.set_aspect("equal")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
