"""Report figures rendered to files next to the delimited output.

All rendering uses the Agg backend so runs stay headless.  Each function
writes one PNG and returns the path it wrote.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_eigenvalue_decay",
    "plot_greedy_decay",
    "plot_sweep",
    "plot_surface",
    "plot_scenarios",
]

_DPI = 130


def plot_eigenvalue_decay(eigenvalues, path, n_kept=None):
    """Semilog plot of the initial-candidate Gramian spectrum."""
    lam = np.asarray(eigenvalues, dtype=float)
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    idx = np.arange(1, lam.size + 1)
    pos = lam > 0
    ax.semilogy(idx[pos], lam[pos], "o-", color="tab:blue")
    if np.any(~pos):
        ax.plot(idx[~pos], np.full(np.sum(~pos), np.nan))
    if n_kept is not None and 0 < n_kept < lam.size:
        ax.axvline(n_kept + 0.5, color="tab:red", ls="--", lw=1, label=f"kept {n_kept}")
        ax.legend(frameon=False)
    ax.set_xlabel("mode")
    ax.set_ylabel("eigenvalue")
    ax.set_title("Initial-value Gramian spectrum")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_greedy_decay(log, path, tol=None, label="estimator"):
    """Selected worst-case score per greedy iteration."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    if log:
        its = [e.iteration for e in log]
        est = [e.estimator for e in log]
        ax.semilogy(its, est, "o-", color="tab:blue", label=label)
    if tol is not None:
        ax.axhline(tol, color="tab:red", ls="--", lw=1, label="tolerance")
    ax.set_xlabel("iteration")
    ax.set_ylabel("selected maximum")
    ax.set_title("Evolution greedy decay")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_sweep(rows, path, truth: bool = False):
    """Estimator (and optional true error) across the correlation sweep.

    ``rows`` are dicts with keys rho, delta, delta1 and optionally
    true_error.
    """
    fig, ax = plt.subplots(figsize=(5.6, 3.8))
    rho = [r["rho"] for r in rows]
    ax.semilogy(rho, [r["delta"] for r in rows], "o-", label=r"estimator $\Delta$")
    ax.semilogy(rho, [r["delta1"] for r in rows], "s-", ms=4,
                label=r"evolution part $\Delta^1$")
    if truth and rows and "true_error" in rows[0]:
        ax.semilogy(rho, [r["true_error"] for r in rows], "k.--", label="true error")
    ax.set_xlabel(r"correlation $\rho$")
    ax.set_ylabel("error")
    ax.set_title("Certified error across the correlation range")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_surface(mesh, values, window, path, title=""):
    """Heat map of one time slice on the restriction window.

    ``values`` is a vector over interior degrees of freedom; it is scattered
    back onto the structured vertex grid, masked outside the window.
    """
    nx, ny = mesh.nx, mesh.ny
    grid_vals = np.full(((ny + 1), (nx + 1)), np.nan)
    interior = mesh.interior
    iy = interior // (nx + 1)
    ix = interior % (nx + 1)
    grid_vals[iy, ix] = values
    y_lines = mesh.y_lines
    nu_lines = mesh.nu_lines
    s_min, s_max, nu_min, nu_max = window
    yy, vv = np.meshgrid(y_lines, nu_lines)
    mask = (np.exp(yy) < s_min) | (np.exp(yy) > s_max) | (vv < nu_min) | (vv > nu_max)
    grid_vals[mask] = np.nan

    fig, ax = plt.subplots(figsize=(5.8, 3.8))
    pm = ax.pcolormesh(np.exp(y_lines), nu_lines, grid_vals, shading="nearest",
                       cmap="viridis")
    ax.set_xlim(max(s_min, np.exp(y_lines[0])), min(s_max, np.exp(y_lines[-1])))
    ax.set_ylim(max(nu_min, nu_lines[0]), min(nu_max, nu_lines[-1]))
    ax.set_xlabel("asset price S")
    ax.set_ylabel(r"volatility $\nu$")
    ax.set_title(title)
    fig.colorbar(pm, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path


def plot_scenarios(rows, path):
    """Bar chart of the training-set comparison errors (log scale)."""
    fig, ax = plt.subplots(figsize=(5.2, 3.6))
    labels = [
        f"{r.scenario}\nN0={r.span_used}, train {r.train_used}" for r in rows
    ]
    errs = [r.err_window for r in rows]
    ax.bar(range(len(rows)), errs, color="tab:blue")
    ax.set_yscale("log")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("windowed true error")
    ax.set_title("Training-set comparison")
    for x, (e, r) in enumerate(zip(errs, rows)):
        ax.text(x, e, f" N1={r.N1}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return path
