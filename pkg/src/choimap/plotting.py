"""Static figures of run outputs, rendered to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_diagnostics(diag: np.ndarray, path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    axes[0].semilogy(diag[:, 0], np.maximum(diag[:, 2], 1e-18))
    axes[0].set_xlabel("t (fs)")
    axes[0].set_ylabel("TP residual")
    axes[1].plot(diag[:, 0], diag[:, 3])
    axes[1].axhline(0.0, color="0.6", lw=0.8)
    axes[1].set_xlabel("t (fs)")
    axes[1].set_ylabel("min Choi eigenvalue")
    return _save(fig, path)


def plot_spectrum(spec, path, k: int = 6) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    for a in range(min(k, spec.eigenvalues.shape[1])):
        axes[0].plot(spec.times, spec.eigenvalues[:, a], label=rf"$\lambda_{a + 1}$")
    axes[0].set_xlabel("t (fs)")
    axes[0].set_ylabel("Choi eigenvalue")
    axes[0].legend(fontsize=7, ncol=2)
    axes[1].plot(spec.times, spec.entropy, label="S (bits)")
    axes[1].plot(spec.times, spec.effective_rank, label=r"$r_\mathrm{eff}$")
    axes[1].set_xlabel("t (fs)")
    axes[1].legend(fontsize=8)
    return _save(fig, path)


def plot_populations(curves: dict, path) -> Path:
    """``curves`` maps a label to ``(times, pops)``; one color per state."""
    fig, ax = plt.subplots(figsize=(6, 3.6))
    styles = ["-", "--", ":", "-."]
    for s, (label, (t, p)) in enumerate(curves.items()):
        p = np.asarray(p)
        for i in range(p.shape[1]):
            ax.plot(t, p[:, i], styles[s % len(styles)], color=f"C{i}",
                    label=f"{label} p{i + 1}" if p.shape[1] <= 4 or s == 0 else None)
    ax.set_xlabel("t (fs)")
    ax.set_ylabel("population")
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def plot_kernel_norms(rows: np.ndarray, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.6))
    labels = ["total", "pop-pop", "pop-coh", "coh-pop", "coh-coh"]
    for c in range(1, rows.shape[1]):
        ax.semilogy(rows[:, 0], np.maximum(rows[:, c], 1e-18), label=labels[c - 1])
    ax.set_xlabel("lag (fs)")
    ax.set_ylabel(r"$\|K_n\|_F$ (fs$^{-2}$)")
    ax.legend(fontsize=8)
    return _save(fig, path)
