"""Figure rendering for the command-line reports.

Every function takes plain arrays plus an output path and writes one PNG;
the CLI calls these right after writing the corresponding CSV so each data
product ships with a quick-look figure.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_CLASS_COLORS = {
    "regular": "tab:blue",
    "mildly_chaotic": "tab:orange",
    "chaotic": "tab:red",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_trace(times, positions, densities, running_mean, rates, path):
    """Trajectory coordinates, density and exponent estimate along one orbit."""
    fig, axes = plt.subplots(3, 1, figsize=(8, 9), sharex=True)
    for i, label in enumerate("xyz"):
        axes[0].plot(times, positions[:, i], lw=0.8, label=label)
    axes[0].set_ylabel("position (a.u.)")
    axes[0].legend(loc="upper right", fontsize=8)
    axes[1].plot(times, densities, lw=0.8, color="tab:green")
    axes[1].set_yscale("log")
    axes[1].set_ylabel(r"$\rho$ along orbit")
    axes[2].plot(times, rates, ".", ms=2, color="0.6", label="interval rate")
    axes[2].plot(times, running_mean, lw=1.2, color="tab:red", label="running mean")
    axes[2].set_xlabel("t (a.u.)")
    axes[2].set_ylabel(r"$\lambda_1(t)$")
    axes[2].legend(loc="upper right", fontsize=8)
    return _save(fig, path)


def plot_exponent_series(times, lambdas, path):
    """The three exponents and their sum versus time."""
    fig, ax = plt.subplots(figsize=(8, 5))
    for i in range(3):
        ax.plot(times, lambdas[:, i], lw=0.9, label=rf"$\lambda_{i + 1}$")
    ax.plot(times, lambdas.sum(axis=1), "--", lw=1.2, color="k", label="sum")
    ax.axhline(0.0, color="0.8", lw=0.5)
    ax.set_xlabel("t (a.u.)")
    ax.set_ylabel("finite-time exponents")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_convergence(times, lambda1, window, kind, path):
    """lambda1(t) and lambda1(t)*t with the classification window shaded."""
    fig, axes = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
    axes[0].plot(times, lambda1, lw=0.9)
    axes[0].set_ylabel(r"$\lambda_1(t)$")
    axes[1].plot(times, lambda1 * times, lw=0.9)
    axes[1].set_ylabel(r"$\lambda_1(t)\,t$")
    axes[1].set_xlabel("t (a.u.)")
    for ax in axes:
        ax.axvspan(window[0], window[1], color="tab:orange", alpha=0.15)
    axes[0].set_title(f"verdict: {kind}")
    return _save(fig, path)


def plot_classification_map(rows, axis_labels, path):
    """Scatter of slab-projected start points colored by chaos class."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for cls, color in _CLASS_COLORS.items():
        pts = np.array([(a, b) for a, b, c in rows if c == cls]).reshape(-1, 2)
        if pts.size:
            ax.plot(pts[:, 0], pts[:, 1], "o", ms=3, color=color, label=cls)
    ax.set_xlabel(axis_labels[0])
    ax.set_ylabel(axis_labels[1])
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_histogram(values, path, mean=None, sigma=None):
    """Histogram of repeated exponent evaluations."""
    fig, ax = plt.subplots(figsize=(7, 5))
    ax.hist(values, bins=20, color="tab:blue", alpha=0.8)
    if mean is not None:
        ax.axvline(mean, color="k", lw=1.0)
        title = f"mean = {mean:.4g}"
        if sigma is not None:
            title += f", sigma = {sigma:.2g}"
        ax.set_title(title)
    ax.set_xlabel(r"$\lambda_1$")
    ax.set_ylabel("count")
    return _save(fig, path)


def plot_density_check(times, rho_direct, rho_reconstructed, path):
    """Density along an orbit: direct evaluation vs exponent-sum route."""
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(times, rho_direct, lw=1.0, label="from the packet")
    ax.plot(times, rho_reconstructed, "--", lw=1.0, label="from exponent sums")
    ax.set_yscale("log")
    ax.set_xlabel("t (a.u.)")
    ax.set_ylabel(r"$\rho(r(t), t)$")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_separation(times, separation, path, window=None):
    """Distance between twin trajectories of slightly different packets."""
    fig, ax = plt.subplots(figsize=(8, 5))
    positive = separation > 0
    ax.plot(times[positive], separation[positive], lw=0.9)
    ax.set_yscale("log")
    if window is not None:
        ax.axvspan(window[0], window[1], color="tab:orange", alpha=0.15)
    ax.set_xlabel("t (a.u.)")
    ax.set_ylabel(r"$\|r(t) - r'(t)\|$")
    return _save(fig, path)
