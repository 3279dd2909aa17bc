"""Report figures written to files (Agg backend, reproducible PNG bytes)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .specfun import beta_pdf  # noqa: E402

_SAVE = {"dpi": 100, "metadata": {"Software": None}}
_STYLE = {"figure.figsize": (6.4, 4.2), "axes.grid": True, "grid.alpha": 0.3, "font.size": 9}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format="png", **_SAVE)
    plt.close(fig)


def plot_mrl(curves: dict, path) -> None:
    """Mean excess with its band for each channel; ``curves`` maps label to rows."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for label, (rows, suggested) in curves.items():
            if not rows:
                continue
            a = np.asarray(rows, dtype=float)
            line, = ax.plot(a[:, 0], a[:, 1], marker=".", label=label)
            ax.fill_between(a[:, 0], a[:, 1] - a[:, 2], a[:, 1] + a[:, 2], color=line.get_color(), alpha=0.2)
            if suggested is not None:
                ax.axvline(suggested, color=line.get_color(), ls="--", lw=0.8)
        ax.set_xlabel("threshold u [mW]")
        ax.set_ylabel("mean excess E[u - X | X < u]")
        ax.legend()
        _save(fig, path)


def plot_stability(curves: dict, path) -> None:
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(2, 1, sharex=False, figsize=(6.4, 6.0))
        for label, (rows, suggested) in curves.items():
            if not rows:
                continue
            a = np.asarray(rows, dtype=float)
            l1, = ax1.plot(a[:, 0], a[:, 1], marker=".", label=label)
            ax1.fill_between(a[:, 0], a[:, 1] - a[:, 3], a[:, 1] + a[:, 3], color=l1.get_color(), alpha=0.2)
            l2, = ax2.plot(a[:, 0], a[:, 2], marker=".", label=label)
            ax2.fill_between(a[:, 0], a[:, 2] - a[:, 4], a[:, 2] + a[:, 4], color=l2.get_color(), alpha=0.2)
            if suggested is not None:
                ax1.axvline(suggested, color=l1.get_color(), ls="--", lw=0.8)
                ax2.axvline(suggested, color=l2.get_color(), ls="--", lw=0.8)
        ax1.axhline(-0.5, color="k", ls=":", lw=0.8)
        ax1.set_ylabel("shape xi")
        ax2.set_ylabel("modified scale sigma + xi*u")
        ax2.set_xlabel("threshold u [mW]")
        ax1.legend()
        _save(fig, path)


def plot_pp_qq(diags: dict, path) -> None:
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 4.0))
        for label, fd in diags.items():
            if fd.pp_points.size:
                ax1.plot(fd.pp_points[:, 0], fd.pp_points[:, 1], ".", ms=2, label=label)
                ax2.plot(fd.qq_points[:, 0], fd.qq_points[:, 1], ".", ms=2, label=label)
        ax1.plot([0, 1], [0, 1], "k-", lw=0.8)
        lim = max([fd.qq_points.max() for fd in diags.values() if fd.qq_points.size] + [1e-12])
        ax2.plot([0, lim], [0, lim], "k-", lw=0.8)
        ax1.set_xlabel("empirical CDF")
        ax1.set_ylabel("GPD CDF")
        ax2.set_xlabel("empirical exceedance")
        ax2.set_ylabel("GPD quantile")
        ax1.legend()
        _save(fig, path)


def plot_angular(omega, fits: dict, path) -> None:
    """Histogram of angular samples against fitted Beta densities."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.hist(np.asarray(omega), bins=50, range=(0, 1), density=True, color="0.8", label="angular samples")
        w = np.linspace(0.005, 0.995, 199)
        for label, beta in fits.items():
            ax.plot(w, beta_pdf(w, beta), label=f"{label} Beta({beta.p:.3g}, {beta.q:.3g})")
        ax.set_xlabel("omega")
        ax.set_ylabel("density")
        ax.legend()
        _save(fig, path)


def plot_rates(rows, path) -> None:
    """Rate against target error probability; ``rows`` are dicts with
    ``eps``, ``rate_mevt``, ``rate_baseline`` and optional interval bounds."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        eps = np.array([r["eps"] for r in rows])
        order = np.argsort(eps)
        eps = eps[order]
        mevt = np.array([r["rate_mevt"] for r in rows])[order]
        base = np.array([r["rate_baseline"] for r in rows])[order]
        ax.plot(eps, mevt, "o-", label="tail model")
        ax.plot(eps, base, "s--", label="extrapolation baseline")
        if all("rate_lower" in r for r in rows):
            lo = np.array([r["rate_lower"] for r in rows])[order]
            hi = np.array([r["rate_upper"] for r in rows])[order]
            ax.fill_between(eps, lo, hi, alpha=0.2, label="rate interval")
        ax.set_xscale("log")
        ax.set_xlabel("target error probability")
        ax.set_ylabel("rate [bit/s/Hz]")
        ax.legend()
        _save(fig, path)
