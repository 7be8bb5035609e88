"""Optional figure rendering for harness results.

The canonical outputs are the delimited files written by the harness; these
helpers render matplotlib PNGs next to them when the CLI is invoked with
--plot. Everything uses the Agg backend, so no display is required.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .harness import SurfaceResult, SweepResult, TrainingTrace  # noqa: E402


def render_trace(trace: TrainingTrace, path) -> None:
    """Train/validation CE and spectral radius against the epoch index."""
    epochs = [r.epoch for r in trace.records]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(epochs, [r.train_ce for r in trace.records], label="train CE")
    ax1.plot(epochs, [r.valid_ce for r in trace.records], label="valid CE")
    ax1.set_ylabel("cross-entropy")
    ax1.legend()
    ax2.plot(epochs, [r.spectral_radius for r in trace.records], color="tab:red")
    ax2.set_ylabel("spectral radius of w_hh")
    ax2.set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_sweep(result: SweepResult, path) -> None:
    """Mean test CE with stddev bars against the swept value."""
    values = [r.value for r in result.rows]
    means = [r.mean_test_ce for r in result.rows]
    stds = [r.stddev for r in result.rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(values, means, yerr=stds, marker="o", capsize=3)
    ax.set_xlabel(result.axis)
    ax.set_ylabel("mean test CE")
    if result.axis in ("lambda", "sigma"):
        ax.set_xscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_surface(result: SurfaceResult, path) -> None:
    """Heat map of the single-unit loss over the (W, b) grid."""
    fig, ax = plt.subplots(figsize=(6, 5))
    mesh = ax.pcolormesh(result.w_values, result.b_values, result.loss,
                         shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label=f"loss (T={result.n_steps}, "
                                    f"z={result.target_z})")
    ax.set_xlabel("W")
    ax.set_ylabel("b")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
