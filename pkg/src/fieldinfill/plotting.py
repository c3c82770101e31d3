"""Report figures rendered to files (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "font.size": 9,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps the files byte-stable across runs
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def convergence(records, path, target_r2: float = 0.99, target_nrmse: float = 0.03) -> Path:
    """r2 and nRMSE per QoI against training-set size."""
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        qois = sorted({q for r in records for q in r.metrics})
        for q in qois:
            n = [r.n_train for r in records if q in r.metrics]
            ax1.plot(n, [1.0 - r.metrics[q]["r2"] for r in records if q in r.metrics], marker=".", label=q)
            ax2.plot(n, [r.metrics[q]["nrmse"] for r in records if q in r.metrics], marker=".", label=q)
        ax1.axhline(1.0 - target_r2, color="k", ls="--", lw=0.8)
        ax2.axhline(target_nrmse, color="k", ls="--", lw=0.8)
        ax1.set_yscale("log")
        ax2.set_yscale("log")
        ax1.set_xlabel("training samples")
        ax2.set_xlabel("training samples")
        ax1.set_ylabel("1 - r2")
        ax2.set_ylabel("nRMSE")
        ax1.legend()
        return _save(fig, path)


def epistemic_trace(records, path, qoi: str = "drag") -> Path:
    """Mean predictive std of the scalar GP and the field surrogate per iteration."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        it = [r.iteration for r in records]
        ax.plot(it, [r.mean_sigma_gp.get(qoi) for r in records], marker=".", label="scalar GP")
        pts = [(r.iteration, r.mean_sigma_field.get(qoi)) for r in records if r.mean_sigma_field.get(qoi) is not None]
        if pts:
            ax.plot(*zip(*pts), marker="s", ms=3, label="field surrogate")
        ax.set_yscale("log")
        ax.set_xlabel("infill iteration")
        ax.set_ylabel(f"mean std ({qoi})")
        ax.legend()
        return _save(fig, path)


def criterion_breakdown(records, path) -> Path:
    """Stacked criterion parts (before PDF weighting) per infill iteration."""
    rows = [r for r in records if r.criterion is not None]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if rows:
            it = np.array([r.iteration for r in rows])
            bottom = np.zeros(it.size)
            for key, label in (("sigma_gp_part", "GP std"), ("misfit_part", "misfit"), ("sigma_field_part", "field std")):
                vals = np.array([r.criterion[key] for r in rows])
                ax.bar(it, vals, bottom=bottom, label=label, width=0.8)
                bottom += vals
            ax.legend()
        ax.set_xlabel("infill iteration")
        ax.set_ylabel("criterion part")
        return _save(fig, path)


def field_error_map(nodes, errors, path) -> Path:
    """Predicted minus true field; ``errors`` is ``(p, n_cases)``."""
    nodes = np.asarray(nodes, dtype=float)
    errors = np.asarray(errors, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if nodes.shape[1] == 1:
            s = nodes[:, 0]
            for j in range(errors.shape[1]):
                ax.plot(s, errors[:, j], lw=0.6, color="C0", alpha=0.5)
            ax.set_xlabel("s")
            ax.set_ylabel("prediction - truth")
        else:
            rms = np.sqrt(np.mean(errors**2, axis=1))
            sc = ax.scatter(nodes[:, 0], nodes[:, 1], c=rms, s=12, cmap="viridis")
            fig.colorbar(sc, ax=ax, label="RMS error over test cases")
            ax.set_xlabel("s")
            ax.set_ylabel("t")
        return _save(fig, path)


def uq_band(nodes, mean, std, path) -> Path:
    """Field mean with a two-standard-deviation band along the first coordinate."""
    nodes = np.asarray(nodes, dtype=float)
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        if nodes.shape[1] > 1:
            # first row of a structured grid
            keep = nodes[:, 1] == nodes[:, 1].min()
            nodes, mean, std = nodes[keep], mean[keep], std[keep]
        s = nodes[:, 0]
        ax.fill_between(s, mean - 2 * std, mean + 2 * std, alpha=0.3, label="mean ± 2 std")
        ax.plot(s, mean, lw=1.0, label="mean")
        ax.set_xlabel("s")
        ax.set_ylabel("field")
        ax.legend()
        return _save(fig, path)
