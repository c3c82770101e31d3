"""Surrogate-based uncertainty propagation by quasi-Monte Carlo."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .errors import ConfigurationError, StructuralError
from .sampling import InputSpace, sobol_sequence

PERCENTILES = (2.5, 50.0, 97.5)
CHUNK = 1024


@dataclass(frozen=True)
class ScalarStats:
    mean: float
    std: float
    p2_5: float
    p50: float
    p97_5: float
    n: int

    def to_dict(self) -> dict[str, float]:
        return {
            "mean": self.mean,
            "std": self.std,
            "p2.5": self.p2_5,
            "p50": self.p50,
            "p97.5": self.p97_5,
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScalarStats":
        return cls(d["mean"], d["std"], d["p2.5"], d["p50"], d["p97.5"], int(d["n"]))


@dataclass(eq=False)
class UqReport:
    """Scalar statistics, node-wise field moments and provenance."""

    scalars: dict[str, ScalarStats]
    field_mean: np.ndarray | None = None
    field_std: np.ndarray | None = None
    provenance: dict[str, Any] = field(default_factory=dict)

    def scalars_dict(self) -> dict[str, Any]:
        return {
            "scalars": {q: s.to_dict() for q, s in self.scalars.items()},
            "provenance": self.provenance,
        }


def _pairwise_sum(chunks: list[np.ndarray]) -> np.ndarray:
    # fixed reduction tree, independent of evaluation order
    while len(chunks) > 1:
        nxt = [chunks[i] + chunks[i + 1] for i in range(0, len(chunks) - 1, 2)]
        if len(chunks) % 2:
            nxt.append(chunks[-1])
        chunks = nxt
    return chunks[0]


def _moments(chunks: list[np.ndarray], n: int) -> tuple[np.ndarray, np.ndarray]:
    # accumulate relative to the first sample: constant data give exactly zero spread
    ref = chunks[0][0]
    shift = _pairwise_sum([(c - ref).sum(axis=0) for c in chunks]) / n
    ss = _pairwise_sum([((c - ref - shift) ** 2).sum(axis=0) for c in chunks])
    std = np.sqrt(ss / (n - 1))
    return ref + shift, std


def scalar_stats(values) -> ScalarStats:
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise ConfigurationError("need at least two samples")
    chunks = [v[i : i + CHUNK] for i in range(0, v.size, CHUNK)]
    mean, std = _moments(chunks, v.size)
    p = np.percentile(v, PERCENTILES, method="linear")
    return ScalarStats(float(mean), float(std), float(p[0]), float(p[1]), float(p[2]), int(v.size))


def qmc_inputs(space: InputSpace, n_qmc: int, seed: int) -> np.ndarray:
    """Normalized QMC points (digitally shifted Sobol mapped through the marginals)."""
    return space.probe_points(n_qmc, seed)


def propagate(
    scalars: Mapping[str, Any],
    space: InputSpace,
    field_mean: Callable[[np.ndarray], np.ndarray] | None = None,
    n_qmc: int = 10000,
    seed: int = 0,
    include_epistemic: bool = False,
    state_hash: str | None = None,
) -> UqReport:
    """Propagate the input distributions through fitted surrogates.

    Parameters
    ----------
    scalars : mapping
        Scalar predictors on normalized inputs; ``predict(z)`` returns an
        object with ``mean`` and ``std``.
    space : InputSpace
    field_mean : callable, optional
        Maps normalized inputs ``(m, d)`` to mean fields ``(m, p)``.
    n_qmc : int
        Number of quasi-random input samples (at least 100).
    seed : int
        Digital-shift seed of the Sobol points.
    include_epistemic : bool
        Add the surrogate's mean epistemic variance to the spread of the
        scalar means (in quadrature). Off by default: the statistics are
        those of the input (aleatory) uncertainty alone.
    """
    if n_qmc < 100:
        raise ConfigurationError("n_qmc must be at least 100")
    z = qmc_inputs(space, n_qmc, seed)
    blocks = [z[i : i + CHUNK] for i in range(0, n_qmc, CHUNK)]
    out: dict[str, ScalarStats] = {}
    for name, surrogate in scalars.items():
        preds = [surrogate.predict(b) for b in blocks]
        means = np.concatenate([np.asarray(p.mean, dtype=float) for p in preds])
        stats = scalar_stats(means)
        if include_epistemic:
            epi = float(np.mean(np.concatenate([np.asarray(p.std, dtype=float) ** 2 for p in preds])))
            std = math.sqrt(stats.std**2 + epi)
            stats = ScalarStats(stats.mean, std, stats.p2_5, stats.p50, stats.p97_5, stats.n)
        out[name] = stats
    fmean = fstd = None
    if field_mean is not None:
        chunks = [np.asarray(field_mean(b), dtype=float) for b in blocks]
        chunks = [c.reshape(c.shape[0], -1) for c in chunks]
        fmean, fstd = _moments(chunks, n_qmc)
    provenance = {
        "state_hash": state_hash,
        "n_qmc": n_qmc,
        "seed": seed,
        "include_epistemic": include_epistemic,
    }
    return UqReport(out, fmean, fstd, provenance)


def propagate_state(state, n_qmc: int = 10000, seed: int = 0, include_epistemic: bool = False) -> tuple[UqReport, Any]:
    """Propagate through the final surrogates of a campaign state.

    Scalars use the per-QoI GPs; the field map uses the first field of the
    field surrogate's mean prediction.
    """
    from .campaign import restore_surrogates

    campaign, surr = restore_surrogates(state)

    def first_field(z):
        return surr.predict_field(z)[..., 0]

    report = propagate(
        surr.gps,
        campaign.space,
        first_field if surr.field_model is not None else None,
        n_qmc,
        seed,
        include_epistemic,
        state.digest(),
    )
    return report, campaign.problem.mesh


def export_report(report: UqReport, out_dir, nodes=None) -> tuple[Path, Path | None]:
    """Write ``uq_scalars.json`` and, with field moments, ``uq_field.csv``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        jpath = out / "uq_scalars.json"
        jpath.write_text(json.dumps(report.scalars_dict(), indent=2, sort_keys=True))
    except OSError as exc:
        raise OSError(f"cannot write UQ report to {out}: {exc}") from exc
    if report.field_mean is None:
        return jpath, None
    p = report.field_mean.size
    if nodes is None:
        nodes = np.arange(p, dtype=float)[:, None]
    nodes = np.asarray(nodes, dtype=float)
    if nodes.shape[0] != p:
        raise StructuralError("node coordinates do not match the field size")
    nodes = nodes.reshape(p, -1)
    coord_names = ["s", "t", "u"][: nodes.shape[1]]
    cpath = out / "uq_field.csv"
    lo = report.field_mean - 2.0 * report.field_std
    hi = report.field_mean + 2.0 * report.field_std
    try:
        with cpath.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_index", *coord_names, "mean", "std", "mean_minus_2std", "mean_plus_2std"])
            for i in range(p):
                w.writerow([
                    i, *map(repr, nodes[i].tolist()),
                    repr(float(report.field_mean[i])), repr(float(report.field_std[i])),
                    repr(float(lo[i])), repr(float(hi[i])),
                ])
    except OSError as exc:
        raise OSError(f"cannot write {cpath}: {exc}") from exc
    return jpath, cpath


def load_scalars(path) -> dict[str, ScalarStats]:
    data = json.loads(Path(path).read_text())
    return {q: ScalarStats.from_dict(s) for q, s in data["scalars"].items()}
