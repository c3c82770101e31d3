"""Snapshot POD with Gaussian-process regression of the mode amplitudes (PODI)."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gp as gpmod
from .errors import StructuralError
from .gp import GpModel, GpSearch, PredictiveGaussian

logger = logging.getLogger(__name__)

DEFAULT_ENERGY = 0.9999


@dataclass(frozen=True, eq=False)
class PodBasis:
    """Mean field ``(p,)``, orthonormal modes ``(p, M)``, singular values ``(M,)``.

    ``energy_fractions[i]`` is the share of the total fluctuation energy held
    by the first ``i + 1`` modes.
    """

    mean_field: np.ndarray
    modes: np.ndarray
    singular_values: np.ndarray
    energy_fractions: np.ndarray

    @property
    def n_modes(self) -> int:
        return self.modes.shape[1]


def _as_matrix(snapshots) -> np.ndarray:
    a = np.asarray(snapshots, dtype=float)
    return a.reshape(a.shape[0], -1)


def compute_basis(snapshots, n_modes: int | None = None, energy: float = DEFAULT_ENERGY) -> PodBasis:
    """POD basis of mean-centered snapshots.

    Parameters
    ----------
    snapshots : array_like, shape (N, ...)
        One snapshot per row; trailing axes are flattened.
    n_modes : int, optional
        Keep exactly this many modes (capped at the numerical rank).
    energy : float
        Otherwise keep the fewest modes whose cumulative energy reaches it.
    """
    A = _as_matrix(snapshots)
    if A.shape[0] < 2:
        raise StructuralError("need at least two snapshots")
    if not np.all(np.isfinite(A)):
        raise StructuralError("snapshots contain non-finite values")
    mean = A.mean(axis=0)
    centered = A - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = (s[0] if s.size else 0.0) * max(A.shape) * np.finfo(float).eps
    rank = int(np.sum(s > tol)) if s.size and s[0] > 0 else 0
    if rank == 0:
        warnings.warn("all snapshots identical; basis has no modes", RuntimeWarning)
        p = A.shape[1]
        return PodBasis(mean, np.zeros((p, 0)), np.zeros(0), np.zeros(0))
    s, vt = s[:rank], vt[:rank]
    cumulative = np.cumsum(s**2) / np.sum(s**2)
    if n_modes is not None:
        m = min(int(n_modes), rank)
    else:
        m = int(np.searchsorted(cumulative, energy - 1e-12) + 1)
        m = min(m, rank)
    modes = vt[:m].T.copy()
    # sign convention: largest-magnitude entry positive
    pivot = np.argmax(np.abs(modes), axis=0)
    signs = np.sign(modes[pivot, np.arange(m)])
    modes *= signs
    return PodBasis(mean, modes, s[:m].copy(), cumulative[:m].copy())


def project(snapshot, basis: PodBasis) -> np.ndarray:
    """Mode amplitudes ``phi_i . (u - u0)``; accepts one snapshot or a stack."""
    u = np.asarray(snapshot, dtype=float)
    p = basis.mean_field.size
    single = u.size == p
    flat = u.reshape(-1, p) if not single else u.reshape(1, p)
    alpha = (flat - basis.mean_field) @ basis.modes
    return alpha[0] if single else alpha


def reconstruct(amplitudes, basis: PodBasis) -> np.ndarray:
    return basis.mean_field + np.asarray(amplitudes, dtype=float) @ basis.modes.T


@dataclass(frozen=True, eq=False)
class PodiModel:
    basis: PodBasis
    amplitude_gps: tuple[GpModel, ...]
    field_shape: tuple[int, ...]

    def predict_field(self, x):
        return predict_field(self, x)

    def scalar(self, weights) -> "PodiScalar":
        return PodiScalar(self, np.asarray(weights, dtype=float))


def fit_podi(
    inputs,
    snapshots,
    n_modes: int | None = None,
    energy: float = DEFAULT_ENERGY,
    search: GpSearch = GpSearch(),
    kernels: Sequence[dict] | None = None,
) -> PodiModel:
    """Fit a POD basis and one GP per mode amplitude.

    ``inputs`` are normalized to the unit hypercube. Mode ``i`` uses the
    search seed ``search.seed + i``. When ``kernels`` (a sequence of
    ``{"length_scales", "nugget", "signal_variance"}``) is supplied the GPs
    are conditioned with those hyperparameters instead of being re-fitted.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    S = np.asarray(snapshots, dtype=float)
    if S.shape[0] != X.shape[0]:
        raise StructuralError("inputs and snapshots are not aligned")
    field_shape = S.shape[1:]
    flat = S.reshape(S.shape[0], -1)
    order = np.lexsort(X.T[::-1])
    X, flat = X[order], flat[order]
    basis = compute_basis(flat, n_modes=n_modes, energy=energy)
    alpha = project(flat, basis).reshape(len(X), basis.n_modes)
    gps = []
    for i in range(basis.n_modes):
        if kernels is not None:
            k = kernels[i]
            gps.append(GpModel.condition(X, alpha[:, i], k["length_scales"], k["nugget"], k["signal_variance"]))
        else:
            gps.append(gpmod.fit(X, alpha[:, i], replace(search, seed=search.seed + i)))
    return PodiModel(basis, tuple(gps), field_shape)


def _amplitude_moments(model: PodiModel, xs: np.ndarray):
    mu = np.empty((xs.shape[0], model.basis.n_modes))
    var = np.empty_like(mu)
    for i, g in enumerate(model.amplitude_gps):
        pg = g.predict(xs)
        mu[:, i], var[:, i] = pg.mean, pg.variance
    return mu, var


def predict_field(model: PodiModel, x):
    """Field mean and variance; shapes ``(p,)`` for one input, ``(m, p)`` for a batch.

    Mode amplitudes are treated as independent Gaussians.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    mu, var = _amplitude_moments(model, xs)
    phi = model.basis.modes
    mean = model.basis.mean_field + mu @ phi.T
    fvar = var @ (phi**2).T
    if single:
        return mean[0], fvar[0]
    return mean, fvar


def predict_scalar(model: PodiModel, x, weights) -> PredictiveGaussian:
    """Predictive Gaussian of the linear functional ``sum(weights * field)``."""
    w = np.asarray(weights, dtype=float).ravel()
    if w.size != model.basis.mean_field.size:
        raise StructuralError("weights do not match the field size")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xs = np.atleast_2d(x)
    mu, var = _amplitude_moments(model, xs)
    wphi = model.basis.modes.T @ w
    mean = w @ model.basis.mean_field + mu @ wphi
    variance = var @ wphi**2
    if single:
        return PredictiveGaussian(float(mean[0]), float(variance[0]))
    return PredictiveGaussian(mean, variance)


@dataclass(frozen=True, eq=False)
class PodiScalar:
    """Adapter exposing ``predict`` for one scalar functional of a PODI model."""

    model: PodiModel
    weights: np.ndarray

    def predict(self, x) -> PredictiveGaussian:
        return predict_scalar(self.model, x, self.weights)


def export_basis_csv(basis: PodBasis, path) -> Path:
    """CSV with columns ``node_index, u0, phi_1 .. phi_M``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_index", "u0", *[f"phi_{i + 1}" for i in range(basis.n_modes)]])
        for k in range(basis.mean_field.size):
            w.writerow([k, repr(float(basis.mean_field[k])), *map(repr, basis.modes[k].tolist())])
    return path
