"""Ordinary kriging: constant trend, squared-exponential correlation.

Hyperparameters are the anisotropic length scales; the trend coefficient and
the process variance are profiled out of the likelihood in closed form.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import linalg
from scipy.linalg import lapack

from .errors import FitError, IllConditionedError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_NUGGET = 1e-12
MAX_NUGGET = 1e-6
_SIGMA2_FLOOR = 1e-300
_EXP_CUTOFF = 40.0


@dataclass(frozen=True)
class KernelConfig:
    length_scales: np.ndarray
    signal_variance: float = 1.0
    nugget: float = DEFAULT_NUGGET

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", theta)
        if np.any(~(theta > 0)):
            raise ValueError("length scales must be positive")
        if not self.signal_variance > 0:
            raise ValueError("signal variance must be positive")
        if self.nugget < 0:
            raise ValueError("nugget must be non-negative")


@dataclass(frozen=True)
class PredictiveGaussian:
    """Scalar predictive distribution; fields may be arrays for batches."""

    mean: Any
    variance: Any

    @property
    def std(self):
        return np.sqrt(np.maximum(self.variance, 0.0))


def _sq_dist(x1: np.ndarray, x2: np.ndarray, theta: np.ndarray) -> np.ndarray:
    out = np.zeros((x1.shape[0], x2.shape[0]))
    for k in range(x1.shape[1]):
        diff = np.subtract.outer(x1[:, k], x2[:, k])
        diff /= theta[k]
        diff *= diff
        out += diff
    return out


def kernel_eval(x1, x2, config: KernelConfig):
    """Correlation ``exp(-sum(((x1 - x2) / theta)**2))``."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    return float(np.exp(-np.sum(((x1 - x2) / config.length_scales) ** 2)))


def correlation_matrix(x1, x2, length_scales) -> np.ndarray:
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    return np.exp(-_sq_dist(x1, x2, np.asarray(length_scales, dtype=float)))


def _cholesky_escalating(corr: np.ndarray, nugget: float):
    """Cholesky of ``corr + nugget*I``, raising the nugget a decade at a time."""
    n = corr.shape[0]
    eye = np.eye(n)
    current = nugget
    while True:
        try:
            return np.linalg.cholesky(corr + current * eye), current
        except np.linalg.LinAlgError:
            if current >= MAX_NUGGET:
                raise IllConditionedError(
                    f"correlation matrix singular up to nugget {current:g}"
                ) from None
            current = max(current * 10.0, 1e-15)
            current = min(current, MAX_NUGGET)


def _profile_from_chol(chol: np.ndarray, y: np.ndarray) -> float:
    n = y.size
    ones = np.ones(n)
    rinv_y = linalg.cho_solve((chol, True), y)
    rinv_1 = linalg.cho_solve((chol, True), ones)
    beta = ones @ rinv_y / (ones @ rinv_1)
    resid = y - beta
    sigma2 = max(resid @ linalg.cho_solve((chol, True), resid) / n, _SIGMA2_FLOOR)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (n * np.log(2.0 * np.pi * sigma2) + logdet + n)


def log_marginal_likelihood(X, y, length_scales, nugget: float = DEFAULT_NUGGET) -> float:
    """Concentrated log-likelihood for fixed length scales.

    The trend coefficient and the process variance take their
    maximum-likelihood values given the correlation matrix.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(np.unique(X, axis=0)) < 2:
        raise FitError("need at least two distinct training points")
    y = y - y.mean()
    chol, _ = _cholesky_escalating(correlation_matrix(X, X, length_scales), nugget)
    return _profile_from_chol(chol, y)


def _lower_sq_dist(X: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences of the strictly lower triangle, ``(d, n(n-1)/2)``."""
    i, j = np.tril_indices(X.shape[0], -1)
    return ((X[i] - X[j]) ** 2).T.copy()


def _profile_batch(sqd: np.ndarray, y: np.ndarray, log10_theta: np.ndarray, nugget: float) -> np.ndarray:
    """Profile log-likelihood for a population of log10 length-scale vectors.

    ``sqd`` comes from :func:`_lower_sq_dist`. Only the lower triangle of
    each correlation matrix is formed, which is all the factorization reads.
    """
    m = log10_theta.shape[0]
    n = y.size
    d = sqd.shape[0]
    expo = (10.0 ** (-2.0 * log10_theta)) @ sqd.reshape(d, -1)
    # entries below exp(-40) ~ 4e-18 vanish next to the unit diagonal
    np.minimum(expo, _EXP_CUTOFF, out=expo)
    np.negative(expo, out=expo)
    np.exp(expo, out=expo)
    il, jl = np.tril_indices(n, -1)
    rhs = np.column_stack([y, np.ones(n)])
    out = np.full(m, -np.inf)
    # dpotrf works on a copy, so the diagonal is set once
    a = np.eye(n, order="F") * (1.0 + nugget)
    a_flat = a.reshape(-1, order="F")
    lower = jl * n + il
    for k in range(m):
        a_flat[lower] = expo[k]
        chol, info = lapack.dpotrf(a, lower=1, clean=0)
        if info != 0:
            # rare: rebuild the full matrix and escalate the nugget
            corr = np.eye(n)
            corr[il, jl] = expo[k]
            corr[jl, il] = expo[k]
            try:
                c, _ = _cholesky_escalating(corr, nugget)
                out[k] = _profile_from_chol(c, y)
            except IllConditionedError:
                pass
            continue
        z, _ = lapack.dtrtrs(chol, rhs, lower=1)
        (yy, y1), (_, one_r_1) = z.T @ z
        beta = y1 / one_r_1
        sigma2 = max((yy - beta * y1) / n, _SIGMA2_FLOOR)
        logdet = 2.0 * np.log(np.diagonal(chol)).sum()
        out[k] = -0.5 * (n * math.log(2.0 * math.pi * sigma2) + logdet + n)
    return out


@dataclass(frozen=True)
class GpSearch:
    """Differential-evolution settings for the length-scale search."""

    population_per_dim: int = 15
    generations: int = 100
    seed: int = 0
    log10_bounds: tuple[float, float] = (-2.0, 2.0)
    nugget: float = DEFAULT_NUGGET

    def to_dict(self) -> dict:
        return {
            "population_per_dim": self.population_per_dim,
            "generations": self.generations,
            "seed": self.seed,
            "log10_bounds": list(self.log10_bounds),
            "nugget": self.nugget,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GpSearch":
        d = dict(d)
        if "log10_bounds" in d:
            d["log10_bounds"] = tuple(d["log10_bounds"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class GpModel:
    """A conditioned GP; build with :meth:`condition` or :func:`fit`."""

    X: np.ndarray
    y: np.ndarray
    kernel: KernelConfig
    beta: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    rinv_one: np.ndarray = field(repr=False)
    one_rinv_one: float = 0.0
    log_likelihood: float = float("nan")

    @classmethod
    def condition(
        cls,
        X,
        y,
        length_scales,
        nugget: float = DEFAULT_NUGGET,
        signal_variance: float | None = None,
    ) -> "GpModel":
        """Condition on data with fixed length scales.

        With ``signal_variance=None`` the variance takes its closed-form
        maximum-likelihood value. A single training point is accepted.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise FitError("X and y have different lengths")
        theta = np.broadcast_to(np.asarray(length_scales, dtype=float), (X.shape[1],)).copy()
        chol, used = _cholesky_escalating(correlation_matrix(X, X, theta), nugget)
        if used > nugget:
            logger.warning("nugget raised from %g to %g", nugget, used)
        n = y.size
        ones = np.ones(n)
        rinv_1 = linalg.cho_solve((chol, True), ones)
        one_r_1 = float(ones @ rinv_1)
        beta = float(rinv_1 @ y / one_r_1)
        resid = y - beta
        alpha = linalg.cho_solve((chol, True), resid)
        if signal_variance is None:
            signal_variance = max(float(resid @ alpha) / n, _SIGMA2_FLOOR)
        loglik = _profile_from_chol(chol, y - y.mean()) if n > 1 else float("nan")
        kernel = KernelConfig(theta, float(signal_variance), used)
        return cls(X, y, kernel, beta, chol, alpha, rinv_1, one_r_1, loglik)

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    def predict(self, x) -> PredictiveGaussian:
        """Predictive mean and variance (kriging predictor and its MSE).

        ``x`` of shape ``(d,)`` gives scalars, ``(m, d)`` gives arrays.
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = np.atleast_2d(x)
        if np.any(xs < -0.1) or np.any(xs > 1.1):
            logger.debug("GP extrapolation outside [-0.1, 1.1]")
        r = correlation_matrix(xs, self.X, self.kernel.length_scales)
        mean = self.beta + r @ self.alpha
        v = linalg.solve_triangular(self.chol, r.T, lower=True)
        r_rinv_r = np.einsum("ij,ij->j", v, v)
        u = r @ self.rinv_one - 1.0
        var = self.kernel.signal_variance * (1.0 - r_rinv_r + u**2 / self.one_rinv_one)
        var = np.maximum(var, 0.0)
        if single:
            return PredictiveGaussian(float(mean[0]), float(var[0]))
        return PredictiveGaussian(mean, var)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "length_scales": self.kernel.length_scales.tolist(),
            "signal_variance": self.kernel.signal_variance,
            "nugget": self.kernel.nugget,
            "beta": self.beta,
            "X": self.X.tolist(),
            "y": self.y.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GpModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported GP format version {d.get('format_version')}")
        return cls.condition(
            np.asarray(d["X"], dtype=float),
            np.asarray(d["y"], dtype=float),
            d["length_scales"],
            nugget=d["nugget"],
            signal_variance=d["signal_variance"],
        )


def _check_duplicates(X: np.ndarray, y: np.ndarray) -> None:
    _, inverse, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    scale = max(float(np.ptp(y)), 1.0)
    for group in np.nonzero(counts > 1)[0]:
        members = np.nonzero(inverse == group)[0]
        if np.ptp(y[members]) > 1e-12 * scale:
            raise FitError(
                f"duplicate inputs with conflicting outputs at rows {members.tolist()}"
            )


def fit(X, y, search: GpSearch = GpSearch(), warm_start=None) -> GpModel:
    """Maximum-likelihood fit of the length scales by differential evolution.

    The search runs over ``log10(theta)`` in ``search.log10_bounds`` per
    dimension. ``warm_start`` (length scales) is injected into the initial
    population. Rows are put in canonical order first, so the result does
    not depend on the order of the training data.
    """
    from .acquisition import DeConfig, differential_evolution

    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise FitError("X and y have different lengths")
    if len(np.unique(X, axis=0)) < 2:
        raise FitError("need at least two distinct training points")
    _check_duplicates(X, y)
    order = np.lexsort(np.column_stack([X, y]).T[::-1])
    X, y = X[order], y[order]

    d = X.shape[1]
    yc = y - y.mean()
    sqd = _lower_sq_dist(X)
    lo, hi = search.log10_bounds
    bounds = np.array([[lo, hi]] * d)

    def objective(pop):
        return -_profile_batch(sqd, yc, pop, search.nugget)

    init = None
    if warm_start is not None:
        init = np.clip(np.log10(np.asarray(warm_start, dtype=float)), lo, hi)[None, :]
    de = DeConfig(
        population=search.population_per_dim * d,
        generations=search.generations,
        seed=search.seed,
    )
    result = differential_evolution(objective, bounds, de, vectorized=True, init=init)
    return GpModel.condition(X, y, 10.0 ** result.x, nugget=search.nugget)


def predict(model: GpModel, x) -> PredictiveGaussian:
    return model.predict(x)
