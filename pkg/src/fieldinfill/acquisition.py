"""Infill criteria, Jensen-Shannon divergence and differential evolution."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

import numpy as np

from .errors import ConfigurationError, DomainError
from .gp import PredictiveGaussian
from .sampling import InputSpace

logger = logging.getLogger(__name__)

LN2 = math.log(2.0)
DUPLICATE_TOL = 1e-6


class ScalarPredictor(Protocol):
    """Anything mapping normalized inputs ``(m, d)`` to a predictive Gaussian."""

    def predict(self, x) -> PredictiveGaussian: ...


class CriterionKind(str, enum.Enum):
    SE_GP = "SE_GP"
    SE_FIELD = "SE_FIELD"
    SE_WITH_MISFIT = "SE_WITH_MISFIT"
    JSD = "JSD"


@dataclass(frozen=True)
class CriterionSpec:
    kind: CriterionKind = CriterionKind.SE_GP
    lam: float = 1.0
    pdf_weighting: bool = True
    scalar_qoi: str = "drag"

    def __post_init__(self):
        object.__setattr__(self, "kind", CriterionKind(self.kind))
        if self.lam < 0:
            raise ConfigurationError("misfit weight must be non-negative")

    @property
    def needs_gp(self) -> bool:
        return self.kind is not CriterionKind.SE_FIELD

    @property
    def needs_field(self) -> bool:
        return self.kind is not CriterionKind.SE_GP

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "lambda": self.lam,
            "pdf_weighting": self.pdf_weighting,
            "scalar_qoi": self.scalar_qoi,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CriterionSpec":
        return cls(
            CriterionKind(d.get("kind", "SE_GP")),
            float(d.get("lambda", 1.0)),
            bool(d.get("pdf_weighting", True)),
            d.get("scalar_qoi", "drag"),
        )


@dataclass(frozen=True)
class DeConfig:
    """DE/rand/1/bin settings. ``population=None`` means 15 per dimension."""

    population: int | None = None
    mutation: float = 0.8
    crossover: float = 0.9
    generations: int = 200
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mutation < 2.0:
            raise ConfigurationError("mutation factor must lie in (0, 2)")
        if not 0.0 <= self.crossover <= 1.0:
            raise ConfigurationError("crossover rate must lie in [0, 1]")
        if self.population is not None and self.population < 4:
            raise ConfigurationError("population must be at least 4")

    def to_dict(self) -> dict[str, Any]:
        return {
            "population": self.population,
            "mutation": self.mutation,
            "crossover": self.crossover,
            "generations": self.generations,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DeConfig":
        return cls(**d)


@dataclass
class DeResult:
    x: np.ndarray
    fun: float
    nfev: int
    history: list[float] = field(default_factory=list)


def _reflect(trial: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    trial = np.where(trial < lo, 2.0 * lo - trial, trial)
    trial = np.where(trial > hi, 2.0 * hi - trial, trial)
    return np.clip(trial, lo, hi)


def differential_evolution(
    objective: Callable,
    bounds,
    config: DeConfig = DeConfig(),
    vectorized: bool = False,
    init=None,
) -> DeResult:
    """Minimize ``objective`` over a box with DE/rand/1/bin.

    Parameters
    ----------
    objective : callable
        ``f(x) -> float``, or ``f(pop) -> (m,)`` when ``vectorized``.
        Non-finite values count as ``+inf``.
    bounds : array_like, shape (d, 2)
    config : DeConfig
    vectorized : bool
        Evaluate a whole generation per call.
    init : array_like, optional
        Points that replace the first members of the random initial population.

    Returns
    -------
    DeResult
        Best member after ``config.generations`` generations, its value, the
        number of objective evaluations, and the best value per generation.
    """
    bounds = np.asarray(bounds, dtype=float)
    if bounds.ndim != 2 or bounds.shape[1] != 2 or not np.all(np.isfinite(bounds)):
        raise ConfigurationError("bounds must be a finite (d, 2) array")
    lo, hi = bounds[:, 0], bounds[:, 1]
    d = len(lo)
    npop = config.population or 15 * d
    if npop < 4:
        raise ConfigurationError("population must be at least 4")
    rng = np.random.default_rng(config.seed)

    def evaluate(pop):
        if vectorized:
            vals = np.asarray(objective(pop), dtype=float).reshape(len(pop))
        else:
            vals = np.array([objective(p) for p in pop], dtype=float)
        return np.where(np.isfinite(vals), vals, np.inf)

    pop = lo + rng.random((npop, d)) * (hi - lo)
    if init is not None:
        init = np.atleast_2d(np.asarray(init, dtype=float))[:npop]
        pop[: len(init)] = np.clip(init, lo, hi)
    fit = evaluate(pop)
    nfev = npop
    history = [float(fit.min())]
    idx = np.arange(npop)
    for _ in range(config.generations):
        # three distinct donors, none equal to the target
        keys = rng.random((npop, npop))
        keys[idx, idx] = 2.0
        others = np.argpartition(keys, 3, axis=1)[:, :3]
        others = np.take_along_axis(
            others, np.argsort(np.take_along_axis(keys, others, axis=1), axis=1), axis=1
        )
        a, b, c = pop[others[:, 0]], pop[others[:, 1]], pop[others[:, 2]]
        mutant = _reflect(a + config.mutation * (b - c), lo, hi)
        cross = rng.random((npop, d)) < config.crossover
        cross[idx, rng.integers(0, d, npop)] = True
        trial = np.where(cross, mutant, pop)
        trial_fit = evaluate(trial)
        nfev += npop
        better = trial_fit < fit
        pop[better] = trial[better]
        fit[better] = trial_fit[better]
        history.append(float(fit.min()))
    best = int(np.argmin(fit))
    return DeResult(pop[best].copy(), float(fit[best]), nfev, history)


def _floored(mu_p, var_p, mu_q, var_q):
    scale = np.maximum(np.maximum(np.abs(mu_p), np.abs(mu_q)), 1e-150) ** 2
    floor = 1e-18 * scale
    return np.maximum(var_p, floor), np.maximum(var_q, floor)


def _jsd_rows(mu_p, var_p, mu_q, var_q, n_grid, narrow):
    s_max = np.sqrt(np.maximum(var_p, var_q))
    lo = np.minimum(mu_p, mu_q) - 8.0 * s_max
    hi = np.maximum(mu_p, mu_q) + 8.0 * s_max
    t = np.linspace(0.0, 1.0, n_grid)
    x = lo[:, None] + (hi - lo)[:, None] * t
    if narrow:
        # resolve a distribution much narrower than the span with its own grid
        tt = 2.0 * t - 1.0
        xp = mu_p[:, None] + 8.0 * np.sqrt(var_p)[:, None] * tt
        xq = mu_q[:, None] + 8.0 * np.sqrt(var_q)[:, None] * tt
        x = np.sort(np.concatenate([x, xp, xq], axis=-1), axis=-1)
    p = _normal_pdf(x, mu_p[:, None], var_p[:, None])
    q = _normal_pdf(x, mu_q[:, None], var_q[:, None])
    m = 0.5 * (p + q)
    integrand = 0.5 * _kl_integrand(p, m) + 0.5 * _kl_integrand(q, m)
    return np.trapezoid(integrand, x, axis=-1)


def _normal_pdf(x, mu, var):
    return np.exp(-0.5 * (x - mu) ** 2 / var) / np.sqrt(2.0 * np.pi * var)


def _kl_integrand(p, m):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0.0, p * np.log(p / m), 0.0)


def jsd_batch(mu_p, var_p, mu_q, var_q, n_grid: int = 2001, chunk: int = 8) -> np.ndarray:
    """Vectorized Jensen-Shannon divergence between Gaussian pairs (nats).

    Each pair gets its own grid, so results do not depend on the batch.
    Pairs are integrated ``chunk`` at a time to keep the grids in cache.
    """
    args = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mu_p, var_p, mu_q, var_q)))
    if not all(np.all(np.isfinite(v)) for v in args):
        raise DomainError("non-finite predictive moments")
    shape = args[0].shape
    mp, vp, mq, vq = (a.ravel() for a in args)
    vp, vq = _floored(mp, vp, mq, vq)
    span = np.abs(mp - mq) + 16.0 * np.sqrt(np.maximum(vp, vq))
    narrow = np.sqrt(np.minimum(vp, vq)) < span / 400.0
    out = np.empty(mp.size)
    for flag in (False, True):
        idx = np.flatnonzero(narrow == flag)
        for i in range(0, idx.size, chunk):
            k = idx[i : i + chunk]
            out[k] = _jsd_rows(mp[k], vp[k], mq[k], vq[k], n_grid, flag)
    return np.clip(out, 0.0, LN2).reshape(shape)


def jsd_gaussians(P: PredictiveGaussian, Q: PredictiveGaussian, n_grid: int = 2001) -> float:
    """Jensen-Shannon divergence between two Gaussians by trapezoid quadrature.

    The shared grid spans eight of the larger standard deviations beyond both
    means. The result is clamped to ``[0, ln 2]``.
    """
    return float(jsd_batch(P.mean, P.variance, Q.mean, Q.variance, n_grid))


@dataclass
class Surrogates:
    """Predictors consumed by the criteria, all on normalized inputs."""

    gp: ScalarPredictor | None = None
    field: ScalarPredictor | None = None


@dataclass(frozen=True)
class CriterionBreakdown:
    sigma_gp: float
    misfit: float
    sigma_field: float
    pdf: float
    raw: float
    total: float

    def to_dict(self) -> dict[str, float]:
        return {
            "sigma_gp_part": self.sigma_gp,
            "misfit_part": self.misfit,
            "sigma_field_part": self.sigma_field,
            "pdf_value": self.pdf,
            "raw": self.raw,
            "total": self.total,
        }

    @classmethod
    def from_dict(cls, d: dict[str, float]) -> "CriterionBreakdown":
        return cls(
            d["sigma_gp_part"], d["misfit_part"], d["sigma_field_part"],
            d["pdf_value"], d["raw"], d["total"],
        )


def criterion_terms(spec: CriterionSpec, surrogates: Surrogates, space: InputSpace, z) -> dict[str, np.ndarray]:
    """Criterion parts at normalized points ``z`` of shape ``(m, d)``.

    Returns arrays ``sigma_gp``, ``misfit``, ``sigma_field``, ``pdf``, ``raw``
    (before PDF weighting) and ``total``. Parts a criterion does not use are 0.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    m = z.shape[0]
    zeros = np.zeros(m)
    if spec.needs_gp and surrogates.gp is None:
        raise ConfigurationError(f"{spec.kind.value} needs a scalar GP surrogate")
    if spec.needs_field and surrogates.field is None:
        raise ConfigurationError(f"{spec.kind.value} needs a field surrogate")
    sigma_gp = misfit = sigma_field = zeros
    if spec.kind is CriterionKind.SE_GP:
        sigma_gp = np.asarray(surrogates.gp.predict(z).std, dtype=float)
        raw = sigma_gp
    elif spec.kind is CriterionKind.SE_FIELD:
        sigma_field = np.asarray(surrogates.field.predict(z).std, dtype=float)
        raw = sigma_field
    else:
        pg = surrogates.gp.predict(z)
        pf = surrogates.field.predict(z)
        sigma_gp = np.asarray(pg.std, dtype=float)
        gap = np.abs(np.asarray(pg.mean) - np.asarray(pf.mean))
        if spec.kind is CriterionKind.SE_WITH_MISFIT:
            misfit = spec.lam * gap
            raw = sigma_gp + misfit
        else:
            misfit = gap
            sigma_field = np.asarray(pf.std, dtype=float)
            raw = jsd_batch(pg.mean, pg.variance, pf.mean, pf.variance)
    if spec.pdf_weighting:
        pdf = np.asarray(space.joint_pdf(space.denormalize(z)), dtype=float).reshape(m)
    else:
        pdf = np.ones(m)
    return {
        "sigma_gp": np.broadcast_to(sigma_gp, (m,)),
        "misfit": np.broadcast_to(misfit, (m,)),
        "sigma_field": np.broadcast_to(sigma_field, (m,)),
        "pdf": pdf,
        "raw": np.asarray(raw),
        "total": pdf * raw,
    }


def criterion_value(spec: CriterionSpec, surrogates: Surrogates, space: InputSpace, xi) -> float:
    """Criterion at one physical point (PDF-weighted when configured)."""
    z = space.normalize(np.asarray(xi, dtype=float))[None, :]
    return float(criterion_terms(spec, surrogates, space, z)["total"][0])


def _breakdown(terms: dict, k: int = 0) -> CriterionBreakdown:
    return CriterionBreakdown(
        float(terms["sigma_gp"][k]),
        float(terms["misfit"][k]),
        float(terms["sigma_field"][k]),
        float(terms["pdf"][k]),
        float(terms["raw"][k]),
        float(terms["total"][k]),
    )


@dataclass(frozen=True)
class Proposal:
    xi: np.ndarray
    z: np.ndarray
    breakdown: CriterionBreakdown
    duplicate: bool = False


def propose_infill(
    spec: CriterionSpec,
    surrogates: Surrogates,
    space: InputSpace,
    de: DeConfig = DeConfig(),
    existing=None,
) -> Proposal:
    """Maximize the criterion over the normalized search box.

    ``existing`` holds normalized training inputs for the duplicate guard: a
    proposal within ``1e-6`` of one of them triggers a single re-run of DE
    with ``seed + 1``; a second duplicate is accepted with a warning.
    """
    d = space.dimension
    bounds = np.array([[0.0, 1.0]] * d)

    def objective(pop):
        return -criterion_terms(spec, surrogates, space, pop)["total"]

    def is_duplicate(z):
        if existing is None or len(existing) == 0:
            return False
        dist = np.min(np.linalg.norm(np.asarray(existing) - z, axis=1))
        return bool(dist < DUPLICATE_TOL)

    result = differential_evolution(objective, bounds, de, vectorized=True)
    duplicate = is_duplicate(result.x)
    if duplicate:
        retry = DeConfig(de.population, de.mutation, de.crossover, de.generations, de.seed + 1)
        result = differential_evolution(objective, bounds, retry, vectorized=True)
        duplicate = is_duplicate(result.x)
        if duplicate:
            logger.warning("infill point duplicates a training point; accepting it")
    z = result.x
    terms = criterion_terms(spec, surrogates, space, z[None, :])
    return Proposal(space.denormalize(z), z, _breakdown(terms), duplicate)
