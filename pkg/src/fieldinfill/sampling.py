"""Input spaces, low-discrepancy sequences and distribution transforms.

An :class:`InputSpace` is an ordered tuple of independent :class:`Marginal`
distributions. Points live in three coordinate systems:

* unit samples ``u`` in ``[0, 1)^d`` (Sobol/Halton output),
* physical points ``x`` obtained by the inverse-CDF :meth:`InputSpace.transform`,
* normalized points ``z`` in ``[0, 1]^d`` spanning the search box, used as
  surrogate inputs (:meth:`InputSpace.normalize`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import special

from .errors import ConfigurationError, DomainError

logger = logging.getLogger(__name__)

_MAXBIT = 32
CLAMP_EPS = 1e-12
NORMAL_BOX_SIGMAS = 6.0

# Primitive polynomials and initial direction numbers for dimensions 2..16
# (Joe & Kuo, new-joe-kuo-6.21201). Columns: degree s, coefficient a, m_1..m_s.
_JOE_KUO = (
    (1, 0, (1,)),
    (2, 1, (1, 3)),
    (3, 1, (1, 3, 1)),
    (3, 2, (1, 1, 1)),
    (4, 1, (1, 1, 3, 3)),
    (4, 4, (1, 3, 5, 13)),
    (5, 2, (1, 1, 5, 5, 17)),
    (5, 4, (1, 1, 5, 5, 5)),
    (5, 7, (1, 1, 7, 11, 19)),
    (5, 11, (1, 1, 5, 1, 1)),
    (5, 13, (1, 1, 1, 3, 11)),
    (5, 14, (1, 3, 5, 5, 31)),
    (6, 1, (1, 3, 3, 9, 7, 49)),
    (6, 13, (1, 1, 1, 15, 21, 21)),
    (6, 16, (1, 3, 1, 13, 27, 49)),
)
MAX_DIMENSION = len(_JOE_KUO) + 1

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53)


def _direction_numbers(dimension: int) -> np.ndarray:
    """Return a ``(dimension, 32)`` table of integer direction numbers."""
    table = np.zeros((dimension, _MAXBIT), dtype=np.uint64)
    table[0] = [1 << (_MAXBIT - k) for k in range(1, _MAXBIT + 1)]
    for j in range(1, dimension):
        s, a, m = _JOE_KUO[j - 1]
        v = [0] * (_MAXBIT + 1)
        for k in range(1, s + 1):
            v[k] = m[k - 1] << (_MAXBIT - k)
        for k in range(s + 1, _MAXBIT + 1):
            value = v[k - s] ^ (v[k - s] >> s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    value ^= v[k - i]
            v[k] = value
        table[j] = v[1:]
    return table


def _check_dimension(dimension: int) -> None:
    if not 1 <= dimension <= MAX_DIMENSION:
        raise ConfigurationError(
            f"dimension must be in [1, {MAX_DIMENSION}], got {dimension}"
        )


def sobol_sequence(
    dimension: int, count: int, skip: int = 0, shift_seed: int | None = None
) -> np.ndarray:
    """Unscrambled Sobol points in Gray-code order.

    Parameters
    ----------
    dimension : int
        Number of coordinates, at most 16.
    count : int
        Number of points returned.
    skip : int
        Number of leading points discarded (index 0 is the origin).
    shift_seed : int, optional
        If given, a random digital shift (bitwise XOR) seeded with this value
        is applied to every point. The shifted set keeps its net structure.

    Returns
    -------
    ndarray of shape ``(count, dimension)`` with entries in ``[0, 1)``.
    """
    _check_dimension(dimension)
    if count < 0 or skip < 0:
        raise ConfigurationError("count and skip must be non-negative")
    v = _direction_numbers(dimension)
    idx = np.arange(skip, skip + count, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    x = np.zeros((count, dimension), dtype=np.uint64)
    for k in range(_MAXBIT):
        bit = (gray >> np.uint64(k)) & np.uint64(1)
        if not bit.any():
            continue
        x ^= bit[:, None] * v[:, k][None, :]
    if shift_seed is not None:
        shift = np.random.default_rng(shift_seed).integers(
            0, 1 << _MAXBIT, size=dimension, dtype=np.uint64
        )
        x ^= shift[None, :]
    return x.astype(np.float64) / float(1 << _MAXBIT)


def radical_inverse(n: np.ndarray, base: int) -> np.ndarray:
    """Van der Corput radical inverse of non-negative integers ``n``."""
    n = np.asarray(n, dtype=np.int64).copy()
    result = np.zeros(n.shape, dtype=np.float64)
    scale = 1.0 / base
    while np.any(n > 0):
        n, digit = np.divmod(n, base)
        result += digit * scale
        scale /= base
    return result


def halton_sequence(dimension: int, count: int) -> np.ndarray:
    """Halton points; point ``i`` uses the radical inverse of ``i + 1``."""
    _check_dimension(dimension)
    idx = np.arange(1, count + 1)
    return np.column_stack([radical_inverse(idx, _PRIMES[j]) for j in range(dimension)])


def unit_sequence(kind: str, dimension: int, count: int, skip: int = 0) -> np.ndarray:
    """Dispatch on sequence kind (``"sobol"`` or ``"halton"``)."""
    if kind == "sobol":
        return sobol_sequence(dimension, count, skip)
    if kind == "halton":
        return halton_sequence(dimension, skip + count)[skip:]
    raise ConfigurationError(f"unknown sequence kind {kind!r}")


def mack_transform(n_ts):
    """Turbulence intensity from the critical N-factor (Mack's relation)."""
    return np.exp(-(8.43 + np.asarray(n_ts, dtype=float)) / 2.4)


def mack_nfactor(tu):
    """Critical N-factor from turbulence intensity; inverse of :func:`mack_transform`."""
    tu = np.asarray(tu, dtype=float)
    if np.any(~(tu > 0)):
        raise DomainError("turbulence intensity must be positive")
    return -8.43 - 2.4 * np.log(tu)


_KINDS = ("uniform", "normal", "mack_tu")


@dataclass(frozen=True)
class Marginal:
    """One independent input distribution.

    ``kind`` is ``"uniform"`` with params ``(lo, hi)``, ``"normal"`` with
    params ``(mean, cov_fraction)`` or ``"mack_tu"`` with params
    ``(n_lo, n_hi)``: a turbulence intensity whose N-factor is uniform on
    ``[n_lo, n_hi]``.
    """

    name: str
    kind: str
    params: tuple
    units: str = ""

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown marginal kind {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        if len(self.params) != 2:
            raise ConfigurationError(f"marginal {self.name!r} needs two params")
        a, b = self.params
        if self.kind in ("uniform", "mack_tu") and not a < b:
            raise ConfigurationError(f"marginal {self.name!r}: lo must be < hi")
        if self.kind == "normal" and (a == 0.0 or not b > 0.0):
            raise ConfigurationError(
                f"marginal {self.name!r}: normal needs mean != 0 and cov_fraction > 0"
            )

    @classmethod
    def uniform(cls, name, lo, hi, units=""):
        return cls(name, "uniform", (lo, hi), units)

    @classmethod
    def normal(cls, name, mean, cov_fraction, units=""):
        return cls(name, "normal", (mean, cov_fraction), units)

    @classmethod
    def mack_tu(cls, name, n_lo, n_hi, units=""):
        return cls(name, "mack_tu", (n_lo, n_hi), units)

    @property
    def sigma(self) -> float:
        mean, cov = self.params
        return abs(mean) * cov

    @property
    def box(self) -> tuple[float, float]:
        """Finite search interval (normals truncated at six sigma)."""
        a, b = self.params
        if self.kind == "uniform":
            return a, b
        if self.kind == "normal":
            return a - NORMAL_BOX_SIGMAS * self.sigma, a + NORMAL_BOX_SIGMAS * self.sigma
        return float(mack_transform(b)), float(mack_transform(a))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        a, b = self.params
        if self.kind == "uniform":
            return a + u * (b - a)
        if self.kind == "normal":
            return a + self.sigma * special.ndtri(u)
        return mack_transform(a + u * (b - a))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        a, b = self.params
        if self.kind == "uniform":
            return np.where((x >= a) & (x <= b), 1.0 / (b - a), 0.0)
        if self.kind == "normal":
            s = self.sigma
            return np.exp(-0.5 * ((x - a) / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
        lo, hi = self.box
        inside = (x >= lo) & (x <= hi)
        safe = np.where(inside, x, 1.0)
        # dN/dTu = -2.4 / Tu
        return np.where(inside, 2.4 / (safe * (b - a)), 0.0)

    def normalize(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "mack_tu":
            a, b = self.params
            with np.errstate(divide="ignore", invalid="ignore"):
                n = -8.43 - 2.4 * np.log(x)
            return (b - n) / (b - a)
        lo, hi = self.box
        return (x - lo) / (hi - lo)

    def denormalize(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "mack_tu":
            a, b = self.params
            return mack_transform(b - z * (b - a))
        lo, hi = self.box
        return lo + z * (hi - lo)

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "kind": self.kind, "params": list(self.params), "units": self.units}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Marginal":
        return cls(d["name"], d["kind"], tuple(d["params"]), d.get("units", ""))


@dataclass(frozen=True)
class InputSpace:
    """Ordered, mutually independent marginals."""

    marginals: tuple[Marginal, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        if not self.marginals:
            raise ConfigurationError("input space needs at least one marginal")

    @property
    def dimension(self) -> int:
        return len(self.marginals)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.marginals]

    @property
    def bounds(self) -> np.ndarray:
        return np.array([m.box for m in self.marginals])

    def _columns(self, a, what):
        a = np.asarray(a, dtype=float)
        if a.shape[-1] != self.dimension:
            raise ConfigurationError(
                f"{what} has dimension {a.shape[-1]}, space has {self.dimension}"
            )
        return a

    def transform(self, u, diagnostics: dict | None = None) -> np.ndarray:
        """Inverse-CDF map from unit samples to physical points.

        Normal coordinates are clamped to ``[1e-12, 1 - 1e-12]`` (this keeps
        the map monotone right up to 0 and 1); the (row, column) pairs that
        were moved are listed under ``diagnostics["clamped"]`` when a dict is
        supplied.
        """
        u = self._columns(u, "sample")
        out = np.empty_like(u)
        clamped = []
        for j, m in enumerate(self.marginals):
            col = u[..., j]
            if m.kind == "normal":
                bad = (col < CLAMP_EPS) | (col > 1.0 - CLAMP_EPS)
                if np.any(bad):
                    clamped.extend(zip(*np.nonzero(np.atleast_1d(bad)), [j] * int(bad.sum())))
                    col = np.clip(col, CLAMP_EPS, 1.0 - CLAMP_EPS)
            out[..., j] = m.ppf(col)
        if clamped:
            logger.debug("clamped %d normal coordinates", len(clamped))
        if diagnostics is not None:
            diagnostics["clamped"] = clamped
        return out

    def joint_pdf(self, x):
        x = self._columns(x, "point")
        p = np.ones(x.shape[:-1])
        for j, m in enumerate(self.marginals):
            p = p * m.pdf(x[..., j])
        return p if p.ndim else float(p)

    def normalize(self, x) -> np.ndarray:
        x = self._columns(x, "point")
        return np.stack([m.normalize(x[..., j]) for j, m in enumerate(self.marginals)], axis=-1)

    def denormalize(self, z) -> np.ndarray:
        z = self._columns(z, "point")
        return np.stack([m.denormalize(z[..., j]) for j, m in enumerate(self.marginals)], axis=-1)

    def sample(self, kind: str, count: int, skip: int = 0) -> np.ndarray:
        """Quasi-random physical points from ``kind`` sequence."""
        return self.transform(unit_sequence(kind, self.dimension, count, skip))

    def probe_points(self, count: int, seed: int | None = None) -> np.ndarray:
        """Normalized quasi-random probes distributed like the inputs."""
        u = sobol_sequence(self.dimension, count, skip=1, shift_seed=seed)
        return self.normalize(self.transform(u))

    def to_list(self) -> list[dict[str, Any]]:
        return [m.to_dict() for m in self.marginals]

    @classmethod
    def from_list(cls, items: Sequence[dict[str, Any]]) -> "InputSpace":
        return cls(tuple(Marginal.from_dict(d) for d in items))
