"""Synthetic black-box field problems.

Two deterministic stand-ins for an expensive flow solver. Each maps an input
point ``(Tu, alpha, Re, M)`` to a field on a fixed mesh with a shock-like
jump at ``x_sh`` and a transition-like front at ``x_tr``, plus two integrated
scalars (``lift`` and ``drag`` analogs).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigurationError, StructuralError
from .sampling import InputSpace, Marginal, mack_nfactor, mack_transform

QOIS = ("lift", "drag")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Nodes ``(p, d_geo)``, positive quadrature weights ``(p,)`` and undirected edges ``(E, 2)``."""

    mesh_id: str
    nodes: np.ndarray
    weights: np.ndarray
    edges: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


def _trapezoid_weights(n: int) -> np.ndarray:
    w = np.full(n, 1.0 / (n - 1))
    w[[0, -1]] *= 0.5
    return w


def line_mesh(n: int = 201) -> Mesh:
    s = np.linspace(0.0, 1.0, n)
    edges = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    return Mesh(f"line{n}", s[:, None], _trapezoid_weights(n), edges)


def grid_mesh(ns: int = 41, nt: int = 21) -> Mesh:
    """Structured grid with ``s`` varying fastest; node ``k = j*ns + i``."""
    s = np.linspace(0.0, 1.0, ns)
    t = np.linspace(0.0, 1.0, nt)
    ss, tt = np.meshgrid(s, t)
    nodes = np.column_stack([ss.ravel(), tt.ravel()])
    weights = np.outer(_trapezoid_weights(nt), _trapezoid_weights(ns)).ravel()
    k = np.arange(ns * nt).reshape(nt, ns)
    horiz = np.column_stack([k[:, :-1].ravel(), k[:, 1:].ravel()])
    vert = np.column_stack([k[:-1, :].ravel(), k[1:, :].ravel()])
    return Mesh(f"grid{ns}x{nt}", nodes, weights, np.vstack([horiz, vert]))


def integrate_field(field, weights) -> float:
    """Weighted sum of node values; both arrays must have the same shape."""
    field = np.asarray(field, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if field.shape != weights.shape:
        raise StructuralError(f"field shape {field.shape} != weights shape {weights.shape}")
    return float(np.sum(field * weights))


def crm_space(n_ts_range: tuple[float, float] = (5.0, 14.0)) -> InputSpace:
    """Four-dimensional input space of the transonic-wing analog."""
    return InputSpace(
        (
            Marginal.mack_tu("Tu", *n_ts_range, units="-"),
            Marginal.uniform("alpha", 1.0, 3.5, units="deg"),
            Marginal.normal("Re", 15e6, 0.01, units="-"),
            Marginal.normal("M", 0.856, 0.01, units="-"),
        )
    )


def shock_location(alpha, mach):
    return 0.40 + 0.08 * np.asarray(alpha) + 2.0 * (np.asarray(mach) - 0.856)


def front_location(n_ts, alpha):
    return np.clip(0.15 + 0.04 * np.asarray(n_ts) - 0.05 * (np.asarray(alpha) - 1.0), 0.05, 0.95)


def _profile(s: np.ndarray, xi) -> np.ndarray:
    tu, alpha, re, mach = (float(v) for v in xi)
    n_ts = float(mack_nfactor(tu))
    r = re / 15e6
    x_sh = shock_location(alpha, mach)
    x_tr = front_location(n_ts, alpha)
    return (
        -4.0 * (1.2 + 0.3 * alpha) * s * (1.0 - s) * r**0.1
        + 0.8 * np.tanh(80.0 * (s - x_sh))
        + 0.15 / (1.0 + np.exp(-120.0 * (s - x_tr)))
    )


@dataclass(frozen=True, eq=False)
class Evaluation:
    """Black-box output: field ``(p, n_fields)`` and integrated scalars."""

    field: np.ndarray
    scalars: dict[str, float]


@dataclass(frozen=True, eq=False)
class Problem:
    """A black box together with its mesh, input space and scalar functionals.

    With ``two_fields`` the field has columns ``(f, f**2)``; both scalars are
    then linear functionals of the field, which field surrogates need to
    produce scalar predictive distributions.
    """

    problem_id: str
    mesh: Mesh
    space: InputSpace
    profile: Callable[[np.ndarray, np.ndarray], np.ndarray]
    two_fields: bool = True

    @property
    def n_fields(self) -> int:
        return 2 if self.two_fields else 1

    @property
    def s(self) -> np.ndarray:
        return self.mesh.nodes[:, 0]

    def functional(self, qoi: str) -> np.ndarray:
        """Weights ``(p, n_fields)`` such that ``qoi = sum(weights * field)``."""
        w = self.mesh.weights
        out = np.zeros((self.mesh.n_nodes, self.n_fields))
        if qoi == "lift":
            out[:, 0] = -w
        elif qoi == "drag":
            if not self.two_fields:
                raise ConfigurationError("drag is linear in the field only with two_fields=True")
            out[:, 1] = w * self.s
        else:
            raise ConfigurationError(f"unknown QoI {qoi!r}")
        return out

    def evaluate(self, xi) -> Evaluation:
        xi = np.asarray(xi, dtype=float)
        if xi.shape != (self.space.dimension,):
            raise StructuralError(f"expected input of shape ({self.space.dimension},)")
        f = self.profile(self.mesh.nodes, xi)
        w = self.mesh.weights
        scalars = {
            "lift": float(np.sum(w * -f)),
            "drag": float(np.sum(w * f**2 * self.s)),
        }
        field = np.column_stack([f, f**2]) if self.two_fields else f[:, None]
        return Evaluation(field, scalars)

    __call__ = evaluate


def _p1_profile(nodes: np.ndarray, xi) -> np.ndarray:
    return _profile(nodes[:, 0], xi)


def _p2_profile(nodes: np.ndarray, xi) -> np.ndarray:
    s, t = nodes[:, 0], nodes[:, 1]
    x_sh = shock_location(xi[1], xi[3])
    return _profile(s, xi) * (1.0 - 0.5 * t) + 0.1 * np.sin(2.0 * np.pi * t) * np.tanh(80.0 * (s - x_sh))


def problem_p1(two_fields: bool = True, n_ts_range=(5.0, 14.0)) -> Problem:
    return Problem("p1", line_mesh(201), crm_space(n_ts_range), _p1_profile, two_fields)


def problem_p2(two_fields: bool = True, n_ts_range=(5.0, 14.0)) -> Problem:
    return Problem("p2", grid_mesh(41, 21), crm_space(n_ts_range), _p2_profile, two_fields)


def get_problem(problem_id: str, **kwargs) -> Problem:
    try:
        factory = {"p1": problem_p1, "p2": problem_p2}[problem_id]
    except KeyError:
        raise ConfigurationError(f"unknown problem id {problem_id!r}") from None
    return factory(**kwargs)


def evaluate_p1(xi, two_fields: bool = False) -> Evaluation:
    return problem_p1(two_fields).evaluate(xi)


def evaluate_p2(xi, two_fields: bool = False) -> Evaluation:
    return problem_p2(two_fields).evaluate(xi)


def nominal_point() -> np.ndarray:
    return np.array([float(mack_transform(9.5)), 2.25, 15e6, 0.856])


def write_snapshot_csv(path, mesh: Mesh, field) -> Path:
    """Snapshot CSV: ``node_index, coords..., value...``."""
    field = np.asarray(field, dtype=float).reshape(mesh.n_nodes, -1)
    path = Path(path)
    coord_names = ["s", "t", "u"][: mesh.nodes.shape[1]]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_index", *coord_names, *[f"value_{k}" for k in range(field.shape[1])]])
        for i in range(mesh.n_nodes):
            w.writerow([i, *map(repr, mesh.nodes[i]), *map(repr, field[i])])
    return path
