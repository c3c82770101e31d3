"""Adaptive-sampling campaigns: DoE, surrogate fitting, infill loop, persistence."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import gp as gpmod
from . import neural_field as nf
from . import pod_field as pod
from .acquisition import (
    CriterionKind,
    CriterionSpec,
    DeConfig,
    Surrogates,
    propose_infill,
)
from .benchmarks import QOIS, Problem, get_problem
from .errors import (
    BlackBoxError,
    ConfigurationError,
    MetricError,
    MigrationError,
    StateParseError,
)
from .gp import GpModel, GpSearch
from .sampling import InputSpace, unit_sequence

logger = logging.getLogger(__name__)

STATE_VERSION = 1
MAX_CONSECUTIVE_FAILURES = 3


def metrics(predictions, truths) -> dict[str, float]:
    """Coefficient of determination and range-normalized RMSE."""
    pred = np.asarray(predictions, dtype=float).ravel()
    true = np.asarray(truths, dtype=float).ravel()
    if pred.size != true.size or pred.size == 0:
        raise MetricError("predictions and truths must be non-empty and of equal length")
    span = float(true.max() - true.min())
    if span == 0.0:
        raise MetricError("truths are all identical; r2 and nrmse are undefined")
    resid = pred - true
    ss_res = float(resid @ resid)
    dev = true - true.mean()
    ss_tot = float(dev @ dev)
    rmse = math.sqrt(ss_res / true.size)
    return {"r2": 1.0 - ss_res / ss_tot, "nrmse": rmse / span}


def mean_epistemic_variance(surrogate, space: InputSpace, n_probe: int = 10000, seed: int = 0) -> float:
    """Average predictive standard deviation over quasi-random probes."""
    z = space.probe_points(n_probe, seed)
    return float(np.mean(surrogate.predict(z).std))


@dataclass(frozen=True)
class FieldSurrogateConfig:
    """Field surrogate settings.

    ``training`` is ``"coupled"`` (refit every iteration), ``"post_hoc"``
    (train once on the final data set) or ``"auto"``: post-hoc for a neural
    field under ``SE_GP`` infill, coupled otherwise.
    """

    kind: str = "podi"
    energy: float = pod.DEFAULT_ENERGY
    n_modes: int | None = None
    network: nf.NetworkConfig = nf.NetworkConfig()
    probe_count: int = 1000
    probe_samples: int = 500
    report_samples: int = 10000
    probe_search: GpSearch = GpSearch()
    training: str = "auto"

    def __post_init__(self):
        if self.kind not in ("podi", "neural"):
            raise ConfigurationError(f"unknown field surrogate kind {self.kind!r}")
        if self.training not in ("auto", "coupled", "post_hoc"):
            raise ConfigurationError(f"unknown training mode {self.training!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "energy": self.energy,
            "n_modes": self.n_modes,
            "network": self.network.to_dict(),
            "probe_count": self.probe_count,
            "probe_samples": self.probe_samples,
            "report_samples": self.report_samples,
            "probe_search": self.probe_search.to_dict(),
            "training": self.training,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FieldSurrogateConfig":
        d = dict(d)
        if "network" in d:
            d["network"] = nf.NetworkConfig.from_dict(d["network"])
        if "probe_search" in d:
            d["probe_search"] = GpSearch.from_dict(d["probe_search"])
        return cls(**d)


@dataclass(frozen=True)
class CampaignConfig:
    problem: str = "p1"
    space: InputSpace | None = None
    n_ts_range: tuple[float, float] = (5.0, 14.0)
    two_fields: bool = True
    doe_kind: str = "sobol"
    doe_size: int = 30
    criterion: CriterionSpec = CriterionSpec()
    budget: int = 30
    de: DeConfig = DeConfig()
    field: FieldSurrogateConfig = FieldSurrogateConfig()
    gp_search: GpSearch = GpSearch()
    validation_size: int = 20
    test_size: int = 20
    holdout_skip: int | None = None
    target_r2: float = 0.99
    target_nrmse: float = 0.03
    n_probe: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.doe_size <= 0 or self.validation_size <= 0 or self.test_size <= 0:
            raise ConfigurationError("DoE, validation and test sizes must be positive")
        if self.budget < 0:
            raise ConfigurationError("budget must be non-negative")
        if self.doe_kind not in ("sobol", "halton"):
            raise ConfigurationError(f"unknown DoE sequence {self.doe_kind!r}")
        if self.criterion.scalar_qoi not in QOIS:
            raise ConfigurationError(f"unknown scalar QoI {self.criterion.scalar_qoi!r}")

    @property
    def field_training(self) -> str:
        if self.field.training != "auto":
            return self.field.training
        if self.field.kind == "neural" and self.criterion.kind is CriterionKind.SE_GP:
            return "post_hoc"
        return "coupled"

    def make_problem(self) -> Problem:
        return get_problem(self.problem, two_fields=self.two_fields, n_ts_range=tuple(self.n_ts_range))

    def input_space(self, problem: Problem | None = None) -> InputSpace:
        if self.space is not None:
            return self.space
        return (problem or self.make_problem()).space

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem": self.problem,
            "input_space": self.space.to_list() if self.space is not None else None,
            "n_ts_range": list(self.n_ts_range),
            "two_fields": self.two_fields,
            "doe": {"kind": self.doe_kind, "size": self.doe_size},
            "infill": {
                "criterion": self.criterion.to_dict(),
                "budget": self.budget,
                "de": self.de.to_dict(),
            },
            "field_surrogate": self.field.to_dict(),
            "gp_search": self.gp_search.to_dict(),
            "validation_size": self.validation_size,
            "test_size": self.test_size,
            "holdout_skip": self.holdout_skip,
            "targets": {"r2": self.target_r2, "nrmse": self.target_nrmse},
            "n_probe": self.n_probe,
            "seeds": {"base": self.seed},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CampaignConfig":
        known = {
            "problem", "input_space", "n_ts_range", "two_fields", "doe", "infill",
            "field_surrogate", "gp_search", "validation_size", "test_size",
            "holdout_skip", "targets", "n_probe", "seeds",
        }
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kw: dict[str, Any] = {}
        for key in ("problem", "two_fields", "validation_size", "test_size", "holdout_skip", "n_probe"):
            if key in d:
                kw[key] = d[key]
        if d.get("input_space"):
            kw["space"] = InputSpace.from_list(d["input_space"])
        if "n_ts_range" in d:
            kw["n_ts_range"] = tuple(d["n_ts_range"])
        doe = d.get("doe", {})
        if "kind" in doe:
            kw["doe_kind"] = doe["kind"]
        if "size" in doe:
            kw["doe_size"] = doe["size"]
        infill = d.get("infill", {})
        if "criterion" in infill:
            kw["criterion"] = CriterionSpec.from_dict(infill["criterion"])
        if "budget" in infill:
            kw["budget"] = infill["budget"]
        if "de" in infill:
            kw["de"] = DeConfig.from_dict(infill["de"])
        if "field_surrogate" in d:
            kw["field"] = FieldSurrogateConfig.from_dict(d["field_surrogate"])
        if "gp_search" in d:
            kw["gp_search"] = GpSearch.from_dict(d["gp_search"])
        targets = d.get("targets", {})
        if "r2" in targets:
            kw["target_r2"] = targets["r2"]
        if "nrmse" in targets:
            kw["target_nrmse"] = targets["nrmse"]
        if "seeds" in d:
            kw["seed"] = d["seeds"].get("base", 0)
        return cls(**kw)


def load_config(path) -> CampaignConfig:
    return CampaignConfig.from_dict(json.loads(Path(path).read_text()))


@dataclass(eq=False)
class Dataset:
    """Physical inputs ``(N, d)``, fields ``(N, p, F)`` and scalars per QoI."""

    inputs: np.ndarray
    fields: np.ndarray
    scalars: dict[str, np.ndarray]

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def append(self, xi, field, scalars: dict[str, float]) -> None:
        self.inputs = np.vstack([self.inputs, np.asarray(xi, dtype=float)[None, :]])
        self.fields = np.concatenate([self.fields, np.asarray(field)[None]], axis=0)
        self.scalars = {q: np.append(v, scalars[q]) for q, v in self.scalars.items()}

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.inputs).tobytes())
        h.update(np.ascontiguousarray(self.fields).tobytes())
        for q in sorted(self.scalars):
            h.update(np.ascontiguousarray(self.scalars[q]).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict[str, Any]:
        return {
            "inputs": self.inputs.tolist(),
            "fields": self.fields.tolist(),
            "scalars": {q: v.tolist() for q, v in self.scalars.items()},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Dataset":
        return cls(
            np.asarray(d["inputs"], dtype=float),
            np.asarray(d["fields"], dtype=float),
            {q: np.asarray(v, dtype=float) for q, v in d["scalars"].items()},
        )


def evaluate_points(problem: Problem, points) -> Dataset:
    evals = [problem.evaluate(x) for x in points]
    return Dataset(
        np.asarray(points, dtype=float),
        np.stack([e.field for e in evals]),
        {q: np.array([e.scalars[q] for e in evals]) for q in QOIS},
    )


@dataclass
class IterationRecord:
    iteration: int
    n_train: int
    xi: list[float] | None
    criterion: dict[str, float] | None
    metrics: dict[str, dict[str, float]]
    mean_sigma_gp: dict[str, float]
    mean_sigma_field: dict[str, float | None]

    def to_dict(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "n_train": self.n_train,
            "xi": self.xi,
            "criterion": self.criterion,
            "metrics": self.metrics,
            "mean_sigma_gp": self.mean_sigma_gp,
            "mean_sigma_field": self.mean_sigma_field,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "IterationRecord":
        return cls(**d)


@dataclass(eq=False)
class SurrogateSet:
    """Live surrogates of a campaign (not serialized directly)."""

    gps: dict[str, GpModel]
    field_model: Any = None
    field_scalars: dict[str, Any] = field(default_factory=dict)

    def predict_field(self, z) -> np.ndarray:
        """Mean field ``(m, p, F)`` at normalized inputs."""
        z = np.atleast_2d(z)
        if isinstance(self.field_model, pod.PodiModel):
            mean, _ = pod.predict_field(self.field_model, z)
            return mean.reshape((z.shape[0],) + self.field_model.field_shape)
        return self._neural_forward(z)

    def _neural_forward(self, z, chunk: int = 500) -> np.ndarray:
        model, graph = self.field_model
        parts = [nf.forward(model, graph, z[i : i + chunk]) for i in range(0, len(z), chunk)]
        return np.concatenate(parts, axis=0)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"gps": {q: g.to_dict() for q, g in self.gps.items()}}
        if isinstance(self.field_model, pod.PodiModel):
            out["field"] = {
                "kind": "podi",
                "kernels": [g.to_dict() for g in self.field_model.amplitude_gps],
            }
        elif self.field_model is not None:
            out["field"] = {
                "kind": "neural",
                "model": self.field_model[0].to_dict(),
                "uncertainty": {q: s.to_dict() for q, s in self.field_scalars.items()},
            }
        return out


@dataclass(eq=False)
class CampaignState:
    config: CampaignConfig
    train: Dataset
    validation: Dataset
    test: Dataset
    records: list[IterationRecord] = field(default_factory=list)
    failed: list[list[float]] = field(default_factory=list)
    surrogate_data: dict[str, Any] = field(default_factory=dict)
    format_version: int = STATE_VERSION

    @property
    def completed_infills(self) -> int:
        return len(self.records) - 1 if self.records else 0

    @property
    def done(self) -> bool:
        return self.completed_infills >= self.config.budget

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": self.format_version,
            "config": self.config.to_dict(),
            "train": self.train.to_dict(),
            "validation": self.validation.to_dict(),
            "test": self.test.to_dict(),
            "records": [r.to_dict() for r in self.records],
            "failed": self.failed,
            "surrogates": self.surrogate_data,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CampaignState":
        version = d.get("format_version")
        if version != STATE_VERSION:
            raise MigrationError(
                f"state format version {version!r} is not supported (expected {STATE_VERSION}); "
                "no migration path is available"
            )
        return cls(
            CampaignConfig.from_dict(d["config"]),
            Dataset.from_dict(d["train"]),
            Dataset.from_dict(d["validation"]),
            Dataset.from_dict(d["test"]),
            [IterationRecord.from_dict(r) for r in d["records"]],
            d.get("failed", []),
            d.get("surrogates", {}),
            version,
        )

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def save_state(state: CampaignState, path) -> Path:
    """Write the state as JSON atomically (temporary file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(state.to_dict())
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_state(path) -> CampaignState:
    raw = Path(path).read_bytes()
    try:
        data = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise StateParseError(f"{path}: invalid UTF-8 at byte {exc.start}") from exc
    except json.JSONDecodeError as exc:
        offset = len(exc.doc[: exc.pos].encode("utf-8"))
        raise StateParseError(f"{path}: {exc.msg} at byte {offset}") from exc
    if not isinstance(data, dict):
        raise StateParseError(f"{path}: top-level JSON value is not an object (byte 0)")
    try:
        return CampaignState.from_dict(data)
    except MigrationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise StateParseError(f"{path}: malformed state: {exc}") from exc


def derive_seed(base: int, tag: str, index: int = 0) -> int:
    """Stable 32-bit seed for a purpose tag and iteration index."""
    tag_int = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:4], "little")
    return int(np.random.SeedSequence([base, tag_int, index]).generate_state(1)[0])


class Campaign:
    """Runs the infill loop for one configuration and problem."""

    def __init__(self, config: CampaignConfig, problem: Problem | None = None):
        self.config = config
        self.problem = problem or config.make_problem()
        self.space = config.input_space(self.problem)
        if self.space.dimension != self.problem.space.dimension:
            raise ConfigurationError("black box and input space dimensions differ")
        self.graph = None
        if config.field.kind == "neural":
            mesh = self.problem.mesh
            self.graph = nf.MeshGraph.from_mesh(mesh.nodes, mesh.edges)
        crit = config.criterion
        if crit.needs_field and not self._field_supports(crit.scalar_qoi):
            raise ConfigurationError(f"field surrogate cannot integrate {crit.scalar_qoi!r}")

    def _field_supports(self, qoi: str) -> bool:
        try:
            self.problem.functional(qoi)
        except ConfigurationError:
            return False
        return True

    @property
    def field_qois(self) -> list[str]:
        qois = [q for q in QOIS if self._field_supports(q)]
        if self.config.field.kind == "neural":
            # MC dropout is costly: only the driving QoI
            qois = [q for q in qois if q == self.config.criterion.scalar_qoi]
        return qois

    def z(self, x) -> np.ndarray:
        return self.space.normalize(x)

    # -- setup -----------------------------------------------------------

    def initial_state(self) -> CampaignState:
        cfg = self.config
        d = self.space.dimension
        doe_u = unit_sequence(cfg.doe_kind, d, cfg.doe_size, skip=1)
        hold_skip = 1 + (cfg.doe_size if cfg.holdout_skip is None else cfg.holdout_skip)
        hold_u = unit_sequence(cfg.doe_kind, d, cfg.validation_size + cfg.test_size, skip=hold_skip)
        doe = self.space.transform(doe_u)
        hold = self.space.transform(hold_u)
        train = evaluate_points(self.problem, doe)
        validation = evaluate_points(self.problem, hold[: cfg.validation_size])
        test = evaluate_points(self.problem, hold[cfg.validation_size :])
        return CampaignState(cfg, train, validation, test)

    # -- surrogates ------------------------------------------------------

    def fit_gps(self, train: Dataset, iteration: int, previous: SurrogateSet | None) -> dict[str, GpModel]:
        z = self.z(train.inputs)
        gps = {}
        for i, q in enumerate(QOIS):
            search = replace(self.config.gp_search, seed=derive_seed(self.config.seed, f"gp-{q}", iteration))
            warm = previous.gps[q].kernel.length_scales if previous is not None else None
            gps[q] = gpmod.fit(z, train.scalars[q], search, warm_start=warm)
        return gps

    def fit_podi(self, train: Dataset, iteration: int) -> pod.PodiModel:
        fcfg = self.config.field
        search = replace(self.config.gp_search, seed=derive_seed(self.config.seed, "podi", iteration))
        return pod.fit_podi(self.z(train.inputs), train.fields, fcfg.n_modes, fcfg.energy, search)

    def train_neural(self, state: CampaignState, iteration: int, warm: nf.NeuralFieldModel | None):
        fcfg = self.config.field
        z = self.z(state.train.inputs)
        zv = self.z(state.validation.inputs)
        seed = derive_seed(self.config.seed, "neural", iteration)
        if warm is None:
            model = nf.init_model(fcfg.network, self.graph, z, state.train.fields, seed=seed)
            epochs = fcfg.network.max_epochs_initial
        else:
            model = warm
            epochs = fcfg.network.max_epochs_refit
        result = nf.train(model, self.graph, z, state.train.fields, zv, state.validation.fields, epochs, seed)
        return result.model

    def uncertainty(self, model: nf.NeuralFieldModel, iteration: int) -> dict[str, nf.UncertaintySurrogate]:
        fcfg = self.config.field
        out = {}
        for q in self.field_qois:
            seed = derive_seed(self.config.seed, f"probe-{q}", iteration)
            search = replace(fcfg.probe_search, seed=seed)
            out[q] = nf.build_uncertainty_surrogates(
                model, self.graph, self.space, self.problem.functional(q),
                fcfg.probe_count, fcfg.probe_samples, seed, search,
            )
        return out

    def fit_all(self, state: CampaignState, iteration: int, previous: SurrogateSet | None) -> SurrogateSet:
        gps = self.fit_gps(state.train, iteration, previous)
        surr = SurrogateSet(gps)
        fcfg = self.config.field
        if fcfg.kind == "podi":
            surr.field_model = self.fit_podi(state.train, iteration)
            surr.field_scalars = {q: surr.field_model.scalar(self.problem.functional(q)) for q in self.field_qois}
            return surr
        coupled = self.config.field_training == "coupled"
        final = iteration == self.config.budget
        if iteration == 0 or coupled or final:
            warm = None
            if coupled and previous is not None and previous.field_model is not None:
                warm = previous.field_model[0]
            model = self.train_neural(state, iteration, warm)
            surr.field_model = (model, self.graph)
            surr.field_scalars = self.uncertainty(model, iteration)
        elif previous is not None:
            surr.field_model = previous.field_model
            surr.field_scalars = previous.field_scalars
        return surr

    def restore(self, state: CampaignState) -> SurrogateSet:
        data = state.surrogate_data
        gps = {q: GpModel.from_dict(g) for q, g in data["gps"].items()}
        surr = SurrogateSet(gps)
        fdata = data.get("field")
        if fdata is None:
            return surr
        if fdata["kind"] == "podi":
            fcfg = self.config.field
            surr.field_model = pod.fit_podi(
                self.z(state.train.inputs), state.train.fields, fcfg.n_modes, fcfg.energy,
                kernels=fdata["kernels"],
            )
            surr.field_scalars = {q: surr.field_model.scalar(self.problem.functional(q)) for q in self.field_qois}
        else:
            surr.field_model = (nf.NeuralFieldModel.from_dict(fdata["model"]), self.graph)
            surr.field_scalars = {q: nf.UncertaintySurrogate.from_dict(s) for q, s in fdata["uncertainty"].items()}
        return surr

    # -- bookkeeping -----------------------------------------------------

    def field_is_current(self, iteration: int) -> bool:
        if self.config.field_training == "coupled":
            return True
        return iteration in (0, self.config.budget)

    def record(self, state: CampaignState, surr: SurrogateSet, iteration: int, proposal=None) -> IterationRecord:
        cfg = self.config
        zt = self.z(state.test.inputs)
        mets: dict[str, dict[str, float]] = {}
        sig_gp: dict[str, float] = {}
        sig_field: dict[str, float | None] = {}
        for q in QOIS:
            mets[q] = metrics(surr.gps[q].predict(zt).mean, state.test.scalars[q])
            sig_gp[q] = mean_epistemic_variance(surr.gps[q], self.space, cfg.n_probe, cfg.seed)
            sig_field[q] = None
        if surr.field_model is not None and self.field_is_current(iteration):
            pred = surr.predict_field(zt)
            mets["field"] = metrics(pred[..., 0], state.test.fields[..., 0])
            for q, s in surr.field_scalars.items():
                sig_field[q] = mean_epistemic_variance(s, self.space, cfg.n_probe, cfg.seed)
        return IterationRecord(
            iteration,
            len(state.train),
            None if proposal is None else proposal.xi.tolist(),
            None if proposal is None else proposal.breakdown.to_dict(),
            mets,
            sig_gp,
            sig_field,
        )

    def acquisition_surrogates(self, surr: SurrogateSet) -> Surrogates:
        q = self.config.criterion.scalar_qoi
        return Surrogates(gp=surr.gps.get(q), field=surr.field_scalars.get(q))

    # -- loop ------------------------------------------------------------

    def step(self, state: CampaignState, surr: SurrogateSet) -> SurrogateSet:
        cfg = self.config
        k = state.completed_infills + 1
        acq = self.acquisition_surrogates(surr)
        failures = 0
        while True:
            de = replace(cfg.de, seed=derive_seed(cfg.seed, "de", k) + failures)
            existing = self.z(np.vstack([state.train.inputs, *(np.atleast_2d(f) for f in state.failed)]))
            proposal = propose_infill(cfg.criterion, acq, self.space, de, existing)
            try:
                ev = self.problem.evaluate(proposal.xi)
                if not (np.all(np.isfinite(ev.field)) and all(math.isfinite(v) for v in ev.scalars.values())):
                    raise ValueError("non-finite black-box output")
                break
            except Exception as exc:  # black boxes may fail arbitrarily
                failures += 1
                state.failed.append(proposal.xi.tolist())
                logger.warning("black box failed at %s: %s", proposal.xi, exc)
                if failures >= MAX_CONSECUTIVE_FAILURES:
                    raise BlackBoxError(f"{failures} consecutive black-box failures") from exc
        state.train.append(proposal.xi, ev.field, ev.scalars)
        new = self.fit_all(state, k, surr)
        state.records.append(self.record(state, new, k, proposal))
        state.surrogate_data = new.to_dict()
        return new

    def start(self) -> tuple[CampaignState, SurrogateSet]:
        state = self.initial_state()
        surr = self.fit_all(state, 0, None)
        state.records.append(self.record(state, surr, 0))
        state.surrogate_data = surr.to_dict()
        return state, surr


OnIteration = Callable[[CampaignState, SurrogateSet, "Campaign"], None]


def run_campaign(
    config: CampaignConfig,
    black_box: Problem | None = None,
    state: CampaignState | None = None,
    until: int | None = None,
    on_iteration: OnIteration | None = None,
) -> CampaignState:
    """Run (or resume) a campaign.

    Parameters
    ----------
    config : CampaignConfig
    black_box : Problem, optional
        Defaults to the problem named in the config.
    state : CampaignState, optional
        Resume from this state (it is mutated in place).
    until : int, optional
        Stop after this many completed infills (at most the budget).
    on_iteration : callable, optional
        Called as ``on_iteration(state, surrogates, campaign)`` after the DoE
        fit and after every infill.
    """
    campaign = Campaign(config, black_box)
    if state is None:
        state, surr = campaign.start()
        if on_iteration:
            on_iteration(state, surr, campaign)
    else:
        surr = campaign.restore(state)
    stop = config.budget if until is None else min(until, config.budget)
    while state.completed_infills < stop:
        surr = campaign.step(state, surr)
        if on_iteration:
            on_iteration(state, surr, campaign)
    return state


def restore_surrogates(state: CampaignState, black_box: Problem | None = None) -> tuple[Campaign, SurrogateSet]:
    campaign = Campaign(state.config, black_box)
    return campaign, campaign.restore(state)


def baseline_sweep(config: CampaignConfig, sizes, black_box: Problem | None = None) -> dict[int, CampaignState]:
    """No-infill campaigns for several DoE sizes sharing one holdout block.

    The holdout starts after the largest DoE unless ``config.holdout_skip``
    is set, so all runs are scored on the same validation and test points.
    """
    sizes = list(sizes)
    skip = config.holdout_skip if config.holdout_skip is not None else max(sizes)
    out = {}
    for n in sizes:
        cfg = replace(config, doe_size=n, budget=0, holdout_skip=skip)
        out[n] = run_campaign(cfg, black_box)
    return out


# -- tabular outputs -------------------------------------------------------


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def metrics_rows(state: CampaignState) -> list[list[str]]:
    rows = []
    for rec in state.records:
        for q, m in rec.metrics.items():
            rows.append([
                str(rec.iteration), q, _fmt(m["r2"]), _fmt(m["nrmse"]),
                _fmt(rec.mean_sigma_gp.get(q)), _fmt(rec.mean_sigma_field.get(q)),
            ])
    return rows


def write_metrics_csv(state: CampaignState, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "qoi", "r2", "nrmse", "mean_sigma_gp", "mean_sigma_field"])
        w.writerows(metrics_rows(state))
    return path


def write_trace_csv(state: CampaignState, path) -> Path:
    path = Path(path)
    kind = state.config.criterion.kind.value
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "kind", "sigma_gp_part", "misfit_part", "sigma_field_part", "pdf_value", "total"])
        for rec in state.records:
            c = rec.criterion
            if c is None:
                continue
            w.writerow([rec.iteration, kind, *(_fmt(c[k]) for k in (
                "sigma_gp_part", "misfit_part", "sigma_field_part", "pdf_value", "total"))])
    return path


def first_reaching(state: CampaignState, qoi: str) -> int | None:
    """Smallest training-set size at which ``qoi`` meets both targets."""
    cfg = state.config
    for rec in state.records:
        m = rec.metrics.get(qoi)
        if m and m["r2"] >= cfg.target_r2 and m["nrmse"] <= cfg.target_nrmse:
            return rec.n_train
    return None


def summary(state: CampaignState) -> dict[str, Any]:
    last = state.records[-1]
    return {
        "problem": state.config.problem,
        "criterion": state.config.criterion.kind.value,
        "field_surrogate": state.config.field.kind,
        "doe_size": state.config.doe_size,
        "completed_infills": state.completed_infills,
        "n_train": len(state.train),
        "final_metrics": last.metrics,
        "final_mean_sigma_gp": last.mean_sigma_gp,
        "final_mean_sigma_field": last.mean_sigma_field,
        "targets": {"r2": state.config.target_r2, "nrmse": state.config.target_nrmse},
        "n_train_reaching_targets": {q: first_reaching(state, q) for q in last.metrics},
        "failed_points": len(state.failed),
        "state_digest": state.digest(),
    }


def field_errors(state: CampaignState, surr: SurrogateSet, campaign: Campaign) -> np.ndarray:
    """Predicted minus true primary field on the test set, shape ``(p, n_test)``."""
    pred = surr.predict_field(campaign.z(state.test.inputs))
    return (pred[..., 0] - state.test.fields[..., 0]).T


def write_field_errors(path, state: CampaignState, surr: SurrogateSet, campaign: Campaign) -> Path:
    err = field_errors(state, surr, campaign)
    nodes = campaign.problem.mesh.nodes
    coord_names = ["s", "t"][: nodes.shape[1]]
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_index", *coord_names, *[f"test_{j}" for j in range(err.shape[1])]])
        for i in range(err.shape[0]):
            w.writerow([i, *map(repr, nodes[i].tolist()), *map(repr, err[i].tolist())])
    return path
