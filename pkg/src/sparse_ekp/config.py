"""Experiment configuration: a strict JSON schema and problem/solver builders."""
from __future__ import annotations

import copy
import hashlib
import json
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .core import DEFAULT_PINV_TOL, DEFAULT_THETA_FLOOR
from .driver import OuterConfig
from .hyperprior import HyperParams
from .kalman import KalmanConfig
from . import problems

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProblemBlock(_Strict):
    kind: Literal["linear", "transport", "elliptic"]
    d: int = 300
    k: int = 30
    sparsity: int = 4
    noise_std: Optional[float] = None
    seed: Optional[int] = 0
    magnitude: Optional[Tuple[float, float]] = None

    @field_validator("d", "k")
    @classmethod
    def _positive(cls, v):
        if v < 1:
            raise ValueError("dimensions must be positive")
        return v

    @model_validator(mode="after")
    def _sparsity_fits(self):
        if self.kind == "linear" and not 0 <= self.sparsity <= self.d:
            raise ValueError("sparsity must lie in [0, d]")
        return self


class SolverBlock(_Strict):
    variant: Literal["iekf", "iekf-sl"] = "iekf"
    N: int = Field(100, ge=2)
    T: int = Field(20, ge=1)
    alpha: float = Field(0.5, gt=0)
    r: Union[float, str] = 1.0
    beta: Optional[float] = None
    vartheta: float = Field(1.0, gt=0)
    theta0: float = Field(0.1, gt=0)
    max_outer: int = Field(4, ge=1)
    tau: Optional[float] = Field(None, gt=0)
    stopping: Literal["fixed", "morozov"] = "fixed"
    pinv_tol: float = Field(DEFAULT_PINV_TOL, gt=0)
    theta_floor: float = Field(DEFAULT_THETA_FLOOR, gt=0)

    @field_validator("r")
    @classmethod
    def _parse_r(cls, v):
        r = float(Fraction(v)) if isinstance(v, str) else float(v)
        if r == 0:
            raise ValueError("r must be non-zero")
        return r

    @model_validator(mode="after")
    def _closed_form(self):
        hp = HyperParams(self.r, self.beta, self.vartheta)
        if self.r != -1 and not hp.is_gengamma_closed_form():
            raise ValueError(
                f"generalized-gamma updates need r > 0 and r*beta = 3/2 (r={self.r}, beta={hp.beta})"
            )
        return self


class OutputBlock(_Strict):
    directory: str = "runs/out"
    formats: List[Literal["json", "csv"]] = ["json", "csv"]
    record_ensembles: bool = False


class ReplicateBlock(_Strict):
    seeds: List[int] = [0]


class ExperimentConfig(_Strict):
    name: str = "experiment"
    problem: ProblemBlock
    solver: SolverBlock = SolverBlock()
    output: OutputBlock = OutputBlock()
    replicates: ReplicateBlock = ReplicateBlock()

    def problem_hash(self) -> str:
        blob = json.dumps(self.problem.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def config_hash(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def hyperparams(self) -> HyperParams:
        s = self.solver
        return HyperParams(s.r, s.beta, s.vartheta)

    def outer_config(self) -> OuterConfig:
        s = self.solver
        inner = KalmanConfig(alpha=s.alpha, T=s.T, N=s.N, stopping=s.stopping, pinv_tol=s.pinv_tol)
        return OuterConfig(
            inner=inner,
            hp=self.hyperparams(),
            theta0=s.theta0,
            max_outer=s.max_outer,
            rel_tol=s.tau,
            variant=s.variant,
            record_ensembles=self.output.record_ensembles,
            theta_floor=s.theta_floor,
        )

    def build_problem(self, replicate_seed: int):
        """Problem instance; a null problem seed ties the data to the replicate."""
        p = self.problem
        seed = replicate_seed if p.seed is None else p.seed
        if p.kind == "linear":
            sigma = 0.1 if p.noise_std is None else p.noise_std
            kw = {} if p.magnitude is None else {"magnitude": p.magnitude}
            return problems.make_linear_problem(p.d, p.k, p.sparsity, seed, sigma**2, **kw)
        if p.kind == "transport":
            sigma = 0.1 if p.noise_std is None else p.noise_std
            return problems.make_transport_problem(seed=seed, sigma=sigma)
        sigma = 0.1 if p.noise_std is None else p.noise_std
        kw = {} if p.magnitude is None else {"magnitude": p.magnitude}
        return problems.make_elliptic_problem(seed=seed, sigma=sigma, **kw)


def _set_path(tree: dict, dotted: str, value):
    keys = dotted.split(".")
    node = tree
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ValueError(f"cannot set {dotted}: {k} is not a block")
    node[keys[-1]] = value


def parse_override(text: str):
    if "=" not in text:
        raise ValueError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def bundled_configs() -> List[str]:
    root = resources.files("sparse_ekp") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def read_config_source(path_or_name: str) -> dict:
    path = Path(path_or_name)
    if path.is_file():
        return json.loads(path.read_text())
    res = resources.files("sparse_ekp") / "configs" / f"{path_or_name}.json"
    if res.is_file():
        return json.loads(res.read_text())
    raise FileNotFoundError(
        f"no config file {path_or_name!r} and no bundled config of that name "
        f"(bundled: {', '.join(bundled_configs())})"
    )


def load_config(path_or_name: str, overrides=(), seeds=None, out=None) -> ExperimentConfig:
    raw = copy.deepcopy(read_config_source(path_or_name))
    raw.pop("schema_version", None)
    for item in overrides:
        key, value = parse_override(item)
        _set_path(raw, key, value)
    if seeds is not None:
        _set_path(raw, "replicates.seeds", list(seeds))
    if out is not None:
        _set_path(raw, "output.directory", str(out))
    return ExperimentConfig.model_validate(raw)
