"""Experiment configuration documents (YAML) and their validation."""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from lookdown.engine import MutationModel
from lookdown.errors import ConfigError
from lookdown.measures import BranchingMechanism, LambdaSpec, NuSpec

EXPERIMENTS = (
    "rates",
    "gfv-simulate",
    "verify-product-h",
    "verify-conditioning",
    "verify-generators",
    "verify-intertwining",
    "verify-decomposition",
    "verify-additive",
    "verify-cbi",
    "verify-tagged-jumps",
)


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class NuBlock(_Strict):
    kind: Literal["none", "beta", "atoms"] = "none"
    alpha: Optional[float] = None
    atoms: list[tuple[float, float]] = []

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "beta" and (self.alpha is None or not 1.0 < self.alpha < 2.0):
            raise ValueError("alpha must lie in (1,2)")
        if self.kind != "beta" and self.alpha is not None:
            raise ValueError("alpha is only meaningful for kind beta")
        if self.kind == "atoms":
            if not self.atoms:
                raise ValueError("kind atoms needs at least one atom")
            for x, w in self.atoms:
                if not 0.0 < x <= 1.0:
                    raise ValueError(f"atom location {x} must lie in (0,1]")
                if not w > 0.0:
                    raise ValueError(f"atom weight {w} must be positive")
        elif self.atoms:
            raise ValueError("atoms are only meaningful for kind atoms")
        return self


class LambdaBlock(_Strict):
    c: float = Field(0.0, ge=0.0)
    nu: NuBlock = NuBlock()

    def build(self) -> LambdaSpec:
        nu = self.nu
        if nu.kind == "beta":
            return LambdaSpec(self.c, NuSpec.beta(nu.alpha))
        if nu.kind == "atoms":
            return LambdaSpec(self.c, NuSpec.from_atoms(nu.atoms))
        return LambdaSpec(self.c, NuSpec.none())


class NuYBlock(_Strict):
    atoms: list[tuple[float, float]] = []

    @field_validator("atoms")
    @classmethod
    def _positive(cls, v):
        for u, w in v:
            if not (u > 0 and w > 0):
                raise ValueError("jump atoms need positive size and weight")
        return v


class BranchingBlock(_Strict):
    sigma2: float = Field(1.0, ge=0.0)
    beta: float = 0.0
    nuY: NuYBlock = NuYBlock()

    def build(self) -> BranchingMechanism:
        return BranchingMechanism(self.sigma2, self.beta, tuple(map(tuple, self.nuY.atoms)))


class MutationBlock(_Strict):
    kind: Literal["none", "chain", "brownian"] = "none"
    rates: Optional[list[list[float]]] = None
    diffusion: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind == "chain" and self.rates is None:
            raise ValueError("chain mutation needs a rate matrix")
        if self.kind == "brownian" and self.diffusion is None:
            raise ValueError("brownian mutation needs a diffusion constant")
        try:
            self.build()
        except ConfigError as e:
            raise ValueError(str(e)) from None
        return self

    def build(self) -> MutationModel:
        if self.kind == "chain":
            return MutationModel.chain(self.rates)
        if self.kind == "brownian":
            return MutationModel.brownian(self.diffusion)
        return MutationModel.none()


class HarmonicBlock(_Strict):
    kind: Literal["constant", "eigen", "terminal", "exponential"] = "constant"
    h: Optional[list[float]] = None
    theta: float = 0.0
    T: Optional[float] = None

    @model_validator(mode="after")
    def _check(self):
        if self.kind in ("eigen", "terminal") and self.h is None:
            raise ValueError(f"harmonic kind {self.kind} needs h")
        if self.kind == "terminal" and (self.T is None or self.T < 0):
            raise ValueError("harmonic kind terminal needs a nonnegative terminal time T")
        return self


class Tolerances(_Strict):
    sigmas: float = Field(3.0, gt=0)
    ks: float = Field(0.01, gt=0, lt=1)
    rel: float = Field(0.05, gt=0)
    residual: float = Field(1e-8, gt=0)


class ExperimentConfig(_Strict):
    """Validated experiment document; ``None`` fields take per-experiment defaults."""

    experiment: Literal[EXPERIMENTS]  # type: ignore[valid-type]
    seed: int = Field(ge=0)
    replicas: Optional[int] = Field(None, ge=2)
    workers: Optional[int] = Field(None, ge=1)
    out: str = "out"
    lambda_: LambdaBlock = Field(default_factory=LambdaBlock, alias="lambda")
    branching: BranchingBlock = BranchingBlock()
    N: Optional[int] = Field(None, ge=2)
    K: Optional[int] = Field(None, ge=1)
    alphabet: Optional[int] = Field(None, ge=2)
    horizon: Optional[float] = Field(None, gt=0)
    sample_times: Optional[list[float]] = None
    R0: Optional[list[float]] = None
    dirichlet: Optional[list[float]] = None
    mutation: MutationBlock = MutationBlock()
    harmonic: HarmonicBlock = HarmonicBlock()
    tolerances: Tolerances = Tolerances()
    mode: Optional[Literal["gfv", "cb"]] = None
    s: Optional[float] = Field(None, ge=0)
    condition_times: Optional[list[float]] = None
    h_replicas: Optional[int] = Field(None, ge=2)
    floor: Optional[float] = Field(None, gt=0, lt=1)
    decay: Optional[bool] = None
    decay_times: Optional[list[float]] = None
    x_grid: Optional[list[float]] = None
    x0: Optional[float] = Field(None, ge=0)
    dt: Optional[float] = Field(None, gt=0)
    deltas: Optional[list[float]] = None
    lambdas: Optional[list[float]] = None
    imax: Optional[int] = Field(None, ge=1)
    streams: Optional[int] = Field(None, ge=2)
    asymptote_j: Optional[int] = Field(None, ge=2)
    cross_simulation: Optional[bool] = None
    dump_replicas: Optional[int] = Field(None, ge=0)

    @field_validator("sample_times", "condition_times", "decay_times")
    @classmethod
    def _times(cls, v):
        if v is not None:
            if not v or any(t < 0 for t in v) or any(b < a for a, b in zip(v, v[1:])):
                raise ValueError("times must be a nonempty nondecreasing list of nonnegative reals")
        return v

    @field_validator("R0")
    @classmethod
    def _prob(cls, v):
        if v is not None and (any(p < 0 for p in v) or abs(sum(v) - 1.0) > 1e-12):
            raise ValueError("R0 must be a probability vector")
        return v

    @field_validator("dirichlet")
    @classmethod
    def _dirichlet(cls, v):
        if v is not None and (len(v) < 2 or any(a <= 0 for a in v)):
            raise ValueError("Dirichlet parameters must be positive, at least two")
        return v

    @field_validator("deltas")
    @classmethod
    def _deltas(cls, v):
        if v is not None and (len(v) < 2 or any(b >= a for a, b in zip(v, v[1:])) or v[-1] <= 0):
            raise ValueError("deltas must be positive and strictly decreasing, at least two")
        return v

    @model_validator(mode="after")
    def _cross(self):
        _fill_defaults(self)
        if self.R0 is not None and self.dirichlet is not None:
            raise ValueError("give at most one of R0 and dirichlet")
        width = len(self.R0 or self.dirichlet or [])
        if width and width != self.alphabet:
            raise ValueError(f"initial law has {width} entries but the alphabet has {self.alphabet}")
        if self.K > self.alphabet:
            raise ValueError("K must not exceed the alphabet size")
        if self.mutation.kind == "chain" and len(self.mutation.rates) != self.alphabet:
            raise ValueError("rate matrix size must equal the alphabet size")
        if self.horizon is not None and max(self.sample_times) > self.horizon:
            raise ValueError("sample times must lie in [0, horizon]")
        return self

    @property
    def spec(self) -> LambdaSpec:
        return self.lambda_.build()

    @property
    def bm(self) -> BranchingMechanism:
        return self.branching.build()

    def initial_law(self):
        from lookdown.engine import Dirichlet
        if self.dirichlet is not None:
            return Dirichlet(tuple(self.dirichlet))
        import numpy as np
        return np.asarray(self.R0, dtype=float)

    def canonical(self) -> dict:
        """Plain data of the resolved config; ``out`` and ``workers`` excluded
        since neither changes any result."""
        return self.model_dump(by_alias=True, exclude={"out", "workers"}, mode="json")


# documented defaults, per experiment, for every None-valued field
_COMMON = dict(K=2, alphabet=2, dump_replicas=20)
DEFAULTS: dict[str, dict] = {
    "rates": dict(N=50, horizon=10.0, streams=200, imax=20, asymptote_j=500, sample_times=[10.0]),
    "gfv-simulate": dict(N=200, replicas=10000, sample_times=[0.5, 1.0]),
    "verify-product-h": dict(N=200, replicas=10000, sample_times=[0.25, 0.5, 1.0], s=0.5),
    "verify-conditioning": dict(N=50, replicas=100000, h_replicas=10000, s=0.5,
                                condition_times=[1.0, 2.0, 4.0], floor=1e-4, decay=False,
                                decay_times=[0.5, 1.0, 2.0], sample_times=[0.5]),
    "verify-generators": dict(x_grid=[0.1 * i for i in range(1, 10)], x0=0.5, s=0.5, dt=1e-3,
                              deltas=[0.02, 0.01, 0.005], replicas=10000, N=200,
                              cross_simulation=True, sample_times=[0.5]),
    "verify-intertwining": dict(x_grid=[0.1 * i for i in range(1, 10)], sample_times=[0.0]),
    "verify-decomposition": dict(N=200, replicas=10000, x0=0.5, s=0.5, dt=1e-3, sample_times=[0.5]),
    "verify-additive": dict(N=200, replicas=10000, sample_times=[0.5, 1.0], mode="gfv", x0=1.0,
                            dt=2e-3),
    "verify-cbi": dict(replicas=10000, x0=1.0, s=1.0, dt=1e-3, lambdas=[1.0], sample_times=[1.0]),
    "verify-tagged-jumps": dict(replicas=10000, x0=1.0, s=1.0, dt=1e-3, lambdas=[0.5, 1.0, 2.0],
                                sample_times=[1.0]),
}
# experiments whose default intensity differs from the zero measure
DEFAULT_LAMBDA = {
    "rates": {"c": 0.0, "nu": {"kind": "beta", "alpha": 1.5}},
    "gfv-simulate": {"c": 1.0},
    "verify-product-h": {"c": 1.0},
    "verify-conditioning": {"c": 1.0},
    "verify-generators": {"c": 1.0},
    "verify-intertwining": {"c": 1.0},
    "verify-decomposition": {"c": 1.0},
    "verify-additive": {"c": 1.0},
}
DEFAULT_BRANCHING = {
    "verify-tagged-jumps": {"sigma2": 0.0, "beta": 0.0, "nuY": {"atoms": [[1.0, 1.0]]}},
}


def _fill_defaults(cfg: ExperimentConfig):
    for key, value in {**_COMMON, **DEFAULTS[cfg.experiment]}.items():
        if getattr(cfg, key) is None:
            setattr(cfg, key, value)
    if cfg.R0 is None and cfg.dirichlet is None:
        cfg.R0 = [1.0 / cfg.alphabet] * cfg.alphabet


def _prefill(data: dict) -> dict:
    """Insert the per-experiment intensity and branching blocks when absent."""
    name = data.get("experiment")
    out = dict(data)
    if "lambda" not in out and name in DEFAULT_LAMBDA:
        out["lambda"] = DEFAULT_LAMBDA[name]
    if "branching" not in out and name in DEFAULT_BRANCHING:
        out["branching"] = DEFAULT_BRANCHING[name]
    return out


def _format(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        msg = e["msg"]
        for prefix in ("Value error, ", "Assertion failed, "):
            if msg.startswith(prefix):
                msg = msg[len(prefix):]
        lines.append(f"{path}: {msg}")
    return "\n".join(lines)


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a YAML document; every violation is listed in the ConfigError."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"<document>: not valid YAML ({e})") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("<document>: expected a mapping at the top level")
    data = _prefill(data)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format(e)) from None


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"<document>: cannot read {path}: {e.strerror}") from None
    return parse_config(text, overrides)
