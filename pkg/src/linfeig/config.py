"""Run configuration: strict YAML schema, located diagnostics and a stable hash."""

from __future__ import annotations

import hashlib
import json
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .continuation import ContinuationSettings, default_p0
from .densities import F_CATALOGUE, G_CATALOGUE, DensityF, DensityG, make_f, make_g
from .discretization import BCMode, Discretization
from .geometry import DomainSpec, build_grid
from .psolver import SolverSettings


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` carries the field path and line."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainConfig(_Strict):
    kind: Literal["interval", "rectangle", "disc"]
    bounds: list[float] | None = None
    center: list[float] | None = None
    radius: float | None = None

    @model_validator(mode="after")
    def _shape(self):
        if self.kind == "disc":
            if self.radius is None or self.bounds is not None:
                raise ValueError("disc needs 'radius' (and optional 'center'), not 'bounds'")
            if self.center is not None and len(self.center) != 2:
                raise ValueError("disc center must have two coordinates")
        else:
            need = 2 if self.kind == "interval" else 4
            if self.bounds is None or len(self.bounds) != need:
                raise ValueError(f"{self.kind} needs 'bounds' with {need} numbers")
            if self.radius is not None or self.center is not None:
                raise ValueError(f"{self.kind} takes no 'radius' or 'center'")
        return self

    def spec(self, N: int) -> DomainSpec:
        if self.kind == "interval":
            return DomainSpec.interval(*self.bounds, target_dim=N)
        if self.kind == "rectangle":
            return DomainSpec.rectangle(*self.bounds, target_dim=N)
        return DomainSpec.disc(tuple(self.center or (0.0, 0.0)), self.radius, target_dim=N)


class DensityConfig(_Strict):
    name: str
    params: dict[str, float] = Field(default_factory=dict)


class GridConfig(_Strict):
    resolution: int = Field(ge=5)


class ScheduleConfig(_Strict):
    p0: float | None = Field(default=None, gt=1)
    factor: float = Field(default=2.0, gt=1)
    p_max: float = Field(default=512.0, gt=1)
    tol_lambda: float = Field(default=0.0, ge=0)


class SolverConfig(_Strict):
    outer_iterations: int = Field(default=40, gt=0)
    inner_iterations: int = Field(default=3000, gt=0)
    penalty_growth: float = Field(default=10.0, gt=1)
    initial_penalty: float = Field(default=10.0, gt=0)
    gradient_tolerance: float = Field(default=1e-6, gt=0)
    constraint_tolerance: float = Field(default=1e-10, gt=0)
    memory: int = Field(default=30, gt=0)


class OutputConfig(_Strict):
    directory: str = "run"
    formats: list[Literal["json", "csv"]] = Field(default_factory=lambda: ["json", "csv"])


class RunConfig(_Strict):
    domain: DomainConfig
    bc: Literal["clamped", "hinged"] = "hinged"
    N: int = Field(default=1, ge=1)
    f: DensityConfig
    g: DensityConfig
    grid: GridConfig
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    seed: int = 0
    test_fields: int = Field(default=20, ge=1)

    @field_validator("f")
    @classmethod
    def _f_known(cls, v):
        if v.name not in F_CATALOGUE:
            raise ValueError(f"unknown f density {v.name!r}; choose from {sorted(F_CATALOGUE)}")
        return v

    @field_validator("g")
    @classmethod
    def _g_known(cls, v):
        if v.name not in G_CATALOGUE:
            raise ValueError(f"unknown g density {v.name!r}; choose from {sorted(G_CATALOGUE)}")
        return v

    # -- derived objects --
    @property
    def dim(self) -> int:
        return 1 if self.domain.kind == "interval" else 2

    def resolved_p0(self) -> float:
        if self.schedule.p0 is not None:
            return self.schedule.p0
        return default_p0(self.dim, self.density_f().alpha)

    def density_f(self) -> DensityF:
        return make_f(self.f.name, **self.f.params)

    def density_g(self) -> DensityG:
        return make_g(self.g.name, **self.g.params)

    def domain_spec(self) -> DomainSpec:
        return self.domain.spec(self.N)

    def discretization(self) -> Discretization:
        return Discretization(build_grid(self.domain_spec(), self.grid.resolution), BCMode(self.bc))

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(**self.solver.model_dump(), seed=self.seed)

    def continuation_settings(self) -> ContinuationSettings:
        return ContinuationSettings(p0=self.resolved_p0(), factor=self.schedule.factor,
                                    p_max=self.schedule.p_max, tol_lambda=self.schedule.tol_lambda,
                                    solver=self.solver_settings(), seed=self.seed,
                                    test_fields=self.test_fields)

    def canonical(self) -> dict:
        """Everything that affects the numbers (the output location does not)."""
        d = self.model_dump(mode="json")
        d.pop("output")
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _node_lines(node, path=()):
    """Map key paths to 1-based source lines from a composed YAML node tree."""
    out = {path: node.start_mark.line + 1}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            out[path + (k.value,)] = k.start_mark.line + 1
            out.update({p: ln for p, ln in _node_lines(v, path + (k.value,)).items()
                        if p != path + (k.value,)})
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out.update(_node_lines(v, path + (i,)))
    return out


def _locate(lines: dict, loc: tuple) -> int | None:
    loc = tuple(x for x in loc if not (isinstance(x, str) and x.startswith("function-")))
    for cut in range(len(loc), -1, -1):
        key = tuple(str(x) if isinstance(x, str) else x for x in loc[:cut])
        if key in lines:
            return lines[key]
    return None


def _semantic_errors(cfg: RunConfig) -> list[tuple[tuple, str]]:
    """Cross-field checks run after schema validation, each tied to a field path."""
    errs = []
    try:
        cfg.density_f()
    except (TypeError, ValueError) as exc:
        errs.append((("f", "params"), str(exc)))
    try:
        cfg.density_g()
    except (TypeError, ValueError) as exc:
        errs.append((("g", "params"), str(exc)))
    if not errs:
        p0 = cfg.resolved_p0()
        if cfg.schedule.p_max < p0:
            errs.append((("schedule", "p_max"),
                         f"p_max ({cfg.schedule.p_max:g}) is below p0 ({p0:g})"))
    try:
        cfg.domain_spec()
    except ValueError as exc:
        errs.append((("domain",), str(exc)))
    return errs


def _format(source, lines, loc, msg):
    field = ".".join(str(x) for x in loc) or "<root>"
    line = _locate(lines, loc)
    at = f" (line {line})" if line is not None else ""
    return f"{source}: field '{field}'{at}: {msg}"


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{source}:{where}: malformed YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    lines = _node_lines(node) if node is not None else {}
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        msgs = [_format(source, lines, tuple(e["loc"]), e["msg"]) for e in exc.errors()]
        raise ConfigError("\n".join(msgs)) from None
    errs = _semantic_errors(cfg)
    if errs:
        raise ConfigError("\n".join(_format(source, lines, loc, msg) for loc, msg in errs))
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path)
