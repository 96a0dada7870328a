"""Scenario files: one YAML document per run, unknown keys rejected."""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from importlib import resources
from typing import Any

import yaml

from .history import InitialFunction
from .integrator import SolverConfig
from .sdd_rhs import (DelayFunctional, KernelSpec, PointwiseNonlinearity, SddRightHandSide,
                      assemble_B)
from .spectral import DomainSpec, build_basis


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSection:
    length: float = math.pi
    n_grid: int = 128


@dataclass(frozen=True)
class KernelSection:
    profile: str = "gaussian"
    amplitude: float = 1.0
    sigma: float = 1.0
    value: float = 1.0
    ell: str = "bump"
    center: float | None = None
    width: float | None = None
    quad_factor: int = 4
    lb_modes: int = 256


@dataclass(frozen=True)
class NonlinearitySection:
    kind: str = "nicholson"
    p: float = 2.0
    slope: float = 1.0
    level: float = 1.0
    value: float = 0.0


@dataclass(frozen=True)
class DelaySection:
    kind: str = "history_energy"
    r: float = 1.0
    tau0: float = 0.0
    kappa: float = 1.0


@dataclass(frozen=True)
class InitialSection:
    kind: str = "trig"
    params: dict = field(default_factory=lambda: {"offset": [1.0, 0.0, 0.5],
                                                  "amplitude": [0.3, 0.0, 0.1], "omega": 3.0})
    manifold: bool = True
    n_segments: int = 64


@dataclass(frozen=True)
class SolverSection:
    dt: float = 1e-3
    T: float = 10.0
    fp_tol: float = 1e-10
    fp_max_iter: int = 50
    scheme: int = 2
    backend: str = "auto"


@dataclass(frozen=True)
class VerifySection:
    estimates: list = field(default_factory=lambda: [
        "energy", "continuous_dependence", "dissipativity", "lemma1", "hb", "eta",
        "manifold", "semigroup", "remark4", "remark5"])
    cd_T: float = 2.0
    cd_perturbation: float = 1e-4
    n_initials: int = 8
    initial_factor: float = 10.0
    T_max: float | None = None
    n_samples: int = 1000
    workers: int = 2


@dataclass(frozen=True)
class StudySection:
    m_list: list = field(default_factory=lambda: [4, 8, 16, 32])
    T: float | None = None
    sweep_parameter: str = "d"
    sweep_values: list = field(default_factory=lambda: [0.0, 0.1, 1.0])
    workers: int = 2


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    prefix: str = ""


@dataclass(frozen=True)
class Scenario:
    name: str = "nicholson"
    seed: int = 20240611
    m: int = 16
    d: float = 0.1
    domain: DomainSection = DomainSection()
    kernel: KernelSection = KernelSection()
    nonlinearity: NonlinearitySection = NonlinearitySection()
    delay: DelaySection = DelaySection()
    initial: InitialSection = InitialSection()
    solver: SolverSection = SolverSection()
    verify: VerifySection = VerifySection()
    study: StudySection = StudySection()
    output: OutputSection = OutputSection()

    # -------------------------------------------------------- construction
    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def basis(self, m: int | None = None):
        return build_basis(DomainSpec(**asdict(self.domain)), self.m if m is None else m)

    def rhs(self, m: int | None = None, d: float | None = None) -> SddRightHandSide:
        basis = self.basis(m)
        B = assemble_B(KernelSpec(**asdict(self.kernel)), basis)
        return SddRightHandSide(basis, B, PointwiseNonlinearity(**asdict(self.nonlinearity)),
                                DelayFunctional(**asdict(self.delay)), self.d if d is None else d)

    def solver_config(self, **over) -> SolverConfig:
        kw = asdict(self.solver)
        kw["backend"] = None if kw["backend"] == "auto" else kw["backend"]
        kw.update(over)
        return SolverConfig(**kw)

    def initial_shape(self, m: int | None = None) -> InitialFunction:
        return InitialFunction(self.initial.kind, dict(self.initial.params), self.delay.r,
                               self.m if m is None else m)

    def initial_history(self, rhs: SddRightHandSide):
        from .integrator import make_manifold_initial
        shape = self.initial_shape(rhs.m)
        if self.initial.manifold:
            return make_manifold_initial(shape, rhs, n_segments=self.initial.n_segments)
        return shape.render(rhs.basis.eigenvalues, n_segments=self.initial.n_segments)

    def provenance(self) -> dict:
        return {"scenario": self.name, "config_hash": self.config_hash(), "seed": self.seed}

    def with_override(self, dotted: str, value) -> "Scenario":
        data = self.to_dict()
        node = data
        keys = dotted.split(".")
        for k in keys[:-1]:
            if k not in node or not isinstance(node[k], dict):
                raise ConfigError(f"unknown parameter path {dotted!r}")
            node = node[k]
        if keys[-1] not in node:
            raise ConfigError(f"unknown parameter path {dotted!r}")
        node[keys[-1]] = value
        return from_dict(data)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join((path + '.' if path else '') + k for k in unknown)}; "
                          f"allowed: {', '.join(sorted(names))}")
    kw = {}
    for k, v in data.items():
        default = names[k].default
        if is_dataclass(default):
            kw[k] = _build(type(default), v, f"{path}.{k}" if path else k)
        elif isinstance(v, str) and "float" in str(names[k].type):
            # YAML 1.1 reads 1e-3 (no dot) as a string
            try:
                kw[k] = float(v)
            except ValueError:
                raise ConfigError(f"{path + '.' if path else ''}{k}: expected a number, got {v!r}") from None
        else:
            kw[k] = v
    return cls(**kw)


def from_dict(data: dict | None) -> Scenario:
    try:
        sc = _build(Scenario, data or {}, "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    validate(sc)
    return sc


def validate(sc: Scenario):
    """Build every component once so that bad values fail before any run."""
    try:
        dom = DomainSpec(**asdict(sc.domain))
        build_basis(dom, sc.m)
        kern = KernelSpec(**asdict(sc.kernel))
        kern.check_support(dom.length)
        PointwiseNonlinearity(**asdict(sc.nonlinearity))
        eta = DelayFunctional(**asdict(sc.delay))
        if sc.d < 0:
            raise ValueError("damping d must be nonnegative")
        cfg = sc.solver_config()
        if cfg.dt > eta.r and not (eta.kind == "constant" and eta.tau0 >= cfg.dt):
            raise ValueError(f"dt={cfg.dt} exceeds the maximal delay r={eta.r} with a non-constant delay")
        cfg.n_steps
        if sc.solver.backend not in ("auto", "python", "cython", "compiled"):
            raise ValueError(f"unknown backend {sc.solver.backend!r}")
        sc.initial_shape()
        if any(int(m) != m or m < 1 for m in sc.study.m_list):
            raise ValueError("study.m_list must hold positive integers")
        if any(dom.n_grid < 2 * m for m in sc.study.m_list):
            raise ValueError(f"anti-aliasing rule violated in study.m_list: n_grid={dom.n_grid} "
                             f"< 2*max(m)={2 * max(sc.study.m_list)}")
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def load(path: str | None = None) -> Scenario:
    """Load a scenario file; ``None`` gives the shipped default."""
    try:
        if path is None:
            text = resources.files("sddpde").joinpath("scenarios/nicholson.yaml").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        data = yaml.safe_load(text)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    return from_dict(data)
