"""YAML run configurations.

A config names the agents, the adjacency family, the mode and the solver
settings. Matrices are bracketed row-major literals. Parsing normalizes the
document, so ``parse(emit(cfg)) == cfg`` and re-emission is byte-identical.
"""
from __future__ import annotations

import copy
import os
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np
import yaml

from .graph import AdjacencyParameterization, benchmark_topology
from .lumped import SynthesisSettings
from .sdpsolve import SolverSettings
from .sstools import AgentModel

MODES = ("lumped", "distributed", "oracle", "verify", "bench")
AGENT_KEYS = ("A", "B1", "B", "C1", "C", "D1", "E1", "F1")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field."""

    def __init__(self, field_name, msg):
        super().__init__(f"{field_name}: {msg}")
        self.field = field_name


@dataclass
class SolverConfig:
    tol_gamma: float = 1e-4
    max_iter: int = 50
    gamma_interval: list = field(default_factory=lambda: [1e-3, 1e3])
    bisect_tol: float = 1e-6
    sdp_tol: float = 1e-8
    sdp_max_iter: int = 200


@dataclass
class VerifyConfig:
    trials: int = 50
    T: float = 30.0
    dt: float = 1e-3
    alpha_samples: int = 11
    neutrality_trials: int = 100


@dataclass
class BenchConfig:
    lumped: list = field(default_factory=lambda: [3, 4, 5])
    distributed: list = field(default_factory=lambda: list(range(3, 11)))


@dataclass
class RunConfig:
    mode: str
    agents: list
    adjacency: dict
    theta_init: list = None
    oracle_resolution: float = 0.002
    solver: SolverConfig = field(default_factory=SolverConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    seed: int = 0
    output: str = "out"
    base_dir: str = field(default=".", compare=False, repr=False)

    # -- conversion -------------------------------------------------------
    def to_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        return d

    def emit(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    # -- materialization --------------------------------------------------
    def agent_models(self):
        out = []
        for k, spec in enumerate(self.agents):
            where = f"agents[{k}]"
            if "file" in spec:
                path = os.path.join(self.base_dir, spec["file"])
                try:
                    with open(path) as fh:
                        spec = yaml.safe_load(fh)
                except OSError as exc:
                    raise ConfigError(f"{where}.file", str(exc)) from exc
                _check_agent_keys(spec, where)
            try:
                out.append(AgentModel(**{key: spec[key] for key in AGENT_KEYS if key in spec}))
            except (ValueError, TypeError) as exc:
                raise ConfigError(where, str(exc)) from exc
        return out

    def stacked_agents(self, N):
        """Agent list of length N; a single agent entry is replicated."""
        models = self.agent_models()
        if len(models) == 1:
            return models * N
        if len(models) != N:
            raise ConfigError("agents", f"{len(models)} agents given but adjacency has N={N}")
        return models

    def parameterization(self, N=None):
        adj = self.adjacency
        try:
            if "benchmark" in adj:
                n = N if N is not None else adj["benchmark"]
                return benchmark_topology(n, tuple(adj.get("bounds", [0.0, 0.2])))
            return AdjacencyParameterization(adj["upsilon0"], tuple(adj["bases"]),
                                             adj["lower"], adj["upper"])
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError("adjacency", str(exc)) from exc

    def synthesis_settings(self, dump_dir=None):
        s = self.solver
        return SynthesisSettings(
            tol_gamma=s.tol_gamma, max_iter=s.max_iter,
            gamma_interval=tuple(s.gamma_interval), bisect_tol=s.bisect_tol,
            solver=SolverSettings(tol=s.sdp_tol, max_iter=s.sdp_max_iter, dump_dir=dump_dir))


def _check_agent_keys(spec, where):
    if not isinstance(spec, dict):
        raise ConfigError(where, "expected a mapping of matrix blocks or {file: path}")
    if "file" in spec:
        if set(spec) != {"file"}:
            raise ConfigError(where, "a file reference cannot be mixed with inline blocks")
        return
    unknown = set(spec) - set(AGENT_KEYS)
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown agent block")
    for key in ("A", "B1", "B", "C1", "C"):
        if key not in spec:
            raise ConfigError(f"{where}.{key}", "required block is missing")
    for key, val in spec.items():
        _matrix(val, f"{where}.{key}")


def _matrix(val, where):
    try:
        M = np.array(val, dtype=float)
    except (ValueError, TypeError) as exc:
        raise ConfigError(where, f"not a numeric matrix ({exc})") from exc
    if M.ndim != 2:
        raise ConfigError(where, f"expected a bracketed 2-D matrix, got {M.ndim}-D")
    return M


def _norm_matrix(val, where):
    return _matrix(val, where).tolist()


def _section(cls, raw, where):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(where, "expected a mapping")
    names = {f for f in cls.__dataclass_fields__}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown setting")
    obj = cls(**raw)
    for name, f in cls.__dataclass_fields__.items():
        v = getattr(obj, name)
        default = getattr(cls(), name)
        if isinstance(default, bool) or v is None:
            continue
        try:
            if isinstance(default, int):
                if isinstance(v, float) and not v.is_integer():
                    raise ValueError
                v = int(v)
            elif isinstance(default, float):
                v = float(v)
            elif isinstance(default, list):
                v = [type(default[0])(x) for x in v]
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.{name}", f"bad value {v!r}") from None
        setattr(obj, name, v)
    return obj


def from_dict(raw, base_dir="."):
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    raw = copy.deepcopy(raw)
    known = set(RunConfig.__dataclass_fields__) - {"base_dir"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    mode = raw.get("mode")
    if mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}, got {mode!r}")
    agents = raw.get("agents")
    if not isinstance(agents, list) or not agents:
        raise ConfigError("agents", "expected a non-empty list")
    norm_agents = []
    for k, spec in enumerate(agents):
        _check_agent_keys(spec, f"agents[{k}]")
        if "file" in spec:
            norm_agents.append({"file": str(spec["file"])})
        else:
            norm_agents.append({key: _norm_matrix(spec[key], f"agents[{k}].{key}")
                                for key in AGENT_KEYS if key in spec})
    adj = raw.get("adjacency")
    if not isinstance(adj, dict):
        raise ConfigError("adjacency", "expected a mapping")
    if "benchmark" in adj:
        extra = set(adj) - {"benchmark", "bounds"}
        if extra:
            raise ConfigError(f"adjacency.{sorted(extra)[0]}", "not allowed with 'benchmark'")
        norm_adj = {"benchmark": int(adj["benchmark"])}
        if "bounds" in adj:
            norm_adj["bounds"] = [float(b) for b in adj["bounds"]]
    else:
        for key in ("upsilon0", "bases", "lower", "upper"):
            if key not in adj:
                raise ConfigError(f"adjacency.{key}", "required field is missing")
        extra = set(adj) - {"upsilon0", "bases", "lower", "upper"}
        if extra:
            raise ConfigError(f"adjacency.{sorted(extra)[0]}", "unknown field")
        norm_adj = {
            "upsilon0": _norm_matrix(adj["upsilon0"], "adjacency.upsilon0"),
            "bases": [_norm_matrix(b, f"adjacency.bases[{k}]") for k, b in enumerate(adj["bases"])],
            "lower": [float(v) for v in adj["lower"]],
            "upper": [float(v) for v in adj["upper"]],
        }
    theta = raw.get("theta_init")
    cfg = RunConfig(
        mode=mode, agents=norm_agents, adjacency=norm_adj,
        theta_init=None if theta is None else [float(t) for t in np.atleast_1d(theta)],
        oracle_resolution=float(raw.get("oracle_resolution", 0.002)),
        solver=_section(SolverConfig, raw.get("solver"), "solver"),
        verify=_section(VerifyConfig, raw.get("verify"), "verify"),
        bench=_section(BenchConfig, raw.get("bench"), "bench"),
        seed=int(raw.get("seed", 0)),
        output=str(raw.get("output", "out")),
        base_dir=base_dir,
    )
    validate(cfg)
    return cfg


def validate(cfg):
    """Dimension checks that need the materialized objects."""
    if cfg.oracle_resolution <= 0:
        raise ConfigError("oracle_resolution", "must be positive")
    if cfg.solver.tol_gamma <= 0:
        raise ConfigError("solver.tol_gamma", "must be positive")
    if cfg.solver.max_iter < 1:
        raise ConfigError("solver.max_iter", "must be at least 1")
    lo, hi = cfg.solver.gamma_interval
    if not 0 < lo < hi:
        raise ConfigError("solver.gamma_interval", "need 0 < lo < hi")
    for name in ("lumped", "distributed"):
        if any(n < 3 for n in getattr(cfg.bench, name)):
            raise ConfigError(f"bench.{name}", "benchmark topologies need N >= 3")
    param = cfg.parameterization()
    models = cfg.stacked_agents(param.N) if cfg.mode != "bench" else cfg.agent_models()
    if cfg.theta_init is not None:
        if len(cfg.theta_init) != param.n_theta:
            raise ConfigError("theta_init", f"expected {param.n_theta} values")
        try:
            param.check_theta(cfg.theta_init)
        except ValueError as exc:
            raise ConfigError("theta_init", str(exc)) from exc
    for k, a in enumerate(models):
        if a.n_w != 1 or a.n_z != 1:
            raise ConfigError(f"agents[{k}]", "spatial ports must be scalar")


def parse(text, base_dir="."):
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<yaml>", str(exc)) from exc
    return from_dict(raw, base_dir)


def bundled_names():
    return sorted(p.name[:-5] for p in resources.files("coopsynth.configs").iterdir()
                  if p.name.endswith(".yaml"))


def load(path_or_name):
    """Load a config file, or a bundled config by name (e.g. ``paper_n4_lumped``)."""
    if os.path.exists(path_or_name):
        with open(path_or_name) as fh:
            return parse(fh.read(), os.path.dirname(os.path.abspath(path_or_name)))
    res = resources.files("coopsynth.configs") / f"{path_or_name}.yaml"
    if res.is_file():
        return parse(res.read_text(), ".")
    raise ConfigError("--config", f"no such file or bundled config: {path_or_name!r} "
                      f"(bundled: {', '.join(bundled_names())})")
