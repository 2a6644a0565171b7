"""Run configuration: JSON document, schema validation, defaults, cross-field checks.

One document describes a system instance and every analysis run on it. After
:func:`load_config` all defaults are filled in, so :func:`emit` writes a
self-describing canonical document and ``load_config(emit(cfg)) == cfg``.
"""
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

import jsonschema
import numpy as np

from .action import ActionSettings
from .codesign import CodesignProblem
from .domain import BoundarySection, DomainSpec
from .errors import ConfigParseError, ConfigValidationError, DomainError
from .sde import SimParams
from .system import DiffusionSpec, MultiChannelSystem, probe_points, verify_gain_tuple


@dataclass
class SectionBlock:
    name: str
    kind: str = "full"
    normal: list = None
    offset: float = 0.0
    point: list = None
    radius: float = 0.0
    tol: float = 1e-9


@dataclass
class SystemBlock:
    A: list
    channels: list


@dataclass
class DiffusionBlock:
    sigma0: list
    kind: str = "constant"
    linear: list = None
    lipschitz_bound: float = None
    ellipticity_floor: float = 1e-6


@dataclass
class DomainBlock:
    kind: str
    lower: float = None
    upper: float = None
    center: list = None
    Q: list = None
    radius: float = None
    H: list = None
    h: list = None
    boundary_tol: float = 1e-9
    sections: list = field(default_factory=list)


@dataclass
class VerifyBlock:
    margin: float = 0.0
    tol: float = 1e-9
    n_probes: int = 256


@dataclass
class SimBlock:
    dt: float = 1e-3
    t_max: float = None
    trials: int = 100_000
    seed: int = 0
    censor_limit: float = 0.01
    phi_cap: float = None
    histogram_bins: int = 32
    concentration_delta: float = 0.5


@dataclass
class ActionBlock:
    N: int = 400
    T_grid: list = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0])
    restarts: int = 3
    grad_tol: float = 1e-6
    max_iter: int = 100
    free_time_tol: float = 0.02
    boundary_samples: int = 64
    tie_tol: float = None
    interior_tol: float = 1e-6
    refine_iters: int = 20


@dataclass
class PdeBlock:
    enabled: bool = True
    h: float = 0.005
    band: float = 0.1


@dataclass
class CodesignBlock:
    candidates: list
    weights: list
    orientation: str = "paper-literal"
    sections: list = None
    section0: str = None


@dataclass
class OutputBlock:
    directory: str = "out"
    format: str = "both"


@dataclass
class RunConfig:
    system: SystemBlock
    diffusion: DiffusionBlock
    domain: DomainBlock
    x0: list
    epsilon: list
    modes: list = None
    verify: VerifyBlock = field(default_factory=VerifyBlock)
    sim: SimBlock = field(default_factory=SimBlock)
    action: ActionBlock = field(default_factory=ActionBlock)
    pde: PdeBlock = field(default_factory=PdeBlock)
    codesign: CodesignBlock = None
    output: OutputBlock = field(default_factory=OutputBlock)

    # builders

    def build_system(self):
        d = self.diffusion
        lin = None if d.linear is None else np.asarray(d.linear, dtype=float)
        bound = np.inf if d.lipschitz_bound is None else d.lipschitz_bound
        diff = DiffusionSpec(np.asarray(d.sigma0, dtype=float), lin, bound, d.ellipticity_floor)
        chans = tuple((np.asarray(c["B"], dtype=float), np.asarray(c["K"], dtype=float))
                      for c in self.system.channels)
        return MultiChannelSystem(np.asarray(self.system.A, dtype=float), chans, diff)

    def build_domain(self):
        b = self.domain
        secs = tuple(BoundarySection(**asdict(s)) for s in b.sections)
        kw = dict(sections=secs, boundary_tol=b.boundary_tol)
        if b.kind == "interval":
            return DomainSpec.interval(b.lower, b.upper, **kw)
        if b.kind == "ellipsoid":
            return DomainSpec.ellipsoid(b.center, b.Q, **kw)
        if b.kind == "ball":
            return DomainSpec.ball(b.center, b.radius, **kw)
        return DomainSpec.polytope(b.H, b.h, center=b.center, **kw)

    def section(self, name):
        if name is None:
            return BoundarySection.full()
        for s in self.domain.sections:
            if s.name == name:
                return BoundarySection(**asdict(s))
        raise KeyError(name)

    @property
    def section_names(self):
        return [s.name for s in self.domain.sections] or ["boundary"]

    def section_objects(self):
        if not self.domain.sections:
            return [BoundarySection.full()]
        return [BoundarySection(**asdict(s)) for s in self.domain.sections]

    def mode_list(self):
        n = len(self.system.channels)
        return list(range(n + 1)) if self.modes is None else list(self.modes)

    def sim_params(self, eps):
        s = self.sim
        return SimParams(eps=eps, dt=s.dt, t_max=s.t_max, trials=s.trials, seed=s.seed,
                         censor_limit=s.censor_limit)

    def action_settings(self):
        a = self.action
        return ActionSettings(N=a.N, T_grid=tuple(a.T_grid), restarts=a.restarts,
                              grad_tol=a.grad_tol, max_iter=a.max_iter,
                              free_time_tol=a.free_time_tol, boundary_samples=a.boundary_samples,
                              tie_tol=a.tie_tol, interior_tol=a.interior_tol,
                              refine_iters=a.refine_iters)

    def codesign_problem(self):
        c = self.codesign
        if c is None:
            return None
        sys = self.build_system()
        secs = None if c.sections is None else tuple(self.section(n) for n in c.sections)
        return CodesignProblem(sys, self.build_domain(), tuple(tuple(K) for K in c.candidates),
                               tuple(c.weights), np.asarray(self.x0, dtype=float), secs,
                               self.section(c.section0), c.orientation, self.action_settings(),
                               self.verify.margin)

    def to_dict(self):
        return asdict(self)


_BLOCKS = {"system": SystemBlock, "diffusion": DiffusionBlock, "domain": DomainBlock,
           "verify": VerifyBlock, "sim": SimBlock, "action": ActionBlock, "pde": PdeBlock,
           "codesign": CodesignBlock, "output": OutputBlock}


def schema():
    text = resources.files("exitrate").joinpath("config_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _json_path(path):
    return "/".join(str(p) for p in path) or "<root>"


def parse_config(text):
    """Parse, validate and default a configuration document given as a string."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}",
                               line=exc.lineno, column=exc.colno) from exc
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        e = errors[0]
        raise ConfigValidationError(e.message, path=_json_path(e.absolute_path))
    cfg = _materialize(doc)
    check_config(cfg)
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _materialize(doc):
    kw = {}
    for f in fields(RunConfig):
        if f.name not in doc:
            continue
        val = doc[f.name]
        if f.name in _BLOCKS and val is not None:
            val = dict(val)
            if f.name == "domain":
                val["sections"] = [SectionBlock(**s) for s in val.get("sections", [])]
            for bf in fields(_BLOCKS[f.name]):
                v = val.get(bf.name)
                if bf.type is float and isinstance(v, int) and not isinstance(v, bool):
                    val[bf.name] = float(v)
            if f.name == "action" and "T_grid" in val:
                val["T_grid"] = [float(t) for t in val["T_grid"]]
            val = _BLOCKS[f.name](**val)
        elif f.name == "epsilon":
            val = [float(e) for e in val]
        elif f.name == "x0":
            val = [float(v) for v in val]
        kw[f.name] = val
    return RunConfig(**kw)


def check_config(cfg):
    """Cross-field checks; raises ConfigValidationError with the offending field path."""
    A = np.asarray(cfg.system.A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ConfigValidationError("A must be square", "system/A")
    d = A.shape[0]
    for i, c in enumerate(cfg.system.channels):
        B, K = np.asarray(c["B"], dtype=float), np.asarray(c["K"], dtype=float)
        if B.ndim != 2 or K.ndim != 2 or B.shape[0] != d or K.shape[1] != d \
                or B.shape[1] != K.shape[0]:
            raise ConfigValidationError(f"B is {B.shape}, K is {K.shape}; need B d x r and "
                                        f"K r x d with d = {d}", f"system/channels/{i}")
    n = len(cfg.system.channels)
    if np.asarray(cfg.diffusion.sigma0).shape != (d, d):
        raise ConfigValidationError(f"sigma0 must be {d} x {d}", "diffusion/sigma0")
    if cfg.diffusion.kind == "state-affine" and cfg.diffusion.linear is None:
        raise ConfigValidationError("state-affine diffusion needs linear coefficients",
                                    "diffusion/linear")
    if cfg.diffusion.linear is not None and np.asarray(cfg.diffusion.linear).shape != (d, d, d):
        raise ConfigValidationError(f"linear must be {d} x {d} x {d}", "diffusion/linear")
    try:
        sys = cfg.build_system()
    except ValueError as exc:
        raise ConfigValidationError(str(exc), "diffusion") from exc
    dom_kind = cfg.domain.kind
    need = {"interval": ("lower", "upper"), "ellipsoid": ("center", "Q"),
            "ball": ("center", "radius"), "polytope": ("H", "h")}[dom_kind]
    for key in need:
        if getattr(cfg.domain, key) is None:
            raise ConfigValidationError(f"{dom_kind} domain needs {key!r}", f"domain/{key}")
    try:
        dom = cfg.build_domain()
    except (DomainError, ValueError) as exc:
        raise ConfigValidationError(str(exc), "domain") from exc
    if dom.dim != d:
        raise ConfigValidationError(f"domain dimension {dom.dim} differs from state dimension {d}",
                                    "domain")
    names = [s.name for s in cfg.domain.sections]
    if len(set(names)) != len(names):
        raise ConfigValidationError("section names must be unique", "domain/sections")
    for i, s in enumerate(dom.sections):
        try:
            dom.check_section(s)
        except DomainError as exc:
            raise ConfigValidationError(str(exc), f"domain/sections/{i}") from exc
    if not bool(dom.contains(np.zeros((1, d)))[0]):
        raise ConfigValidationError("the origin (common equilibrium) must lie inside the domain",
                                    "domain")
    if len(cfg.x0) != d:
        raise ConfigValidationError(f"x0 must have {d} entries", "x0")
    if not bool(dom.contains(np.asarray([cfg.x0], dtype=float))[0]):
        raise ConfigValidationError("x0 must lie inside the domain", "x0")
    try:
        sys.diffusion.check_ellipticity(probe_points(dom, 1000))
    except Exception as exc:
        raise ConfigValidationError(str(exc), "diffusion") from exc
    if cfg.modes is not None:
        for i, m in enumerate(cfg.modes):
            if m > n:
                raise ConfigValidationError(f"mode {m} outside 0..{n}", f"modes/{i}")
    if cfg.sim.t_max is not None and not cfg.sim.dt < cfg.sim.t_max:
        raise ConfigValidationError("dt must be smaller than t_max", "sim/dt")
    c = cfg.codesign
    if c is not None:
        if len(c.weights) != n:
            raise ConfigValidationError(f"need {n} weights", "codesign/weights")
        if abs(sum(c.weights) - 1.0) > 1e-12:
            raise ConfigValidationError("weights must sum to 1", "codesign/weights")
        if c.sections is not None and len(c.sections) != n:
            raise ConfigValidationError(f"need {n} section names", "codesign/sections")
        for nm in (c.sections or []) + ([c.section0] if c.section0 else []):
            if nm not in names:
                raise ConfigValidationError(f"unknown section {nm!r}", "codesign/sections")
        for k, cand in enumerate(c.candidates):
            if len(cand) != n:
                raise ConfigValidationError(f"candidate {k} has {len(cand)} gains, need {n}",
                                            f"codesign/candidates/{k}")
            for i, K in enumerate(cand):
                r = np.asarray(cfg.system.channels[i]["B"]).shape[1]
                if np.asarray(K).shape != (r, d):
                    raise ConfigValidationError(f"gain {i + 1} must be {r} x {d}",
                                                f"codesign/candidates/{k}/{i}")
            rep = verify_gain_tuple(sys.with_gains([np.asarray(K, dtype=float) for K in cand]),
                                    margin=cfg.verify.margin, tol=cfg.verify.tol)
            if not rep.passed:
                j = rep.mode_passed.index(False)
                raise ConfigValidationError(
                    f"candidate {k} is not in the reliable gain class: mode {j} has spectral "
                    f"abscissa {rep.abscissas[j]:.6g}", f"codesign/candidates/{k}")


def emit(cfg):
    """Canonical JSON text of a (defaulted) configuration."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


def config_hash(cfg):
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
