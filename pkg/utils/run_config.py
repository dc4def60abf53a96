"""
Run configuration documents.

A run is described by one JSON file naming the experiment and carrying its
section. Every section maps onto a dataclass; unknown keys and malformed
values raise ConfigError before any computation starts.

Units: lengths in m, moduli and stresses in Pa, fracture energy in J/m^2,
strains dimensionless. The Eshelby and spring experiments are dimensionless.
"""

import json
import logging
from dataclasses import MISSING, asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

from utils.exceptions import ConfigError, KrylovError
from utils.fft_projection import DerivativeScheme
from utils.krylov import KrylovConfig
from utils.solver import SolverMethod, TrustRegionConfig

logger = logging.getLogger(__name__)

EXPERIMENTS = ("spring1d", "eshelby", "damage_rve", "projector_check")


def _build(cls, data: Any, where: str):
    """Instantiate a config dataclass from a mapping, recursing into nested sections"""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        nested = known[name].metadata.get("section")
        if nested and isinstance(value, dict) and known[name].default_factory is not MISSING:
            # partial sections override the defaults of that section only
            value = {**asdict(known[name].default_factory()), **value}
        kwargs[name] = _build(nested, value, f"{where}.{name}") if nested else value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _section(cls):
    return field(default_factory=cls, metadata={"section": cls})


def _positive(where: str, **values):
    for name, value in values.items():
        if not isinstance(value, (int, float)) or not value > 0:
            raise ConfigError(f"{where}.{name} must be a positive number, got {value!r}")


def _choices(where: str, values, enum):
    allowed = [e.value for e in enum]
    bad = [v for v in values if v not in allowed]
    if bad:
        raise ConfigError(f"{where}: unknown values {bad}, expected one of {allowed}")


@dataclass
class SolverSettings:
    """Trust-region and Newton settings; R0/Rmax default from the load increment"""

    R0: Optional[float] = None
    Rmax: Optional[float] = None
    eta_up: float = 0.0
    eta_eq: float = 1e-6
    eta_nr: float = 1e-8
    max_newton: int = 100
    residual_mode: str = "relative"

    def __post_init__(self):
        self.to_trust_region()

    def to_trust_region(self) -> TrustRegionConfig:
        return TrustRegionConfig(R0=self.R0, Rmax=self.Rmax, eta_up=self.eta_up, eta_eq=self.eta_eq,
                                 eta_nr=self.eta_nr, max_newton=self.max_newton,
                                 residual_mode=self.residual_mode)


@dataclass
class KrylovSettings:
    eta_cg: float = 1e-8
    max_iter: Optional[int] = None
    reset_threshold: float = 0.2
    relative: bool = True

    def __post_init__(self):
        self.to_krylov()

    def to_krylov(self) -> KrylovConfig:
        try:
            return KrylovConfig(eta_cg=self.eta_cg, max_iter=self.max_iter,
                                reset_threshold=self.reset_threshold, relative=self.relative)
        except KrylovError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class SpringConfig:
    k: float = 1.0
    gamma0: float = 0.1
    xbar: float = 0.11
    alphas: List[float] = field(default_factory=lambda: [1.0, -0.5, -1.0])
    methods: List[str] = field(default_factory=lambda: ["newton_cg", "standard_tr", "modified_tr"])
    R0: float = 0.05
    Rmax: float = 1.0
    eta_up: float = 0.1
    landscape_range: List[float] = field(default_factory=lambda: [0.0, 0.4])
    landscape_points: int = 401

    def __post_init__(self):
        _positive("spring", k=self.k, gamma0=self.gamma0, R0=self.R0, Rmax=self.Rmax)
        if not self.alphas:
            raise ConfigError("spring.alphas must not be empty")
        _choices("spring.methods", self.methods, SolverMethod)
        if not 0.0 <= self.eta_up < 0.25:
            raise ConfigError(f"spring.eta_up must lie in [0, 0.25), got {self.eta_up}")
        if len(self.landscape_range) != 2 or self.landscape_range[0] >= self.landscape_range[1]:
            raise ConfigError("spring.landscape_range must be [low, high] with low < high")


@dataclass
class EshelbyConfig:
    """Soft circular inclusion in a stiffer matrix under mean strain"""

    n: int = 127
    E_matrix: float = 1.0
    nu_matrix: float = 0.3
    stiffness_ratio: float = 0.1
    nu_inclusion: float = 0.3
    radius: float = 0.125
    mean_strain: List[float] = field(default_factory=lambda: [0.01, 0.01, 0.0])
    scheme: str = "linear_fe"
    difference_scale: float = 1e7
    sweep_grids: List[int] = field(default_factory=list)
    sweep_rmax: List[float] = field(default_factory=list)
    sweep_R0: Optional[float] = None

    def __post_init__(self):
        _positive("eshelby", E_matrix=self.E_matrix, stiffness_ratio=self.stiffness_ratio, radius=self.radius)
        if self.n < 8:
            raise ConfigError(f"eshelby.n must be at least 8, got {self.n}")
        if self.radius > 0.25:
            raise ConfigError("eshelby.radius is a fraction of the cell and must not exceed 0.25")
        if len(self.mean_strain) != 3:
            raise ConfigError("eshelby.mean_strain must be [exx, eyy, exy]")
        _choices("eshelby.scheme", [self.scheme], DerivativeScheme)


@dataclass
class DamagePhase:
    E: float = 12e9
    nu: float = 0.3
    Gc: Optional[float] = None
    ft0: Optional[float] = None

    def __post_init__(self):
        _positive("phase", E=self.E)
        if (self.Gc is None) != (self.ft0 is None):
            raise ConfigError("damage phases need both Gc and ft0")


@dataclass
class DamageMaterials:
    paste: DamagePhase = field(default_factory=lambda: DamagePhase(12e9, 0.3, 60.0, 3e6),
                               metadata={"section": DamagePhase})
    aggregate: DamagePhase = field(default_factory=lambda: DamagePhase(59e9, 0.3, 160.0, 10e6),
                                   metadata={"section": DamagePhase})
    gel: DamagePhase = field(default_factory=lambda: DamagePhase(11e9, 0.18),
                             metadata={"section": DamagePhase})


@dataclass
class MicrostructureSettings:
    aggregate_fraction: float = 0.4
    gel_fraction: float = 0.01
    gel_pocket_size: Optional[float] = None
    d_min: float = 0.04
    d_max: float = 0.2
    exponent: float = 0.5
    gap: float = 0.005
    max_attempts: int = 20000


@dataclass
class DamageConfig:
    """ASR-like gel expansion in a concrete cell under zero mean stress"""

    length: float = 0.05
    grids: List[int] = field(default_factory=lambda: [64])
    eigenstrain_steps: List[float] = field(default_factory=lambda: [5e-4])
    eigenstrain_total: float = 4e-3
    seeds: List[int] = field(default_factory=lambda: [0])
    materials: DamageMaterials = _section(DamageMaterials)
    microstructure: MicrostructureSettings = _section(MicrostructureSettings)
    dump_damage: bool = True
    vtk: bool = False

    def __post_init__(self):
        _positive("damage", length=self.length, eigenstrain_total=self.eigenstrain_total)
        if not self.grids or any(n < 8 for n in self.grids):
            raise ConfigError("damage.grids must list sizes of at least 8 pixels")
        if not self.eigenstrain_steps or any(not s > 0 for s in self.eigenstrain_steps):
            raise ConfigError("damage.eigenstrain_steps must be positive")
        if not self.seeds:
            raise ConfigError("damage.seeds must not be empty")


@dataclass
class ProjectorCheckConfig:
    grids: List[List[int]] = field(default_factory=lambda: [[8, 8], [9, 9], [16, 32]])
    schemes: List[str] = field(default_factory=lambda: ["fourier", "linear_fe"])
    tolerance: float = 1e-12

    def __post_init__(self):
        _choices("projector_check.schemes", self.schemes, DerivativeScheme)
        if not self.grids or any(len(g) != 2 for g in self.grids):
            raise ConfigError("projector_check.grids must list [nx, ny] pairs")


@dataclass
class RunConfig:
    experiment: str
    name: str = "run"
    seed: int = 0
    output_dir: Optional[str] = None
    solver: SolverSettings = _section(SolverSettings)
    krylov: KrylovSettings = _section(KrylovSettings)
    spring: SpringConfig = _section(SpringConfig)
    eshelby: EshelbyConfig = _section(EshelbyConfig)
    damage: DamageConfig = _section(DamageConfig)
    projector_check: ProjectorCheckConfig = _section(ProjectorCheckConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def parse_run_config(data: Dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict) or "experiment" not in data:
        raise ConfigError("run configuration needs an 'experiment' key")
    return _build(RunConfig, data, "config")


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    config = parse_run_config(data)
    logger.info("loaded %s configuration from %s", config.experiment, path)
    return config
