"""Experiment configuration: a flat INI file fully determines a run.

Every command is a pure function of (config, CLI flags, master seed) up to
wall-clock numbers, so defaults live here and `bridgefov config-dump`
prints the effective file.
"""

from __future__ import annotations

import configparser
import io as _io
from dataclasses import dataclass, field, fields

from .denoiser import ArchDescriptor, TrainConfig
from .phantom import PhantomConfig
from .projector import NoiseModel, ScanGeometry
from .recon import WceParams

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class GeometrySection:
    n_angles: int = 180
    n_channels: int = 128
    channel_spacing: float = 1.5
    fov_radius: float = 40.0
    grid_width: int = 64
    grid_height: int = 64
    grid_spacing: float = 2.0


@dataclass(frozen=True)
class PhantomSection:
    body_axis_long_min: float = 48.0
    body_axis_long_max: float = 60.0
    body_axis_short_min: float = 42.0
    body_axis_short_max: float = 56.0
    body_center_jitter: float = 3.0
    body_hu_min: float = 960.0
    body_hu_max: float = 1060.0
    n_interior_min: int = 2
    n_interior_max: int = 8
    interior_axis_min: float = 3.0
    interior_axis_max: float = 16.0
    interior_hu_min: float = -1000.0
    interior_hu_max: float = 1500.0
    bed_enabled: bool = True


@dataclass(frozen=True)
class NoiseSection:
    i0: float = 1e5
    enabled: bool = True


@dataclass(frozen=True)
class WceSection:
    mu_water: float = 0.02
    slope_window: int = 3
    transition_blend: int = 3


@dataclass(frozen=True)
class ScheduleSection:
    steps: int = 1000
    beta_max: float = 0.3
    beta_min: float = 1e-4


@dataclass(frozen=True)
class ArchitectureSection:
    base_channels: int = 16
    levels: int = 3
    time_dim: int = 32
    time_hidden: int = 64
    groups: int = 8


@dataclass(frozen=True)
class TrainingSection:
    iterations: int = 6000
    batch_size: int = 4
    micro_batch: int = 4
    learning_rate: float = 3e-4
    ema_decay: float = 0.0       # 0 disables EMA
    checkpoint_every: int = 1000


@dataclass(frozen=True)
class SamplingSection:
    nfe: int = 1
    nfe_grid: str = "1,5,10,25"
    cddpm_steps: int = 100
    cddpm_beta1: float = 1e-4
    cddpm_beta_max: float = 0.02


@dataclass(frozen=True)
class DatasetSection:
    n_train: int = 500
    n_val: int = 20
    n_test: int = 50


@dataclass(frozen=True)
class ExperimentConfig:
    version: int = CONFIG_VERSION
    master_seed: int = 1234
    out_dir: str = "runs/desk"
    geometry: GeometrySection = field(default_factory=GeometrySection)
    phantom: PhantomSection = field(default_factory=PhantomSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    wce: WceSection = field(default_factory=WceSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    architecture: ArchitectureSection = field(default_factory=ArchitectureSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)

    # ---- typed views onto the domain objects ----

    def scan_geometry(self) -> ScanGeometry:
        g = self.geometry
        return ScanGeometry(
            n_angles=g.n_angles, n_channels=g.n_channels,
            channel_spacing=g.channel_spacing, fov_radius=g.fov_radius,
            grid_width=g.grid_width, grid_height=g.grid_height,
            grid_spacing=g.grid_spacing,
        )

    def phantom_config(self) -> PhantomConfig:
        p = self.phantom
        return PhantomConfig(
            fov_radius=self.geometry.fov_radius,
            body_axis_long=(p.body_axis_long_min, p.body_axis_long_max),
            body_axis_short=(p.body_axis_short_min, p.body_axis_short_max),
            body_center_jitter=p.body_center_jitter,
            body_hu=(p.body_hu_min, p.body_hu_max),
            n_interior=(p.n_interior_min, p.n_interior_max),
            interior_axis=(p.interior_axis_min, p.interior_axis_max),
            interior_hu=(p.interior_hu_min, p.interior_hu_max),
            bed_enabled=p.bed_enabled,
        )

    def noise_model(self) -> NoiseModel:
        return NoiseModel(i0=self.noise.i0, enabled=self.noise.enabled)

    def wce_params(self) -> WceParams:
        return WceParams(mu_water=self.wce.mu_water,
                         slope_window=self.wce.slope_window,
                         transition_blend=self.wce.transition_blend)

    def arch_descriptor(self, in_channels: int = 1) -> ArchDescriptor:
        a = self.architecture
        return ArchDescriptor(
            in_channels=in_channels, base_channels=a.base_channels,
            levels=a.levels, time_dim=a.time_dim, time_hidden=a.time_hidden,
            groups=a.groups,
        )

    def train_config(self, seed: int | None = None) -> TrainConfig:
        t = self.training
        return TrainConfig(
            iterations=t.iterations, batch_size=t.batch_size,
            micro_batch=t.micro_batch, learning_rate=t.learning_rate,
            seed=self.master_seed if seed is None else seed,
            ema_decay=t.ema_decay if t.ema_decay > 0 else None,
        )

    def nfe_list(self) -> list[int]:
        try:
            return [int(v) for v in self.sampling.nfe_grid.split(",") if v.strip()]
        except ValueError as e:
            raise ConfigError(f"bad nfe_grid: {self.sampling.nfe_grid}") from e

    def validate(self):
        try:
            self.scan_geometry()
            self.phantom_config().validate()
            self.noise_model()
            self.wce_params()
            self.arch_descriptor()
            self.train_config()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        s = self.schedule
        if s.steps < 2 or s.steps % 2 or not (0 < s.beta_min <= s.beta_max):
            raise ConfigError("bad schedule parameters")
        g = self.geometry
        if g.grid_width % self.arch_descriptor().min_divisor or \
           g.grid_height % self.arch_descriptor().min_divisor:
            raise ConfigError("grid size must be divisible by 2**(levels-1)")
        if min(self.dataset.n_train, self.dataset.n_val, self.dataset.n_test) < 0:
            raise ConfigError("dataset sizes must be non-negative")
        for nfe in self.nfe_list():
            if not (1 <= nfe <= s.steps):
                raise ConfigError(f"nfe {nfe} outside [1, {s.steps}]")
        if not (1 <= self.sampling.nfe <= s.steps):
            raise ConfigError("sampling.nfe outside schedule range")
        return self


_SECTIONS = {
    "geometry": GeometrySection,
    "phantom": PhantomSection,
    "noise": NoiseSection,
    "wce": WceSection,
    "schedule": ScheduleSection,
    "architecture": ArchitectureSection,
    "training": TrainingSection,
    "sampling": SamplingSection,
    "dataset": DatasetSection,
}


def _parse_value(text: str, pytype):
    if pytype is bool:
        low = text.strip().lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text}")
    return pytype(text)


def loads(text: str) -> ExperimentConfig:
    """Parse an INI config; unknown sections or keys are errors."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from e

    kwargs = {}
    for section in parser.sections():
        if section == "experiment":
            for key, value in parser["experiment"].items():
                if key == "version":
                    kwargs["version"] = int(value)
                elif key == "master_seed":
                    kwargs["master_seed"] = int(value)
                elif key == "out_dir":
                    kwargs["out_dir"] = value
                else:
                    raise ConfigError(f"unknown key [experiment] {key}")
            continue
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigError(f"unknown config section [{section}]")
        known = {f.name: f.type for f in fields(cls)}
        types = {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}
        sec_kwargs = {}
        for key, value in parser[section].items():
            if key not in known:
                raise ConfigError(f"unknown key [{section}] {key}")
            try:
                sec_kwargs[key] = _parse_value(value, types[key])
            except ValueError as e:
                raise ConfigError(f"bad value for [{section}] {key}: {value}") from e
        kwargs[section] = cls(**sec_kwargs)
    return ExperimentConfig(**kwargs).validate()


def load(path) -> ExperimentConfig:
    with open(path) as f:
        return loads(f.read())


def dumps(cfg: ExperimentConfig) -> str:
    """Render the full effective configuration as INI text."""
    parser = configparser.ConfigParser()
    parser["experiment"] = {
        "version": str(cfg.version),
        "master_seed": str(cfg.master_seed),
        "out_dir": cfg.out_dir,
    }
    for name, _cls in _SECTIONS.items():
        section = getattr(cfg, name)
        parser[name] = {f.name: str(getattr(section, f.name)) for f in fields(section)}
    buf = _io.StringIO()
    parser.write(buf)
    return buf.getvalue()
