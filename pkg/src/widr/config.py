"""Strict sectioned key/value pipeline configuration (INI syntax).

Unknown sections or keys are rejected. Overrides use ``section.key=value``.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class PathsSection:
    manifest: str = "corpus/manifest.csv"
    workdir: str = "work"
    run_name: str = ""


@dataclass
class SynthSection:
    enabled: bool = True
    n_writers: int = 20
    docs_per_writer: int = 4
    test_writers: int = 10
    n_extra_writers: int = 10
    extra_docs_per_writer: int = 4
    patches_per_doc: int = 8
    lines_per_doc: int = 2
    line_height: int = 48
    common_fraction: float = 0.5
    seed: int = 0


@dataclass
class PreprocessSection:
    patch_size: int = 256
    ink_ratio_min: float = 0.02
    line_window: int = 15
    line_rho: float = 0.05


@dataclass
class ModelSection:
    conv_channels: tuple[int, ...] = (16, 32, 64)
    feature_dim: int = 2048
    num_classes: int = 0  # 0: number of distinct labeled writers
    dropout: float = 0.5


@dataclass
class TrainSection:
    lr: float = 0.1
    lr_decay_epoch: int = 45
    lr_after: float = 0.01
    momentum: float = 0.9
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0


@dataclass
class LossSection:
    mode: str = "wlsr_mixed"
    epsilon: float = 0.1
    compare_baseline: bool = False


@dataclass
class EncodeSection:
    pca_dim: int = 0  # 0: min(256, feature_dim)
    ridge: float = 1e-8
    kmeans_k: int = 1
    kmeans_seed: int = 0
    l2_normalize: bool = False


@dataclass
class EvalSection:
    top_k: tuple[int, ...] = (1, 2, 3)
    ensemble_runs: tuple[str, ...] = ()


@dataclass
class SweepSection:
    feature_dim: tuple[int, ...] = ()
    kmeans_k: tuple[int, ...] = ()


@dataclass
class PipelineConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    synth: SynthSection = field(default_factory=SynthSection)
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    loss: LossSection = field(default_factory=LossSection)
    encode: EncodeSection = field(default_factory=EncodeSection)
    eval: EvalSection = field(default_factory=EvalSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    base_dir: Path = field(default_factory=Path, repr=False, compare=False)

    @property
    def run_name(self) -> str:
        return self.paths.run_name or self.loss.mode

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def manifest_path(self) -> Path:
        return self.path(self.paths.manifest)

    @property
    def workdir(self) -> Path:
        return self.path(self.paths.workdir)

    def replace(self, **sections) -> PipelineConfig:
        """Copy with selected keys changed, e.g. ``replace(model={"feature_dim": 32})``."""
        new = dataclasses.replace(self)
        for name, changes in sections.items():
            setattr(new, name, dataclasses.replace(getattr(self, name), **changes))
        return new


SECTIONS = [f.name for f in dataclasses.fields(PipelineConfig) if f.name != "base_dir"]


def _convert(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if where.endswith("ensemble_runs"):
                return tuple(items)
            return tuple(int(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _set(cfg: PipelineConfig, section: str, key: str, raw: str) -> None:
    if section not in SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    sec = getattr(cfg, section)
    names = {f.name for f in dataclasses.fields(sec)}
    if key not in names:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    setattr(sec, key, _convert(raw, getattr(sec, key), f"{section}.{key}"))


def validate(cfg: PipelineConfig) -> None:
    if cfg.loss.mode not in ("real_onehot", "lsr", "wlsr_mixed"):
        raise ConfigError(f"loss.mode: unknown mode {cfg.loss.mode!r}")
    if not 0 <= cfg.loss.epsilon <= 1:
        raise ConfigError("loss.epsilon must lie in [0, 1]")
    if not 0 <= cfg.model.dropout < 1:
        raise ConfigError("model.dropout must lie in [0, 1)")
    if cfg.train.lr_decay_epoch > cfg.train.epochs:
        raise ConfigError("train.lr_decay_epoch must not exceed train.epochs")
    if not 0 <= cfg.train.lr_after <= cfg.train.lr:
        raise ConfigError("need 0 <= train.lr_after <= train.lr")
    if cfg.preprocess.patch_size < 8:
        raise ConfigError("preprocess.patch_size must be at least 8")
    if cfg.encode.kmeans_k < 1 or any(k < 1 for k in cfg.sweep.kmeans_k):
        raise ConfigError("k-means k must be positive")
    if cfg.model.feature_dim < 1 or any(d < 1 for d in cfg.sweep.feature_dim):
        raise ConfigError("feature_dim must be positive")
    if not cfg.eval.top_k or any(k < 1 for k in cfg.eval.top_k):
        raise ConfigError("eval.top_k must list positive integers")


def load_config(path: str | Path | None = None, overrides: list[str] | tuple[str, ...] = ()) -> PipelineConfig:
    """Read a config file (optional) and apply ``section.key=value`` overrides."""
    cfg = PipelineConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for section in parser.sections():
            for key, raw in parser.items(section):
                _set(cfg, section, key, raw)
        cfg.base_dir = path.parent
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        _set(cfg, section, key, raw)
    validate(cfg)
    return cfg
