"""Configuration records and the flat ``key = value`` text format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields


@dataclass
class BackboneConfig:
    n_groups: int = 8
    channels: int = 224
    local_windows: tuple = (4, 8, 16)
    global_window: int = 48
    pool_size: int = 8
    heads: int = 2
    mlp_ratio: int = 2
    out_channels: int = 64
    in_channels: int = 3
    gsa_enabled: bool = True
    pooling: str = "max"  # max | avg | random
    relative_bias: bool = False

    def validate(self):
        c, h = self.channels, self.heads
        if c % 4 or (c // 4) % h:
            raise ValueError(f"channels={c} must be divisible by 4 and by 4*heads={4 * h}")
        if len(self.local_windows) != 3:
            raise ValueError("exactly three local window sizes are required")
        if self.gsa_enabled:
            if not self.pool_size <= self.global_window or self.global_window % self.pool_size:
                raise ValueError(f"pool size {self.pool_size} must divide global window {self.global_window}")
        if self.pooling not in ("max", "avg", "random"):
            raise ValueError(f"unknown pooling {self.pooling!r}")
        return self

    @property
    def routing_length(self) -> int:
        return 4 * self.n_groups


@dataclass
class RouterConfig:
    hidden: int = 16  # image-branch width
    scale_hidden: int = 32
    threshold: float = 0.5


@dataclass
class UpsamplerConfig:
    hidden: int = 256
    depth: int = 5  # number of linear layers
    local_ensemble: bool = True
    feat_unfold: bool = True
    cell_decode: bool = True
    residual: bool = False  # add bicubic interpolation of the LR input to the decoded RGB
    chunk: int = 30000


@dataclass
class TrainConfig:
    lam: float = 2e-4
    alpha1: float = 0.25
    alpha2: float = 0.25
    alpha3: float = 0.5
    lr: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    steps: int = 5000
    batch_size: int = 4
    patch: int = 48
    scale_min: float = 1.0
    scale_max: float = 4.0
    seed: int = 0
    data_dir: str = ""
    toy_images: int = 64
    toy_min_size: int = 64
    toy_max_size: int = 128
    val_images: int = 8
    val_every: int = 0
    log_every: int = 1
    # routed fine-tuning overrides; zero means "same as the baseline stage"
    tadt_steps: int = 0
    tadt_lr: float = 0.0


@dataclass
class RunConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    upsampler: UpsamplerConfig = field(default_factory=UpsamplerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    SECTIONS = ("backbone", "router", "upsampler", "train")

    def to_text(self) -> str:
        """Canonical serialization: sorted ``section.key = value`` lines."""
        lines = []
        for sec in self.SECTIONS:
            obj = getattr(self, sec)
            for f in sorted(fields(obj), key=lambda f: f.name):
                lines.append(f"{sec}.{f.name} = {_fmt(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            sec, _, name = key.partition(".")
            if sec not in cls.SECTIONS or not name:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            obj = getattr(cfg, sec)
            ftypes = {f.name: f for f in fields(obj)}
            if name not in ftypes:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            setattr(obj, name, _parse(value, getattr(obj, name)))
        cfg.backbone.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def for_stage(self, stage: str) -> "RunConfig":
        """Copy whose ``train.steps``/``train.lr`` are the ones the stage runs with."""
        cfg = RunConfig.from_text(self.to_text())
        t = cfg.train
        if stage == "tadt":
            t.steps = t.tadt_steps or t.steps
            t.lr = t.tadt_lr or t.lr
        return cfg

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(text: str, default):
    if isinstance(default, bool):
        if text.lower() not in ("true", "false", "1", "0"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return text.lower() in ("true", "1")
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        return tuple(kind(x.strip()) for x in text.split(",") if x.strip())
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def full_config() -> RunConfig:
    return RunConfig()


def tiny_config() -> RunConfig:
    """Two groups, 16 channels: small enough for exhaustive verification."""
    return RunConfig(
        backbone=BackboneConfig(n_groups=2, channels=16, local_windows=(2, 4, 8), global_window=16,
                                pool_size=4, heads=2, mlp_ratio=2, out_channels=8),
        router=RouterConfig(hidden=4, scale_hidden=8),
        upsampler=UpsamplerConfig(hidden=16),
    )


def toy_config() -> RunConfig:
    """Reduced model used for the desk-scale training runs."""
    return RunConfig(
        backbone=BackboneConfig(n_groups=2, channels=32, local_windows=(4, 8, 12), global_window=24,
                                pool_size=6, heads=2, mlp_ratio=2, out_channels=32),
        router=RouterConfig(hidden=16, scale_hidden=32),
        upsampler=UpsamplerConfig(hidden=64, residual=True),
        train=TrainConfig(lr=5e-4, steps=1000, batch_size=4, patch=24, toy_images=64,
                          toy_min_size=96, toy_max_size=128, tadt_steps=500, tadt_lr=2.5e-4),
    )
