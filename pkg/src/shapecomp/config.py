"""Run configuration: one flat JSON object, strictly validated.

Unknown keys are rejected so that typos fail loudly instead of silently
falling back to defaults.  ``lambda`` is stored under its JSON name but
exposed as ``RunConfig.lambdas``.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .diffusion import SAMPLER_MODES
from .render import MODES as RENDER_MODES
from .synth import CATEGORIES


class ConfigError(ValueError):
    """Invalid or unknown configuration value."""


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # diffusion
    T: int = 50
    beta0: float = 2e-3
    betaT: float = 0.4
    sampler_mode: str = "ddpm-posterior"
    # training
    lambdas: tuple = (1.0, 0.5, 0.5)
    phase1_epochs: int = 300
    phase2_epochs: int = 20
    batch_size: int = 4
    lr: float = 1e-3
    channels: tuple = (8, 8)
    emb_dim: int = 8
    ratio: float = 0.30
    # grid
    grid_dims: tuple = (16, 16, 16)
    voxel_size: float = 1.0 / 16
    K: int = 1
    # data simulation
    n_objects: int = 8
    categories: tuple = ("chair",)
    n_views: int = 8
    image_size: int = 64
    noise_sigma: float | None = None  # None -> half a voxel
    dropout_p: float = 0.1
    max_points: int = 2048
    blur_radius: int = 2
    # rendering
    render_mode: str = "compositing"
    render_samples: int = 64
    render_pixels: int = 256
    # evaluation
    tau: float = 1e-2
    eval_points: int = 16384
    eval_k: int = 1
    eval_view: int = 0
    max_exact: int = 512

    def __post_init__(self):
        for name in ("lambdas", "channels", "grid_dims", "categories"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.T, int) and self.T >= 1, f"T must be an integer >= 1, got {self.T!r}")
        need(0 < self.beta0 <= self.betaT < 1, "need 0 < beta0 <= betaT < 1")
        need(self.sampler_mode in SAMPLER_MODES, f"sampler_mode must be one of {SAMPLER_MODES}")
        need(len(self.lambdas) == 3 and all(l >= 0 for l in self.lambdas), "lambda needs 3 non-negative weights")
        need(self.phase1_epochs >= 0 and self.phase2_epochs >= 0, "epoch counts must be >= 0")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.lr > 0, "lr must be positive")
        need(len(self.channels) >= 1 and all(c >= 1 for c in self.channels), "channels must be positive widths")
        need(self.emb_dim >= 2 and self.emb_dim % 2 == 0, "emb_dim must be even and >= 2")
        need(0 <= self.ratio, "ratio must be >= 0")
        need(len(self.grid_dims) == 3 and all(d >= 1 for d in self.grid_dims), "grid_dims needs 3 positive ints")
        need(self.voxel_size > 0, "voxel_size must be positive")
        need(self.K >= 1, "K must be >= 1")
        need(self.n_objects >= 1 and self.n_views >= 2, "need n_objects >= 1 and n_views >= 2")
        need(all(c in CATEGORIES for c in self.categories) and self.categories, f"categories must be in {CATEGORIES}")
        need(self.image_size >= 4, "image_size must be >= 4")
        need(self.noise_sigma is None or self.noise_sigma >= 0, "noise_sigma must be >= 0")
        need(0 <= self.dropout_p < 1, "dropout_p must lie in [0, 1)")
        need(self.max_points >= 1 and self.blur_radius >= 0, "max_points >= 1 and blur_radius >= 0")
        need(self.render_mode in RENDER_MODES, f"render_mode must be one of {RENDER_MODES}")
        need(self.render_samples >= 2 and self.render_pixels >= 1, "render_samples >= 2 and render_pixels >= 1")
        need(self.tau > 0 and self.eval_points >= 1, "tau must be positive and eval_points >= 1")
        need(self.eval_k >= 1 and 0 <= self.eval_view < self.n_views, "eval_k >= 1 and eval_view < n_views")
        need(self.max_exact >= 1, "max_exact must be >= 1")

    @classmethod
    def paper(cls, **overrides) -> "RunConfig":
        """Full-scale preset: T=1000 schedule, K=10, 64^3 grid of 2.5 cm voxels, 8192 points."""
        base = dict(T=1000, beta0=1e-4, betaT=2e-2, batch_size=16, lr=1e-4, K=10,
                    grid_dims=(64, 64, 64), voxel_size=0.025, max_points=8192)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = list(d.pop("lambdas"))
        for k in ("channels", "grid_dims", "categories"):
            d[k] = list(d[k])
        return dict(sorted(d.items()))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        if "lambdas" in d:
            raise ConfigError("unknown config key 'lambdas' (use 'lambda')")
        if "lambda" in d:
            d["lambdas"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def stream(self, name: str) -> np.random.Generator:
        return stream(self.seed, name)


def seed_sequence(seed: int, name: str) -> np.random.SeedSequence:
    """Split the master seed by stage name: ``SeedSequence([seed, crc32(name)])``."""
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator per named stage, stable across runs and platforms."""
    return np.random.default_rng(seed_sequence(seed, name))


def load_config(path=None, **overrides) -> RunConfig:
    """Defaults, then the JSON file (if any), then non-None overrides."""
    d = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    cfg = RunConfig.from_dict(d)
    return cfg.with_overrides(**overrides) if overrides else cfg


def dump_config(cfg: RunConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
