"""Run configuration: flat ``key = value`` files with flag overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .hgcn import HcConfig
from .sage import PROFILES, TrainConfig
from .seal import SealConfig

METHODS = ("sage", "seal-ci", "seal-ai")


@dataclass
class RunConfig:
    seed: int = 0
    profile: str = "synthetic"
    data: Optional[str] = None
    out: Optional[str] = None
    model: Optional[str] = None
    # generation
    skeleton: str = "synthetic"
    citation_edges: Optional[str] = None
    citation_classes: Optional[str] = None
    scale: float = 1.0
    # protocol
    labeled: Optional[int] = None
    test: int = 1000
    lam: int = 40
    budget: int = 160
    k: int = 10
    sizes: str = "140,180,220,260,300"
    methods: str = "sage,seal-ci,seal-ai"
    repeat: int = 5
    # instance classifier
    epochs: int = 200
    finetune_epochs: int = 20
    batch_size: int = 32
    lr: float = 0.01
    ai_fine_tune: bool = True
    h: Optional[int] = None
    v: Optional[int] = None
    d: Optional[int] = None
    r: Optional[int] = None
    u: Optional[int] = None
    dropout: Optional[float] = None
    penalty: Optional[float] = None
    # hierarchical classifier
    hc_epochs: int = 100
    hc_lr: float = 0.01
    hc_hidden: int = 16
    hc_fine_tune: bool = False
    # diagnostics / export
    attention: int = 3

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.skeleton not in ("synthetic", "citation"):
            raise ConfigError(f"skeleton must be 'synthetic' or 'citation', got {self.skeleton!r}")
        if self.skeleton == "citation" and not (self.citation_edges and self.citation_classes):
            raise ConfigError("a citation skeleton needs citation_edges and citation_classes")
        if not 0 < self.scale <= 1:
            raise ConfigError(f"scale must lie in (0, 1], got {self.scale}")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.repeat < 1:
            raise ConfigError("repeat must be at least 1")
        if self.attention < 0:
            raise ConfigError("attention count must be non-negative")
        if self.labeled is not None and self.labeled < 1:
            raise ConfigError("at least one labelled instance is required")
        if self.test < 0:
            raise ConfigError("test size must be non-negative")
        bad = [m for m in self.method_list() if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        sizes = self.size_list()
        if not sizes or min(sizes) < 1:
            raise ConfigError(f"label sizes must be positive, got {self.sizes!r}")
        # build the component configs so their own checks run up front
        self.seal_config()

    def method_list(self):
        return [m.strip() for m in self.methods.split(",") if m.strip()]

    def size_list(self):
        try:
            return [int(x) for x in self.sizes.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"sizes must be comma-separated integers, got {self.sizes!r}") from None

    def model_dims(self):
        dims = dict(PROFILES[self.profile])
        for key in dims:
            value = getattr(self, key)
            if value is not None:
                dims[key] = value
        return dims

    def labeled_for(self, method):
        if self.labeled is not None:
            return self.labeled
        return 140 if method == "seal-ai" else 300

    def seal_config(self, seed=None, **overrides):
        cfg = dict(
            lam=self.lam,
            budget=self.budget,
            k=self.k,
            ic=TrainConfig(self.epochs, self.finetune_epochs, self.batch_size, self.lr),
            hc=HcConfig(self.hc_epochs, self.hc_lr, self.hc_hidden, self.hc_fine_tune),
            model=self.model_dims(),
            seed=self.seed if seed is None else seed,
            ai_fine_tune=self.ai_fine_tune,
        )
        cfg.update(overrides)
        return SealConfig(**cfg)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _field_type(name):
    t = _FIELDS[name].type
    for base in ("bool", "int", "float", "str"):
        if base in str(t):
            return base
    return "str"


def coerce(name, text):
    """Convert a textual value to the type of field ``name``."""
    if name not in _FIELDS:
        raise ConfigError(f"unknown configuration key {name!r}")
    text = text.strip()
    optional = "Optional" in str(_FIELDS[name].type)
    if optional and text.lower() in ("", "none"):
        return None
    kind = _field_type(name)
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot read {text!r} as {kind}") from None
    return text


def parse_config_text(text, source="<config>"):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown configuration key {key!r}")
        values[key] = coerce(key, value)
    return values


def load_config(path=None, overrides=None):
    """Defaults, then the file at ``path``, then ``overrides``; validated once at the end."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        values.update(parse_config_text(p.read_text(), str(p)))
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown configuration key {key!r}")
        values[key] = value
    return RunConfig(**values)


def field_names():
    return list(_FIELDS)
