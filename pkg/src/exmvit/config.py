"""Variant registry: the single source of truth for shortcut ratios,
channel widths, and scale profiles.

Shortcut ratios are kept as exact rationals so channel-width integrality is
checked without float drift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction

NUM_BLOCKS = 5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneProfile:
    """Scale-dependent backbone dimensions shared by every variant."""

    name: str
    stem_channels: int
    block_channels: tuple[int, int, int, int, int]
    transformer_dims: tuple[int, int, int]
    transformer_depths: tuple[int, int, int]
    heads: int
    patch: tuple[int, int]
    mv2_expansion: int
    ffn_mult: int
    class_count: int
    input_size: int


IMAGENET_PROFILE = BackboneProfile(
    name="imagenet",
    stem_channels=16,
    block_channels=(32, 64, 96, 128, 160),
    transformer_dims=(144, 192, 240),
    transformer_depths=(2, 4, 3),
    heads=4,
    patch=(2, 2),
    mv2_expansion=4,
    ffn_mult=2,
    class_count=1000,
    input_size=256,
)

# 1/8-width shallow mirror for desk-scale training and gradient checks; the
# shortcut ratios are ratios, so they carry over unchanged.
TINY_PROFILE = BackboneProfile(
    name="tiny",
    stem_channels=2,
    block_channels=(4, 8, 12, 16, 20),
    transformer_dims=(16, 16, 16),
    transformer_depths=(1, 1, 1),
    heads=4,
    patch=(2, 2),
    mv2_expansion=4,
    ffn_mult=2,
    class_count=8,
    input_size=64,
)

PROFILES = {"imagenet": IMAGENET_PROFILE, "tiny": TINY_PROFILE}


def expand_width(rho: tuple[Fraction, ...], channels: tuple[int, ...]) -> int:
    """Total classifier input width: sum of rho_k * C_k over all blocks."""
    if len(rho) != len(channels):
        raise ConfigError(f"rho has {len(rho)} entries, channels has {len(channels)}")
    total = 0
    for k, (r, c) in enumerate(zip(rho, channels), start=1):
        term = Fraction(r) * c
        if term.denominator != 1:
            raise ConfigError(f"block {k}: rho={r} times {c} channels is not an integer")
        if term < 0:
            raise ConfigError(f"block {k}: negative shortcut width")
        total += int(term)
    return total


@dataclass(frozen=True)
class VariantConfig:
    name: str
    rho: tuple[Fraction, Fraction, Fraction, Fraction, Fraction]
    profile: str = "imagenet"
    class_count: int | None = None
    input_size: int | None = None
    block_channels: tuple[int, ...] = field(default=None)  # derived from profile if None

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        prof = PROFILES[self.profile]
        object.__setattr__(self, "rho", tuple(Fraction(r) for r in self.rho))
        if self.block_channels is None:
            object.__setattr__(self, "block_channels", prof.block_channels)
        else:
            object.__setattr__(self, "block_channels", tuple(self.block_channels))
        if self.class_count is None:
            object.__setattr__(self, "class_count", prof.class_count)
        if self.input_size is None:
            object.__setattr__(self, "input_size", prof.input_size)

    @property
    def backbone(self) -> BackboneProfile:
        return PROFILES[self.profile]

    @property
    def classifier_width(self) -> int:
        return expand_width(self.rho, self.block_channels)

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "rho": [str(r) for r in self.rho],
            "block_channels": list(self.block_channels),
            "class_count": self.class_count,
            "input_size": self.input_size,
            "profile": self.profile,
        }
        return json.dumps(doc, indent=2)


_CONFIG_FIELDS = {"name", "rho", "block_channels", "class_count", "input_size", "profile"}


def config_from_json(text: str) -> VariantConfig:
    doc = json.loads(text)
    unknown = set(doc) - _CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    missing = {"name", "rho"} - set(doc)
    if missing:
        raise ConfigError(f"missing config fields: {sorted(missing)}")
    cfg = VariantConfig(
        name=doc["name"],
        rho=tuple(Fraction(r) for r in doc["rho"]),
        profile=doc.get("profile", "imagenet"),
        class_count=doc.get("class_count"),
        input_size=doc.get("input_size"),
        block_channels=tuple(doc["block_channels"]) if "block_channels" in doc else None,
    )
    violations = validate(cfg)
    if violations:
        raise ConfigError("; ".join(violations))
    return cfg


def _registry() -> dict[str, VariantConfig]:
    frac = Fraction
    rhos = {
        "mobilevit-s": (0, 0, 0, 0, 4),
        "exmvit-576": (0, 0, frac(1, 3), frac(1, 2), 3),
        "exmvit-640": (0, 0, frac(1, 3), 1, 3),
        "exmvit-704": (0, 0, frac(1, 3), frac(1, 4), 4),
        "exmvit-864": (0, 0, 1, 1, 4),
        "exmvit-928": (0, 0, frac(4, 3), frac(5, 4), 4),
    }
    reg = {}
    for name, rho in rhos.items():
        reg[name] = VariantConfig(name=name, rho=tuple(Fraction(r) for r in rho))
        tiny = f"{name}-tiny"
        reg[tiny] = VariantConfig(name=tiny, rho=tuple(Fraction(r) for r in rho), profile="tiny")
    return reg


REGISTRY: dict[str, VariantConfig] = _registry()


def registered_names() -> list[str]:
    return list(REGISTRY)


def resolve_variant(name: str, overrides: dict | None = None) -> VariantConfig:
    """Look up a registered variant, optionally overriding class_count,
    input_size, profile, or rho (re-validated)."""
    if name not in REGISTRY:
        raise ConfigError(f"unknown variant {name!r}; registered: {', '.join(REGISTRY)}")
    cfg = REGISTRY[name]
    overrides = dict(overrides or {})
    allow_early = overrides.pop("allow_early_shortcuts", False)
    if overrides:
        bad = set(overrides) - {"class_count", "input_size", "profile", "rho"}
        if bad:
            raise ConfigError(f"unsupported overrides: {sorted(bad)}")
        if "profile" in overrides and "class_count" not in overrides:
            overrides["class_count"] = None
        if "profile" in overrides and "input_size" not in overrides:
            overrides["input_size"] = None
        if "profile" in overrides:
            overrides["block_channels"] = None
        if "rho" in overrides:
            overrides["rho"] = tuple(Fraction(r) for r in overrides["rho"])
        cfg = replace(cfg, **overrides)
    violations = validate(cfg, allow_early_shortcuts=allow_early)
    if violations:
        raise ConfigError("; ".join(violations))
    return cfg


def validate(config: VariantConfig, allow_early_shortcuts: bool = False) -> list[str]:
    """Return a list of invariant violations; an empty list means valid."""
    violations = []
    if len(config.rho) != NUM_BLOCKS:
        violations.append(f"rho must have {NUM_BLOCKS} entries, got {len(config.rho)}")
        return violations
    if len(config.block_channels) != NUM_BLOCKS:
        violations.append(f"block_channels must have {NUM_BLOCKS} entries")
        return violations
    for k, r in enumerate(config.rho, start=1):
        if r < 0:
            violations.append(f"rho_{k} is negative")
    if not allow_early_shortcuts and (config.rho[0] != 0 or config.rho[1] != 0):
        violations.append("rho_1 and rho_2 must be 0 (early blocks only down-sample)")
    for k, (r, c) in enumerate(zip(config.rho, config.block_channels), start=1):
        if r > 0 and (Fraction(r) * c).denominator != 1:
            violations.append(f"rho_{k}={r} gives fractional width for {c} channels")
    if all(r == 0 for r in config.rho):
        violations.append("at least one rho must be positive")
    if config.input_size % 32:
        violations.append(f"input_size {config.input_size} not divisible by 32")
    if config.class_count < 1:
        violations.append("class_count must be positive")
    return violations
