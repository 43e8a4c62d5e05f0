"""Experiment configuration: an INI file of ``key = value`` lines under
bracketed section headers, resolved into typed settings.

One global seed drives every stage; each stage gets ``seed + offset`` so
stages can be rerun independently.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from hybridx.data import SplitSpec
from hybridx.facial import DenseNetConfig
from hybridx.numerics.rng import derive_seed
from hybridx.social import DEFAULT_LAMBDA, DEFAULT_LR_GRID

SEED_OFFSETS = {"split": 1, "svm": 2, "densenet": 3, "synth": 4, "validation": 5}


@dataclass(frozen=True)
class SvmSettings:
    lam: float = DEFAULT_LAMBDA
    epochs: int = 100
    batch_size: int | None = 16
    lr_grid: tuple[float, ...] = DEFAULT_LR_GRID
    validation_fraction: float = 0.2
    margin_scale: float = 1.0


@dataclass(frozen=True)
class FusionSettings:
    weight_mode: str = "prevalence"
    weights: tuple[float, float] = (0.5, 0.5)
    threshold: float = 0.5

    def __post_init__(self):
        if self.weight_mode not in ("prevalence", "explicit"):
            raise ValueError(f"weight_mode must be 'prevalence' or 'explicit', got {self.weight_mode!r}")


@dataclass(frozen=True)
class SynthSettings:
    kind: str = "paired"
    n_asd: int = 130
    n_non: int = 105
    n_images_asd: int | None = None
    n_images_non: int | None = None
    side: int = 16
    contrast: float = 0.5
    noise_sigma: float = 0.1
    rho: float = 1.0
    ambiguous_strength: float = 1.0
    missing_fraction: float = 0.0
    asd_score_probs: tuple[float, ...] = (0.05, 0.15, 0.35, 0.45)
    non_asd_score_probs: tuple[float, ...] = (0.45, 0.35, 0.15, 0.05)

    def __post_init__(self):
        if self.kind not in ("social", "images", "paired"):
            raise ValueError(f"kind must be social, images or paired, got {self.kind!r}")
        if self.n_asd < 1 or self.n_non < 1:
            raise ValueError(f"need at least one patient per class, got {self.n_asd}/{self.n_non}")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    social_csv: str | None = None
    image_dir: str | None = None
    validation_dir: str | None = None
    paired_dir: str | None = None
    out_dir: str = "out"
    split_fractions: tuple[float, ...] = (0.8, 0.2)
    stratified: bool = True
    svm: SvmSettings = field(default_factory=SvmSettings)
    densenet: DenseNetConfig = field(default_factory=DenseNetConfig)
    densenet_validation_fraction: float = 0.2
    fusion: FusionSettings = field(default_factory=FusionSettings)
    synth: SynthSettings = field(default_factory=SynthSettings)

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, SEED_OFFSETS[stage])

    @property
    def split(self) -> SplitSpec:
        return SplitSpec(self.split_fractions, self.stratified, self.stage_seed("split"))

    @property
    def densenet_config(self) -> DenseNetConfig:
        return replace(self.densenet, seed=self.stage_seed("densenet"))


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _convert(kind: str, text: str):
    text = text.strip()
    if kind in ("str | None", "int | None") and text.lower() in ("", "none", "full"):
        return None
    if kind.startswith("int"):
        return int(text)
    if kind == "float":
        return float(text)
    if kind == "bool":
        if text.lower() not in ("true", "false", "yes", "no", "1", "0"):
            raise ValueError(f"not a boolean: {text!r}")
        return text.lower() in ("true", "yes", "1")
    if kind.startswith("tuple"):
        return _floats(text)
    return text


def _section(cls, values: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, text in values.items():
        if key not in known:
            raise ValueError(f"[{where}] unknown key {key!r}")
        kwargs[key] = _convert(known[key].type, text)
    return kwargs


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read an INI config (all sections optional) and apply keyword overrides.

    Overrides address top-level fields directly (``seed=3``) and section
    fields as ``section__key`` (``synth__n_asd=0``).
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        parser.read_string(text, source=str(path))
    sections = {name: dict(parser[name]) for name in parser.sections()}

    top = {}
    top.update(sections.pop("experiment", {}))
    top.update(sections.pop("paths", {}))
    if "split" in sections:
        split = sections.pop("split")
        if "fractions" in split:
            top["split_fractions"] = split.pop("fractions")
        top.update(split)
    sub = {
        "svm": (SvmSettings, sections.pop("svm", {})),
        "densenet": (DenseNetConfig, sections.pop("densenet", {})),
        "fusion": (FusionSettings, sections.pop("fusion", {})),
        "synth": (SynthSettings, sections.pop("synth", {})),
    }
    if sections:
        raise ValueError(f"unknown config sections: {', '.join(sorted(sections))}")
    dn = sub["densenet"][1]
    if "seed" in dn:
        raise ValueError("[densenet] seed is derived from [experiment] seed and cannot be set")
    if "validation_fraction" in dn:
        top["densenet_validation_fraction"] = dn.pop("validation_fraction")

    kwargs = _section(ExperimentConfig, top, "experiment")
    for name, (cls, values) in sub.items():
        section_kwargs = _section(cls, values, name)
        for key in list(overrides):
            prefix, _, rest = key.partition("__")
            if prefix == name and rest:
                section_kwargs[rest] = overrides.pop(key)
        kwargs[name] = cls(**section_kwargs)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**kwargs)


def dumps_config(cfg: ExperimentConfig) -> str:
    """The fully resolved configuration, in the same INI dialect it is read from."""

    def fmt(value):
        if value is None:
            return "none"
        if isinstance(value, tuple):
            return ", ".join(repr(v) for v in value)
        if isinstance(value, bool):
            return "true" if value else "false"
        return repr(value) if isinstance(value, float) else str(value)

    lines = ["[experiment]", f"seed = {cfg.seed}", "", "[paths]"]
    for key in ("social_csv", "image_dir", "validation_dir", "paired_dir", "out_dir"):
        lines.append(f"{key} = {fmt(getattr(cfg, key))}")
    lines += ["", "[split]", f"fractions = {fmt(cfg.split_fractions)}",
              f"stratified = {fmt(cfg.stratified)}", f"# derived seed = {cfg.stage_seed('split')}"]
    for name in ("svm", "densenet", "fusion", "synth"):
        lines += ["", f"[{name}]"]
        obj = getattr(cfg, name)
        for f in fields(obj):
            if name == "densenet" and f.name == "seed":
                continue
            lines.append(f"{f.name} = {fmt(getattr(obj, f.name))}")
        if name == "densenet":
            lines.append(f"validation_fraction = {fmt(cfg.densenet_validation_fraction)}")
            lines.append(f"# derived seed = {cfg.stage_seed('densenet')}")
        if name == "svm":
            lines.append(f"# derived seed = {cfg.stage_seed('svm')}")
    return "\n".join(lines) + "\n"
