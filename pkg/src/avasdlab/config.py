"""Sectioned text configuration for the experiment harness.

The format is INI-style (configparser dialect): ``[section]`` headers and
``key = value`` lines, ``#`` comments. Every key is typed by the schema
below; unknown sections or keys are rejected, omitted keys fall back to
documented defaults, and the fully resolved configuration can be written
back out in canonical order so a run directory always carries the exact
settings it used. See ``docs/config_format.md`` for the grammar.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

import numpy as np

from .attacks import METHODS, MODALITIES, SCENARIOS, AttackConfig
from .data import DEFAULT_CASE_MIX, GeneratorSpec
from .interaction import InteractionWeights
from .model import ModelConfig
from .training import LOSS_MODES, TrainConfig


class ConfigError(ValueError):
    """Configuration failed to parse or validate."""


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_float_list(raw: str):
    return tuple(float(x) for x in raw.split(",") if x.strip() != "")


def _parse_int_list(raw: str):
    return tuple(int(x) for x in raw.split(",") if x.strip() != "")


def _parse_str_list(raw: str):
    return tuple(x.strip() for x in raw.split(",") if x.strip() != "")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# (section, key) -> (parser, default). Defaults are written back by resolve().
SCHEMA = {
    "run": {
        "seed": (int, 0),
        "out": (str, ""),
        "jobs": (int, 1),
    },
    "dataset": {
        "path": (str, "dataset.jsonl"),
        "n_samples": (int, 500),
        "seed": (int, 1),
        "case_mix": (_parse_float_list, DEFAULT_CASE_MIX),
        "t_min": (int, 5),
        "t_max": (int, 20),
        "audio_scale": (float, 0.004),
        "visual_scale": (float, 2.0),
        "snr": (float, 3.0),
        "stay_active": (float, 0.85),
        "stay_silent": (float, 0.55),
        "audio_distractors": (int, 4),
        "visual_distractors": (int, 8),
        "distractor_scale": (float, 2.0),
        "train_fraction": (float, 0.75),
    },
    "model": {
        "seed": (int, 0),
        "embed": (int, 16),
        "d_audio": (int, 16),
        "d_visual": (int, 64),
        "cross_attention": (_parse_bool, True),
        "audio_input_gain": (float, 250.0),
        "visual_input_gain": (float, 0.5),
        "checkpoint": (str, "checkpoint.bin"),
    },
    "train": {
        "epochs": (int, 30),
        "learning_rate": (float, 0.01),
        "momentum": (float, 0.9),
        "seed": (int, 0),
        "loss_mode": (str, "ce"),
        "weights": (_parse_float_list, (0.1, 0.1, 0.1, 0.1)),
        "embedding_source": (str, "encoder"),
        "adv_method": (str, "bim"),
        "adv_eps_av": (float, 5.0),
        "adv_steps": (int, 1),
    },
    "attack": {
        "methods": (_parse_str_list, ("pgd",)),
        "eps_av": (_parse_float_list, (5.0,)),
        "modalities": (_parse_str_list, ("both",)),
        "scenarios": (_parse_str_list, ("training-aware",)),
        "steps": (int, 10),
        "restarts": (int, 3),
        "momentum_decay": (float, 1.0),
        "random_start": (_parse_bool, True),
        "seeds": (_parse_int_list, (0,)),
        "clamp_visual": (_parse_bool, False),
        "max_samples": (int, 0),
        "substitute_checkpoint": (str, ""),
    },
    "eval": {
        "threshold": (float, 0.5),
        "prefilter_checkpoints": (_parse_str_list, ()),
    },
}

SECTION_ORDER = ("run", "dataset", "model", "train", "attack", "eval")


@dataclass
class ExperimentConfig:
    """Typed view of one resolved configuration file."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, section_key):
        section, key = section_key
        return self.values[section][key]

    def generator_spec(self) -> GeneratorSpec:
        d = self.values["dataset"]
        return GeneratorSpec(
            d_audio=self.values["model"]["d_audio"],
            d_visual=self.values["model"]["d_visual"],
            t_min=d["t_min"], t_max=d["t_max"],
            audio_scale=d["audio_scale"], visual_scale=d["visual_scale"], snr=d["snr"],
            stay_active=d["stay_active"], stay_silent=d["stay_silent"],
            audio_distractors=d["audio_distractors"],
            visual_distractors=d["visual_distractors"],
            distractor_scale=d["distractor_scale"],
        )

    def model_config(self, *, cross_attention: bool | None = None,
                     seed: int | None = None) -> ModelConfig:
        m = self.values["model"]
        return ModelConfig(
            d_audio=m["d_audio"], d_visual=m["d_visual"], embed=m["embed"],
            cross_attention=m["cross_attention"] if cross_attention is None else cross_attention,
            audio_input_gain=m["audio_input_gain"], visual_input_gain=m["visual_input_gain"],
            seed=m["seed"] if seed is None else seed,
        )

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        w = t["weights"]
        if len(w) != 4:
            raise ConfigError(f"[train] weights needs 4 values, got {len(w)}")
        attack = None
        if "adversarial" in t["loss_mode"]:
            attack = AttackConfig(method=t["adv_method"], eps_av=t["adv_eps_av"],
                                  steps=t["adv_steps"], modality="both",
                                  scenario="training-aware", seed=t["seed"])
        try:
            return TrainConfig(
                epochs=t["epochs"], learning_rate=t["learning_rate"], momentum=t["momentum"],
                loss_mode=t["loss_mode"], weights=InteractionWeights(*w),
                embedding_source=t["embedding_source"], attack=attack, seed=t["seed"])
        except ValueError as exc:
            raise ConfigError(f"[train] {exc}") from exc

    def attack_grid(self):
        """All (method, eps_av, modality, scenario, seed) cells plus the
        shared iteration settings, as AttackConfig objects keyed by cell."""
        a = self.values["attack"]
        cells = []
        try:
            for method in a["methods"]:
                for eps in a["eps_av"]:
                    for modality in a["modalities"]:
                        for scenario in a["scenarios"]:
                            for seed in a["seeds"]:
                                cells.append(AttackConfig(
                                    method=method, eps_av=eps, steps=a["steps"],
                                    momentum_decay=a["momentum_decay"], restarts=a["restarts"],
                                    random_start=a["random_start"], modality=modality,
                                    scenario=scenario, seed=seed,
                                    clamp_visual=a["clamp_visual"]))
        except ValueError as exc:
            raise ConfigError(f"[attack] {exc}") from exc
        return cells

    def validate(self) -> None:
        d = self.values["dataset"]
        if d["n_samples"] < 1:
            raise ConfigError("[dataset] n_samples must be >= 1")
        mix = d["case_mix"]
        if len(mix) != 4 or any(f < 0 for f in mix) or abs(sum(mix) - 1.0) > 1e-9:
            raise ConfigError(f"[dataset] case_mix must be 4 nonnegative fractions summing to 1, got {mix}")
        if not 0.0 < d["train_fraction"] < 1.0:
            raise ConfigError("[dataset] train_fraction must be in (0, 1)")
        if not 5 <= d["t_min"] <= d["t_max"]:
            raise ConfigError("[dataset] need 5 <= t_min <= t_max")
        t = self.values["train"]
        if t["loss_mode"] not in LOSS_MODES:
            raise ConfigError(f"[train] loss_mode must be one of {LOSS_MODES}, got {t['loss_mode']!r}")
        if t["embedding_source"] not in ("encoder", "fused"):
            raise ConfigError(f"[train] embedding_source must be encoder or fused")
        if t["adv_method"] not in METHODS:
            raise ConfigError(f"[train] adv_method must be one of {METHODS}")
        a = self.values["attack"]
        for m in a["methods"]:
            if m not in METHODS:
                raise ConfigError(f"[attack] unknown method {m!r}")
        for m in a["modalities"]:
            if m not in MODALITIES:
                raise ConfigError(f"[attack] unknown modality {m!r}")
        for s in a["scenarios"]:
            if s not in SCENARIOS:
                raise ConfigError(f"[attack] unknown scenario {s!r}")
        if any(e < 0 for e in a["eps_av"]):
            raise ConfigError("[attack] eps_av values must be >= 0")
        if a["max_samples"] < 0:
            raise ConfigError("[attack] max_samples must be >= 0")
        self.train_config()
        self.attack_grid()

    def to_text(self) -> str:
        """Canonical serialization: schema order, every key present."""
        out = io.StringIO()
        for section in SECTION_ORDER:
            out.write(f"[{section}]\n")
            for key in SCHEMA[section]:
                out.write(f"{key} = {_fmt(self.values[section][key])}\n")
            out.write("\n")
        return out.getvalue()


def parse_config(text: str) -> ExperimentConfig:
    """Parse and resolve a configuration; unknown keys are rejected."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc

    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
    for section, keys in SCHEMA.items():
        section_values = {}
        present = parser.has_section(section)
        if present:
            for key in parser.options(section):
                if key not in keys:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
        for key, (parse, default) in keys.items():
            if present and parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    section_values[key] = parse(raw)
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from exc
            else:
                section_values[key] = default
        values[section] = section_values
    cfg = ExperimentConfig(values)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def default_config() -> ExperimentConfig:
    cfg = ExperimentConfig({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})
    cfg.validate()
    return cfg
