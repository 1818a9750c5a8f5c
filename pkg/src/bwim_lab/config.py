"""Run configuration: bridge presets, YAML loading with preset inheritance, digests.

A config file looks like::

    preset: sbm
    traffic: {seed: 7}
    dataset: {n_instants: 2000, sigma: 0.1}

Everything not given comes from the preset. Sections are numbered from 1 in
config files and on the command line, matching the usual bridge drawings.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .dataset import SectionMap
from .errors import ConfigError
from .models import DoviConfig
from .structure import BeamModel, Segment, SensorLayout, Support
from .traffic import DEFAULT_TYPE_PROBS, CaParams

PRESETS: dict[str, dict[str, Any]] = {
    "sbm": {
        "preset": "sbm",
        "traffic": {
            "n_cells": 30, "cell_length": 2.0, "v_max": 4,
            "p_slow": 0.3, "p_inject": 0.5,
            "type_probs": list(DEFAULT_TYPE_PROBS),
            "weight_cap": 60000.0, "warmup_ticks": 100, "tick_duration": 1.0, "seed": 1,
        },
        "beam": {
            "kind": "simply_supported", "length": 60.0, "E": 33e9, "I": 0.28,
            "rho": 2600.0, "A": 0.94, "n_elements": 60,
        },
        "sections": {"section_length": 16.0, "target_section": 2, "threshold_kg": 30000.0},
        "dataset": {"n_instants": 100_000, "sample_dt": 0.5, "window": 8, "sigma": 0.0,
                    "split": [6, 2, 2], "noise_seed": 2},
        "model": {"l": 8, "c": 3, "s": 3, "k": 64, "lr": 0.002, "batch_size": 128,
                  "epochs": 50, "threshold": 0.5, "tune_threshold": False,
                  "activation": "relu", "seed": 3, "patience": None},
        "study": {"approaches": ["dovi", "lr"], "sections": None,
                  "sigmas": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
                  "section_lengths": [4.0, 8.0, 12.0, 16.0, 20.0, 24.0, 28.0],
                  "neighbor_section": None, "weight_bin_start": 30000.0,
                  "weight_bin_width": 10000.0},
    },
    "cbm": {
        "preset": "cbm",
        "traffic": {
            "n_cells": 141, "cell_length": 5.0, "v_max": 6,
            "p_slow": 0.3, "p_inject": 0.8,
            "type_probs": list(DEFAULT_TYPE_PROBS),
            "weight_cap": 60000.0, "warmup_ticks": 300, "tick_duration": 1.0, "seed": 1,
        },
        # Continuous girder on pinned ends plus evenly spaced vertical springs
        # standing in for the stay cables.
        "beam": {
            "kind": "spring_supported", "length": 705.0, "E": 200e9, "I": 2.5,
            "rho": 7850.0, "A": 1.72, "n_elements": 282,
            "spring_spacing": 15.0, "spring_stiffness": 1e8,
        },
        "sections": {"section_length": 50.0, "target_section": 14, "threshold_kg": 30000.0},
        "dataset": {"n_instants": 100_000, "sample_dt": 1.0, "window": 8, "sigma": 0.0,
                    "split": [6, 2, 2], "noise_seed": 2},
        "model": {"l": 8, "c": 3, "s": 3, "k": 64, "lr": 0.002, "batch_size": 128,
                  "epochs": 50, "threshold": 0.5, "tune_threshold": False,
                  "activation": "relu", "seed": 3, "patience": None},
        "study": {"approaches": ["dovi", "lr"], "sections": None,
                  "sigmas": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
                  "section_lengths": [25.0, 50.0, 75.0, 100.0, 150.0],
                  "neighbor_section": None, "weight_bin_start": 30000.0,
                  "weight_bin_width": 10000.0},
    },
}

SECTIONS = ("traffic", "beam", "sections", "dataset", "model", "study")


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def from_mapping(cls, raw: Mapping | None) -> "RunConfig":
        raw = dict(raw or {})
        name = raw.get("preset", "sbm")
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        unknown = set(raw) - set(SECTIONS) - {"preset"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in SECTIONS:
            extra = set(raw.get(key) or {}) - set(PRESETS[name][key])
            if extra:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(extra)}")
        cfg = cls(_merge(PRESETS[name], {k: v for k, v in raw.items() if v is not None}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None, overrides: Mapping | None = None) -> "RunConfig":
        raw: dict = {}
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            try:
                raw = yaml.safe_load(text) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError(f"config {path} must be a mapping")
        if overrides:
            if "preset" in overrides and overrides["preset"] != raw.get("preset", "sbm"):
                # Switching preset drops file values that belonged to the other bridge.
                raw = {"preset": overrides["preset"]}
            raw = _merge(raw, overrides)
        return cls.from_mapping(raw)

    def validate(self) -> None:
        self.ca_params()
        self.beam_model()
        self.section_map()
        self.model_config()
        seeds = [self["traffic"]["seed"], self["dataset"]["noise_seed"], self["model"]["seed"]]
        if any(not isinstance(s, int) for s in seeds):
            raise ConfigError("all seeds must be explicit integers")
        if self["dataset"]["n_instants"] < self["dataset"]["window"]:
            raise ConfigError("n_instants must be at least the window length")

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    @property
    def preset(self) -> str:
        return self.data["preset"]

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def digest_of(self, *keys: str) -> str:
        """Digest over a subset of sections (e.g. only what shaped a trajectory)."""
        part = {k: self.data[k] for k in ("preset", *keys)}
        return hashlib.sha256(json.dumps(part, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **sections: Mapping) -> "RunConfig":
        return RunConfig.from_mapping(_merge(self.data, sections))

    def ca_params(self) -> CaParams:
        t = dict(self["traffic"])
        t["type_probs"] = tuple(t["type_probs"])
        return CaParams(**t)

    def beam_model(self) -> BeamModel:
        b = self["beam"]
        seg = Segment(b["length"], b["E"], b["I"], b.get("rho", 0.0), b.get("A", 0.0))
        if b["kind"] == "simply_supported":
            supports = (Support(0.0), Support(b["length"]))
        elif b["kind"] == "spring_supported":
            n = int(round(b["length"] / b["spring_spacing"]))
            inner = [Support(i * b["spring_spacing"], "spring", b["spring_stiffness"])
                     for i in range(1, n) if i * b["spring_spacing"] < b["length"]]
            supports = (Support(0.0), *inner, Support(b["length"]))
        else:
            raise ConfigError(f"unknown beam kind {b['kind']!r}")
        return BeamModel(b["length"], (seg,), supports, b["n_elements"])

    def section_map(self, section: int | None = None) -> SectionMap:
        s = self["sections"]
        number = s["target_section"] if section is None else section
        sm = SectionMap.uniform(self["beam"]["length"], s["section_length"],
                                self["traffic"]["cell_length"], 0, s["threshold_kg"])
        if not 1 <= number <= sm.n_sections:
            raise ConfigError(f"section {number} out of range 1..{sm.n_sections}")
        return sm.with_target(number - 1)

    def sensors(self) -> SensorLayout:
        return SensorLayout.section_midpoints(self.section_map().boundaries)

    def model_config(self) -> DoviConfig:
        m = dict(self["model"])
        m["l"] = self["dataset"]["window"]
        return DoviConfig(**m)

    def n_ticks(self) -> int:
        d, t = self["dataset"], self["traffic"]
        sub = int(round(t["tick_duration"] / d["sample_dt"]))
        return (d["n_instants"] - 1 + sub - 1) // sub + 1


def cli_overrides(seed: int | None = None, sigma: float | None = None, section: int | None = None,
                  preset: str | None = None) -> dict:
    """Translate the common command-line flags into a config overlay."""
    over: dict = {}
    if preset is not None:
        over["preset"] = preset
    if seed is not None:
        over["traffic"] = {"seed": seed}
        over["dataset"] = {"noise_seed": seed + 1}
        over["model"] = {"seed": seed + 2}
    if sigma is not None:
        over.setdefault("dataset", {})["sigma"] = sigma
    if section is not None:
        over["sections"] = {"target_section": section}
    return over
