"""Experiment configuration: INI files describing the full run grid.

A config names the feature front-ends, back-ends, the noise x SNR grid,
optional enhancement / fusion, per-feature parameter overrides and the
root seed.  Everything downstream (caching, directory names, seeds) is
derived from the canonical text of the parsed config, so two configs
that resolve to the same settings share cache entries.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace

from . import features
from .enhancement import ENHANCEMENT_METHODS
from .noiselab import NOISE_KINDS

BACKENDS = ("gmm", "ivector-cosine", "ivector-plda")
FUSION_METHODS = ("average", "logistic")


@dataclass(frozen=True)
class GridCell:
    """One test condition: clean, or a noise kind at a target SNR."""

    noise_kind: str | None = None
    snr_db: float | None = None

    def __post_init__(self):
        if (self.noise_kind is None) != (self.snr_db is None):
            raise ValueError("noise_kind and snr_db must be set together")
        if self.noise_kind is not None and self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")

    @property
    def is_clean(self) -> bool:
        return self.noise_kind is None

    @property
    def tag(self) -> str:
        if self.is_clean:
            return "clean"
        return f"{self.noise_kind}_{self.snr_db:g}dB"


def parse_grid_cell(text: str) -> GridCell:
    """'clean' or '<kind>:<snr>', e.g. 'white:0' or 'babble:10'."""
    text = text.strip()
    if text == "clean":
        return GridCell()
    if ":" not in text:
        raise ValueError(f"bad grid cell {text!r}: expected 'kind:snr'")
    kind, snr = text.split(":", 1)
    return GridCell(kind.strip(), float(snr))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    features: tuple = features.FEATURE_KINDS
    backends: tuple = ("gmm",)
    grid: tuple = (GridCell(),)
    enhancement: str | None = None
    fusion: tuple = ()
    feature_overrides: tuple = ()   # ((kind, field, value), ...)
    gmm_components: int = 32
    gmm_iterations: int = 10
    ubm_components: int = 32
    tv_rank: int = 32
    tv_iterations: int = 5
    plda_latent: int = 16
    plda_iterations: int = 5

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "backends", tuple(self.backends))
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "fusion", tuple(self.fusion))
        object.__setattr__(self, "feature_overrides",
                           tuple(tuple(o) for o in self.feature_overrides))
        for kind in self.features:
            if kind not in features.FEATURE_KINDS:
                raise ValueError(f"unknown feature kind {kind!r}")
        if not self.features:
            raise ValueError("at least one feature kind is required")
        for backend in self.backends:
            if backend not in BACKENDS:
                raise ValueError(f"unknown backend {backend!r}")
        if not self.backends:
            raise ValueError("at least one backend is required")
        if not self.grid:
            raise ValueError("the test grid must not be empty")
        if len({cell.tag for cell in self.grid}) != len(self.grid):
            raise ValueError("duplicate grid cells")
        if (self.enhancement is not None
                and self.enhancement not in ENHANCEMENT_METHODS):
            raise ValueError(f"unknown enhancement {self.enhancement!r}")
        for method in self.fusion:
            if method not in FUSION_METHODS:
                raise ValueError(f"unknown fusion method {method!r}")

    def feature_config(self, kind: str) -> features.FeatureConfig:
        overrides = {name: value for k, name, value in self.feature_overrides
                     if k == kind}
        return features.default_config(kind, **overrides)


def _parse_scalar(raw: str):
    text = raw.strip()
    low = text.lower()
    if low == "none":
        return None
    if low in ("true", "yes"):
        return True
    if low in ("false", "no"):
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


_FEATURE_FIELDS = {f.name for f in fields(features.FeatureConfig)
                   if f.name != "kind"}


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        parser.read_file(fh)
    if "experiment" not in parser:
        raise ValueError(f"{path}: missing [experiment] section")
    exp = parser["experiment"]

    kwargs = {
        "name": exp.get("name", "experiment"),
        "seed": exp.getint("seed", 0),
    }
    if "features" in exp:
        kwargs["features"] = tuple(exp["features"].split())
    if "backends" in exp:
        kwargs["backends"] = tuple(exp["backends"].split())
    enhancement = exp.get("enhancement", "none")
    kwargs["enhancement"] = (None if enhancement.strip().lower()
                             in ("none", "") else enhancement.strip())
    fusion = exp.get("fusion", "")
    kwargs["fusion"] = tuple(w for w in fusion.split()
                             if w.lower() != "none")

    if "grid" in parser and "cells" in parser["grid"]:
        cells = parser["grid"]["cells"].split()
        kwargs["grid"] = tuple(parse_grid_cell(c) for c in cells)

    overrides = []
    for section in parser.sections():
        if not section.startswith("feature."):
            continue
        kind = section.split(".", 1)[1]
        for key, raw in parser[section].items():
            if key not in _FEATURE_FIELDS:
                raise ValueError(f"{path}: unknown feature field {key!r} "
                                 f"in [{section}]")
            overrides.append((kind, key, _parse_scalar(raw)))
    kwargs["feature_overrides"] = tuple(overrides)

    if "gmm" in parser:
        g = parser["gmm"]
        kwargs["gmm_components"] = g.getint("components", 32)
        kwargs["gmm_iterations"] = g.getint("iterations", 10)
    if "ivector" in parser:
        iv = parser["ivector"]
        kwargs["ubm_components"] = iv.getint("ubm_components", 32)
        kwargs["tv_rank"] = iv.getint("rank", 32)
        kwargs["tv_iterations"] = iv.getint("tv_iterations", 5)
        kwargs["plda_latent"] = iv.getint("plda_latent", 16)
        kwargs["plda_iterations"] = iv.getint("plda_iterations", 5)
    return ExperimentConfig(**kwargs)


def save_config(path, config: ExperimentConfig):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_text(config))


def canonical_text(config: ExperimentConfig) -> str:
    """Deterministic INI rendering used for hashing and round trips."""
    parser = configparser.ConfigParser()
    parser["experiment"] = {
        "name": config.name,
        "seed": str(config.seed),
        "features": " ".join(config.features),
        "backends": " ".join(config.backends),
        "enhancement": config.enhancement or "none",
        "fusion": " ".join(config.fusion) or "none",
    }
    parser["grid"] = {
        "cells": " ".join("clean" if c.is_clean
                          else f"{c.noise_kind}:{c.snr_db:g}"
                          for c in config.grid),
    }
    by_kind = {}
    for kind, name, value in config.feature_overrides:
        by_kind.setdefault(kind, {})[name] = str(value)
    for kind in sorted(by_kind):
        parser[f"feature.{kind}"] = dict(sorted(by_kind[kind].items()))
    parser["gmm"] = {
        "components": str(config.gmm_components),
        "iterations": str(config.gmm_iterations),
    }
    parser["ivector"] = {
        "ubm_components": str(config.ubm_components),
        "rank": str(config.tv_rank),
        "tv_iterations": str(config.tv_iterations),
        "plda_latent": str(config.plda_latent),
        "plda_iterations": str(config.plda_iterations),
    }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_hash(config: ExperimentConfig, *extra: str) -> str:
    """Short content hash of the resolved config (plus optional salt)."""
    h = hashlib.sha256(canonical_text(config).encode("utf-8"))
    for item in extra:
        h.update(b"\x00" + str(item).encode("utf-8"))
    return h.hexdigest()[:12]


def with_overrides(config: ExperimentConfig, **kwargs) -> ExperimentConfig:
    return replace(config, **kwargs)
