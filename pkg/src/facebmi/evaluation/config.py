"""Experiment configuration: a nested key-value document addressed by dotted keys.

Example (YAML)::

    dataset:
      manifest: data/manifest.csv
      protocol: visualbmi
    facepipe:
      detector_model: synthetic
      margin: 0.10
    features:
      backbone: densenet121
      weights_dir: weights/
      cache_dir: cache/
    regressor:
      kind: ridge
      lam: auto
    seed: 0
    output_dir: runs/densenet_rr
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..dataset import VIP_ATTRIBUTE_PROTOCOL, VISUALBMI_PROTOCOL, SplitProtocol
from ..exceptions import ConfigError
from ..facepipe.pipeline import DEFAULT_MARGIN
from ..features.registry import get_backbone

REGRESSORS = ("ridge", "svr", "cnn")
CUSTOM_CNN = "custom_cnn"
NAMED_PROTOCOLS = {"visualbmi": VISUALBMI_PROTOCOL, "vip_attribute": VIP_ATTRIBUTE_PROTOCOL}

DEFAULTS: dict[str, Any] = {
    "dataset": {"manifest": None, "protocol": "manifest"},
    "facepipe": {"detector_model": "synthetic", "detector_sha256": None, "margin": DEFAULT_MARGIN, "n_jobs": 1},
    "features": {
        "backbone": "stub",
        "weights_dir": None,
        "cache_dir": None,
        "random_init": False,
        "l2_normalize": False,
        "stub_size": [32, 32],
    },
    "regressor": {"kind": "ridge"},
    "seed": 0,
    "output_dir": "runs/experiment",
}
_PATH_KEYS = ("dataset.manifest", "features.weights_dir", "features.cache_dir", "output_dir")
# regressor hyperparameters are free-form; every other key must be known
_OPEN_SECTIONS = ("regressor",)


def derive_seed(root: int, stage: str) -> int:
    """Stage seed: first 4 bytes of sha256("<stage>:<root>")."""
    digest = hashlib.sha256(f"{stage}:{int(root)}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def _flatten(d: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key not in ("dataset.protocol",) and not key.startswith(_OPEN_SECTIONS):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _set(tree: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"config key {dotted!r} crosses a scalar value")
    node[parts[-1]] = value


def _get(tree: dict, dotted: str) -> Any:
    node = tree
    for p in dotted.split("."):
        if not isinstance(node, dict) or p not in node:
            raise KeyError(dotted)
        node = node[p]
    return node


def parse_value(text: str) -> Any:
    """Interpret a command-line override value as YAML scalar/list/map."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_mapping(cls, mapping: dict, base_dir: str | Path | None = None) -> "ExperimentConfig":
        cfg = cls(base_dir=Path(base_dir) if base_dir else Path.cwd())
        known = set(_flatten(DEFAULTS))
        for key, value in _flatten(mapping).items():
            section = key.split(".")[0]
            if key not in known and section not in _OPEN_SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            cfg.set(key, value)
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            mapping = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if not isinstance(mapping, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_mapping(mapping, path.parent.resolve())

    def get(self, dotted: str, default: Any = None) -> Any:
        try:
            return _get(self.data, dotted)
        except KeyError:
            return default

    def set(self, dotted: str, value: Any) -> None:
        if dotted == "regressor" and isinstance(value, str):
            self.data["regressor"] = {"kind": value}
            return
        _set(self.data, dotted, value)

    def _path(self, dotted: str) -> Path | None:
        v = self.get(dotted)
        if v is None:
            return None
        p = Path(v).expanduser()
        return p if p.is_absolute() else (self.base_dir / p)

    @property
    def seed(self) -> int:
        return int(self.get("seed"))

    @property
    def regressor_kind(self) -> str:
        return self.get("regressor.kind")

    @property
    def hyperparams(self) -> dict:
        return {k: v for k, v in self.get("regressor", {}).items() if k != "kind"}

    @property
    def backbone(self) -> str:
        return CUSTOM_CNN if self.regressor_kind == "cnn" else self.get("features.backbone")

    @property
    def output_dir(self) -> Path:
        return self._path("output_dir")

    @property
    def manifest(self) -> Path:
        return self._path("dataset.manifest")

    @property
    def weights_dir(self) -> Path | None:
        return self._path("features.weights_dir")

    @property
    def cache_dir(self) -> Path:
        return self._path("features.cache_dir") or self.output_dir / "cache"

    @property
    def detector_model(self) -> str:
        ref = str(self.get("facepipe.detector_model"))
        if ref in ("synthetic", "dlib"):
            return ref
        p = Path(ref).expanduser()
        return str(p if p.is_absolute() else self.base_dir / p)

    def protocol(self) -> SplitProtocol | None:
        """The split protocol, or ``None`` to use the manifest's split column."""
        spec = self.get("dataset.protocol")
        seed = derive_seed(self.seed, "split")
        if spec == "manifest":
            return None
        if isinstance(spec, str):
            if spec not in NAMED_PROTOCOLS:
                raise ConfigError(f"unknown split protocol {spec!r}")
            base = NAMED_PROTOCOLS[spec]
            return SplitProtocol(base.name, base.train_count, base.test_count, base.gender_balanced_test, seed)
        if isinstance(spec, dict):
            try:
                return SplitProtocol(spec.get("name", "custom"), int(spec["train_count"]), int(spec["test_count"]),
                                     bool(spec.get("gender_balanced_test", False)), seed)
            except KeyError as exc:
                raise ConfigError(f"custom protocol lacks {exc}") from None
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        raise ConfigError(f"unsupported protocol value {spec!r}")

    def validate(self, require_files: bool = True) -> None:
        """Check ids and values before any work is done."""
        kind = self.regressor_kind
        if kind not in REGRESSORS:
            raise ConfigError(f"unknown regressor {kind!r}; expected one of {REGRESSORS}")
        if kind != "cnn":
            get_backbone(self.get("features.backbone"))
        margin = self.get("facepipe.margin")
        if not isinstance(margin, (int, float)) or margin < 0:
            raise ConfigError(f"facepipe.margin must be a non-negative number, got {margin!r}")
        self.protocol()
        if self.manifest is None:
            raise ConfigError("dataset.manifest is required")
        if require_files:
            if not self.manifest.is_file():
                raise ConfigError(f"manifest not found: {self.manifest}")
            det = self.detector_model
            if det not in ("synthetic", "dlib") and not Path(det).is_file():
                raise ConfigError(f"detector model not found: {det}")

    def resolved(self) -> dict:
        """Copy of the document with defaults filled and paths made absolute."""
        out = copy.deepcopy(self.data)
        for key in _PATH_KEYS:
            p = self._path(key)
            if p is not None:
                _set(out, key, str(p.resolve()))
        _set(out, "features.cache_dir", str(self.cache_dir.resolve()))
        _set(out, "facepipe.detector_model", self.detector_model)
        return out

    def write_resolved(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.resolved(), indent=2, sort_keys=True))
