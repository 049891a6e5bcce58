"""Run configuration: one file fully determines an experiment.

Files may be YAML or JSON. Unknown keys are rejected. The resolved config
(defaults filled in, head width matched to the loss) is hashed, and the
hash goes into every output filename.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ConfigError
from .sampler_sim import SynthConfig
from .selection import METHODS
from .training import TrainConfig, head_classes
from .verifier import VerifierConfig

# Sampling settings of the real sampler (thinking on, T=0.6, top-p 0.95,
# top-k 20, min-p 0, 10k max tokens). The synthetic sampler ignores them.
SAMPLER_NOTES = {
    "enable_thinking": True, "temperature": 0.6, "top_p": 0.95,
    "top_k": 20, "min_p": 0.0, "max_tokens": 10000,
}


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    method: str = "trajselector"
    n_values: tuple[int, ...] = (1, 2, 4, 8)
    eval_fraction: float = 0.2
    eval_seed: int = 0
    label_flip_fraction: float = 0.0
    rank_k: int = 100
    gradcheck_tolerance: float = 1e-4
    gradcheck_coords: int = 50
    gradcheck_batch: int = 4
    output_dir: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))

    def resolved(self) -> "RunConfig":
        """Validated copy with the verifier head matched to the loss."""
        vcfg = replace(self.verifier, n_classes=head_classes(self.train.loss_kind))
        cfg = replace(self, verifier=vcfg)
        cfg.synth.validate()
        cfg.verifier.validate()
        cfg.train.validate()
        if cfg.synth.d_sampler != cfg.verifier.d_sampler:
            raise ConfigError(f"synth.d_sampler={cfg.synth.d_sampler} does not match "
                              f"verifier.d_sampler={cfg.verifier.d_sampler}")
        if cfg.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if not cfg.n_values or min(cfg.n_values) < 1:
            raise ConfigError("n_values must be non-empty positive integers")
        if not 0.0 <= cfg.eval_fraction < 1.0:
            raise ConfigError("eval_fraction must be in [0, 1)")
        if not 0.0 <= cfg.label_flip_fraction <= 1.0:
            raise ConfigError("label_flip_fraction must be in [0, 1]")
        if cfg.rank_k < 0:
            raise ConfigError("rank_k must be >= 0")
        return cfg

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


_SECTIONS = {"synth": SynthConfig, "verifier": VerifierConfig, "train": TrainConfig}


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where}: {exc}") from exc


def config_from_dict(data: dict | None) -> RunConfig:
    data = dict(data or {})
    kwargs = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            kwargs[name] = _build(cls, data.pop(name), name)
    top = _build(RunConfig, data, "config")
    return replace(top, **kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
