"""Run configuration: TOML file values layered under command-line flags."""

from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import UsageError

# section -> key -> default
DEFAULTS: dict[str, dict] = {
    "data": {"dry": 64, "seed": 0, "split_mode": "group", "wav_dir": None, "mix": None,
             "effects": "delay,chorus,distortion", "max_len": 3},
    "model": {"geometry": "hyperbolic", "curvature": 1.0, "dim": 128, "blocks": 3,
              "feat_dim": 128, "attn_dim": 64, "frame_features": "logmel,delta,square"},
    "train": {"epochs": 100, "batch_size": 32, "lr": 1e-4, "weight_decay": 1e-5,
              "patience": 5, "factor": 0.5, "seed": 0, "clip_norm": None, "decay_manifold": False},
    "sweep": {"curvatures": [0.001, 0.01, 0.1, 1.0], "dims": [64, 128, 256, 512]},
}


def load_config(path) -> dict:
    """Parse a TOML file and check every key against DEFAULTS."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None
    for section, values in raw.items():
        if section not in DEFAULTS:
            raise UsageError(f"{path}: unknown section [{section}]")
        if not isinstance(values, dict):
            raise UsageError(f"{path}: [{section}] must be a table")
        for key in values:
            if key not in DEFAULTS[section]:
                raise UsageError(f"{path}: unknown key {section}.{key}")
    return raw


def resolve(section: str, flags: dict, file_cfg: dict | None = None) -> dict:
    """Effective values for one section: flag (not None) > file > default."""
    out = dict(DEFAULTS[section])
    out.update((file_cfg or {}).get(section, {}))
    for k, v in flags.items():
        if k in out and v is not None:
            out[k] = v
    return out
