"""Delay, chorus and distortion effects, chain rendering and chain labels."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from . import SAMPLE_RATE
from .errors import UsageError

KINDS = ("delay", "chorus", "distortion")
FEEDBACK_CAP = 0.95

# kind -> param -> (default, lo, hi); bounds are the accepted domain, not the
# randomisation range
PARAM_DOMAIN: dict[str, dict[str, tuple[float, float, float]]] = {
    "delay": {
        "delay_seconds": (0.5, 1e-9, 2.0),
        "feedback": (0.0, 0.0, 1.0),
        "mix": (0.5, 0.0, 1.0),
    },
    "chorus": {
        "rate_hz": (1.0, 0.0, 20.0),
        "depth": (0.25, 0.0, 1.0),
        "feedback": (0.0, 0.0, 1.0),
        "centre_delay_ms": (7.0, 1e-6, 50.0),
        "mix": (0.5, 0.0, 1.0),
    },
    "distortion": {
        "drive_db": (25.0, 0.0, 40.0),
    },
}

# uniform sampling ranges used when generating data
RANDOM_RANGES: dict[str, dict[str, tuple[float, float]]] = {
    "chorus": {"rate_hz": (0.1, 1.5), "depth": (0.1, 1.0), "feedback": (0.0, 0.5)},
    "distortion": {"drive_db": (5.0, 15.0)},
    "delay": {"delay_seconds": (0.1, 1.0), "feedback": (0.0, 0.75)},
}


@dataclass
class EffectSpec:
    kind: str
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PARAM_DOMAIN:
            raise UsageError(f"unknown effect kind {self.kind!r}")
        domain = PARAM_DOMAIN[self.kind]
        full = {}
        for name, value in self.params.items():
            if name not in domain:
                raise UsageError(f"unknown parameter {name!r} for {self.kind}")
            full[name] = float(value)
        for name, (default, lo, hi) in domain.items():
            value = full.setdefault(name, default)
            if not (lo <= value <= hi) or not math.isfinite(value):
                raise UsageError(f"{self.kind}.{name}={value} outside [{lo}, {hi}]")
        if full.get("feedback", 0.0) > FEEDBACK_CAP:
            warnings.warn(f"{self.kind} feedback {full['feedback']} capped at {FEEDBACK_CAP}", stacklevel=2)
            full["feedback"] = FEEDBACK_CAP
        self.params = full

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "EffectSpec":
        return cls(d["kind"], dict(d.get("params", {})))


@dataclass
class AfxChain:
    effects: list[EffectSpec] = field(default_factory=list)

    def __post_init__(self):
        kinds = self.kinds
        if len(set(kinds)) != len(kinds):
            raise UsageError(f"effect kinds may appear at most once per chain: {kinds}")

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(e.kind for e in self.effects)

    def __len__(self):
        return len(self.effects)

    @property
    def label(self) -> str:
        return chain_key(self.kinds)


def chain_key(kinds) -> str:
    """Canonical string form 'kind1>kind2', '' for the empty chain."""
    return ">".join(kinds)


def parse_key(key: str) -> tuple[str, ...]:
    return tuple(key.split(">")) if key else ()


def enumerate_chains(effect_kinds, max_len: int) -> list[tuple[str, ...]]:
    """All injective kind sequences of length 0..max_len.

    Ordered by length, then lexicographically by kind name; the position in
    this list is the class index.
    """
    kinds = list(effect_kinds)
    if len(set(kinds)) != len(kinds):
        raise UsageError(f"duplicate effect kinds: {kinds}")
    if not 0 <= max_len <= len(kinds):
        raise UsageError(f"max_len must be in [0, {len(kinds)}], got {max_len}")
    kinds = sorted(kinds)
    out: list[tuple[str, ...]] = []
    for length in range(max_len + 1):
        out.extend(itertools.permutations(kinds, length))
    return out


def chain_count(n_kinds: int, max_len: int) -> int:
    """sum_{l=0}^{L} F! / (F - l)!"""
    return sum(math.perm(n_kinds, l) for l in range(max_len + 1))


class ChainVocabulary:
    """Bijection between chain skeletons and class indices."""

    def __init__(self, effect_kinds=KINDS, max_len: int | None = None):
        self.effect_kinds = tuple(sorted(effect_kinds))
        self.max_len = len(self.effect_kinds) if max_len is None else max_len
        self.chains = enumerate_chains(self.effect_kinds, self.max_len)
        self._index = {c: i for i, c in enumerate(self.chains)}

    def __len__(self):
        return len(self.chains)

    def index(self, kinds) -> int:
        try:
            return self._index[tuple(kinds)]
        except KeyError:
            raise UsageError(f"chain {tuple(kinds)} is not in the vocabulary") from None

    def chain(self, index: int) -> tuple[str, ...]:
        if not 0 <= index < len(self.chains):
            raise UsageError(f"class index {index} out of range [0, {len(self.chains)})")
        return self.chains[index]

    def keys(self) -> list[str]:
        return [chain_key(c) for c in self.chains]


def sample_params(kinds, rng: np.random.Generator, mix: float | None = None) -> AfxChain:
    """Draw concrete parameters for a chain skeleton, uniformly within RANDOM_RANGES."""
    effects = []
    for kind in kinds:
        params = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in RANDOM_RANGES[kind].items()}
        if mix is not None and "mix" in PARAM_DOMAIN[kind]:
            params["mix"] = float(mix)
        effects.append(EffectSpec(kind, params))
    return AfxChain(effects)


# --------------------------------------------------------------------------
# DSP
# --------------------------------------------------------------------------

def _as_signal(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise UsageError("effects operate on mono 1-D signals")
    return x


def apply_distortion(x, spec: EffectSpec) -> np.ndarray:
    """tanh waveshaper with gain 10^(drive_db / 20)."""
    g = 10.0 ** (spec.params["drive_db"] / 20.0)
    return np.tanh(g * _as_signal(x))


def apply_delay(x, spec: EffectSpec, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Feedback comb: d[n] = x[n-D] + fb d[n-D], y = (1-mix) x + mix d.

    When D is not shorter than the signal the echo never arrives and the
    output is the dry part (1 - mix) x.
    """
    x = _as_signal(x)
    p = spec.params
    D = max(1, int(round(p["delay_seconds"] * sr)))
    fb, mix = p["feedback"], p["mix"]
    d = np.zeros_like(x)
    n = x.size
    # the recurrence only reaches back D samples, so each D-long block is vectorised
    for start in range(D, n, D):
        stop = min(start + D, n)
        d[start:stop] = x[start - D:stop - D] + fb * d[start - D:stop - D]
    return (1.0 - mix) * x + mix * d


@numba.njit(cache=True)
def _chorus_kernel(x, delay_samples, feedback, mix):
    n = x.size
    buf = np.zeros(n)
    y = np.empty(n)
    for i in range(n):
        pos = i - delay_samples[i]
        wet = 0.0
        j = int(np.floor(pos))
        frac = pos - j
        if j >= 0:
            wet = buf[j]
            if frac > 0.0:
                wet += frac * (buf[j + 1] - buf[j])
        elif j == -1 and frac > 0.0:
            wet = frac * buf[0]
        buf[i] = x[i] + feedback * wet
        y[i] = (1.0 - mix) * x[i] + mix * wet
    return y


def chorus_delays(n: int, spec: EffectSpec, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Per-sample delay in samples, never below one sample."""
    p = spec.params
    t = np.arange(n) / sr
    tau = (p["centre_delay_ms"] / 1000.0) * (1.0 + p["depth"] * np.sin(2 * np.pi * p["rate_hz"] * t))
    return np.maximum(tau * sr, 1.0)


def apply_chorus(x, spec: EffectSpec, sr: int = SAMPLE_RATE) -> np.ndarray:
    """LFO-modulated, linearly interpolated delay line with feedback."""
    x = _as_signal(x)
    p = spec.params
    if x.size == 0:
        return x.copy()
    return _chorus_kernel(x, chorus_delays(x.size, spec, sr), p["feedback"], p["mix"])


def apply_effect(x, spec: EffectSpec, sr: int = SAMPLE_RATE) -> np.ndarray:
    if spec.kind == "distortion":
        return apply_distortion(x, spec)
    if spec.kind == "delay":
        return apply_delay(x, spec, sr)
    if spec.kind == "chorus":
        return apply_chorus(x, spec, sr)
    raise UsageError(f"unknown effect kind {spec.kind!r}")


def render_chain(x, chain: AfxChain, sr: int = SAMPLE_RATE) -> tuple[np.ndarray, float]:
    """Apply effects first-to-last; returns (output, normalisation gain).

    The gain is 1.0 unless the peak exceeded 1, in which case the output was
    scaled down to peak exactly 1.
    """
    y = _as_signal(x).copy()
    for spec in chain.effects:
        y = apply_effect(y, spec, sr)
    peak = float(np.max(np.abs(y))) if y.size else 0.0
    if peak > 1.0:
        return y / peak, 1.0 / peak
    return y, 1.0


def apply_chain(x, chain: AfxChain, sr: int = SAMPLE_RATE) -> np.ndarray:
    return render_chain(x, chain, sr)[0]


# --------------------------------------------------------------------------
# chain string grammar: kind[:param=value,...] joined by '>'
# --------------------------------------------------------------------------

def parse_chain(text: str) -> AfxChain:
    """Parse e.g. ``distortion:drive_db=10>chorus:rate_hz=0.8,depth=0.5``.

    Errors carry the character offset of the offending token.
    """
    text = text.strip()
    if not text:
        return AfxChain([])
    effects = []
    pos = 0
    for segment in text.split(">"):
        seg_start = pos
        pos += len(segment) + 1
        kind, _, arglist = segment.partition(":")
        kind = kind.strip()
        if kind not in PARAM_DOMAIN:
            raise UsageError(f"position {seg_start}: unknown effect {kind!r} (expected one of {', '.join(KINDS)})")
        params = {}
        arg_pos = seg_start + len(segment) - len(arglist)
        if arglist.strip():
            for item in arglist.split(","):
                name, eq, value = item.partition("=")
                name = name.strip()
                if not eq:
                    raise UsageError(f"position {arg_pos}: expected name=value, got {item!r}")
                if name not in PARAM_DOMAIN[kind]:
                    raise UsageError(f"position {arg_pos}: unknown parameter {name!r} for {kind}")
                try:
                    params[name] = float(value)
                except ValueError:
                    raise UsageError(f"position {arg_pos}: {name} needs a number, got {value!r}") from None
                arg_pos += len(item) + 1
        try:
            effects.append(EffectSpec(kind, params))
        except UsageError as exc:
            raise UsageError(f"position {seg_start}: {exc}") from None
    try:
        return AfxChain(effects)
    except UsageError as exc:
        raise UsageError(f"position 0: {exc}") from None


def format_chain(chain: AfxChain) -> str:
    parts = []
    for e in chain.effects:
        args = ",".join(f"{k}={v:g}" for k, v in e.params.items())
        parts.append(f"{e.kind}:{args}" if args else e.kind)
    return ">".join(parts)
