"""Dry-signal provisioning, wet rendering, split assignment and manifests."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numba
import numpy as np
from scipy.signal import lfilter

from . import CLIP_SECONDS, SAMPLE_RATE, afx
from .audio_io import quantize16, read_wav, resample, write_wav_atomic
from .errors import FormatError, UsageError

log = logging.getLogger(__name__)

MANIFEST_FORMAT = "hypafx-manifest"
MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")
SPLIT_RATIOS = (Fraction(70, 100), Fraction(15, 100), Fraction(15, 100))


@dataclass
class DrySource:
    id: str
    origin: str
    audio: np.ndarray
    meta: dict = field(default_factory=dict)


@dataclass
class SampleRecord:
    sample_id: str
    dry_id: str
    dry_path: str
    wet_path: str
    label: int
    chain: str
    effects: list[dict]
    split: str | None = None
    gain: float = 1.0

    def chain_spec(self) -> afx.AfxChain:
        return afx.AfxChain([afx.EffectSpec.from_dict(e) for e in self.effects])


@dataclass
class Manifest:
    config: dict
    records: list[SampleRecord] = field(default_factory=list)
    root: Path | None = None

    def __len__(self):
        return len(self.records)

    def split(self, name: str) -> list[SampleRecord]:
        return [r for r in self.records if r.split == name]

    def resolve(self, rel: str) -> Path:
        return (self.root or Path(".")) / rel

    def vocabulary(self) -> afx.ChainVocabulary:
        return afx.ChainVocabulary(self.config["effects"], self.config["max_len"])


# --------------------------------------------------------------------------
# dry sources
# --------------------------------------------------------------------------

@numba.njit(cache=True)
def _add_pluck(out, onset, period, decay, excitation, amp):
    n = out.size - onset
    if n <= 0:
        return
    s = np.zeros(n)
    for k in range(min(period, n)):
        s[k] = excitation[k]
    for k in range(period, n):
        prev = s[k - period - 1] if k - period - 1 >= 0 else 0.0
        s[k] = decay * 0.5 * (s[k - period] + prev)
    for k in range(n):
        out[onset + k] += amp * s[k]


def pluck_excitation(rng: np.random.Generator, period: int, f0: float, sr: int) -> np.ndarray:
    """Zero-mean noise burst, low-passed three times at f0/2 as one period of a loop.

    A flat burst leaves the upper partials of low notes nearly as strong as the
    fundamental; the soft pick filter keeps the fundamental dominant.
    """
    burst = rng.uniform(-1.0, 1.0, period)
    R = np.exp(-np.pi * f0 / sr)
    # run over a few repeats so the filter reaches its periodic steady state
    e = np.tile(burst - burst.mean(), 4)
    for _ in range(3):
        e = lfilter([1.0 - R], [1.0, -R], e)
    e = e[-period:]
    return e - e.mean()


def karplus_strong_clip(rng: np.random.Generator, sr: int = SAMPLE_RATE,
                        seconds: float = CLIP_SECONDS) -> tuple[np.ndarray, dict]:
    """One clip of 4-12 overlapping plucked-string notes, peak 0.8."""
    n = int(round(seconds * sr))
    out = np.zeros(n)
    n_plucks = int(rng.integers(4, 13))
    onsets = np.sort(rng.uniform(0.0, max(seconds - 0.5, 0.0), n_plucks))
    f0s = rng.uniform(82.0, 660.0, n_plucks)
    decays = rng.uniform(0.994, 0.999, n_plucks)
    amps = rng.uniform(0.5, 1.0, n_plucks)
    for onset, f0, decay, amp in zip(onsets, f0s, decays, amps):
        # loop delay P + 1/2 (the averaging filter adds half a sample)
        period = max(2, int(round(sr / f0 - 0.5)))
        burst = pluck_excitation(rng, period, f0, sr)
        _add_pluck(out, int(onset * sr), period, float(decay), burst, float(amp))
    peak = np.max(np.abs(out))
    if peak > 0:
        out *= 0.8 / peak
    return out, {"onsets": onsets.tolist(), "fundamentals": f0s.tolist(), "decays": decays.tolist()}


def synth_dry(count: int, seed: int = 0, sr: int = SAMPLE_RATE,
              seconds: float = CLIP_SECONDS) -> list[DrySource]:
    """``count`` synthetic guitar-like clips; clip i depends only on (seed, i)."""
    if count < 1:
        raise UsageError("synth_dry needs count >= 1")
    out = []
    for i in range(count):
        audio, meta = karplus_strong_clip(np.random.default_rng([seed, i]), sr, seconds)
        out.append(DrySource(f"ks{i:05d}", "synth", audio, meta))
    return out


def ingest_wavs(directory, sr: int = SAMPLE_RATE, seconds: float = CLIP_SECONDS) -> list[DrySource]:
    """Cut every readable PCM WAV under ``directory`` into non-overlapping clips.

    Files are visited in sorted order; trailing partial chunks are dropped and
    unreadable files are skipped with a warning.
    """
    directory = Path(directory)
    files = sorted(p for p in directory.rglob("*") if p.suffix.lower() == ".wav")
    if not files:
        log.warning("no WAV files found in %s", directory)
        return []
    chunk = int(round(seconds * sr))
    out: list[DrySource] = []
    skipped = []
    for path in files:
        try:
            audio, file_sr = read_wav(path)
        except (FormatError, OSError) as exc:
            skipped.append((path, str(exc)))
            continue
        audio = resample(audio, file_sr, sr)
        rel = path.relative_to(directory).with_suffix("")
        stem = "_".join(rel.parts)
        for k in range(audio.size // chunk):
            piece = np.clip(audio[k * chunk:(k + 1) * chunk], -1.0, 1.0)
            out.append(DrySource(f"{stem}_{k:04d}", str(path), piece))
    if skipped:
        log.warning("skipped %d unreadable file(s): %s", len(skipped),
                    "; ".join(f"{p.name}: {msg}" for p, msg in skipped))
    return out


# --------------------------------------------------------------------------
# rendering
# --------------------------------------------------------------------------

def build_dataset(dry: list[DrySource], chains, out_dir, seed: int = 0,
                  sr: int = SAMPLE_RATE, mix: float | None = None,
                  config: dict | None = None) -> Manifest:
    """Render every (dry clip, chain) pair into ``out_dir/wet``.

    Parameters are drawn per pair from a generator keyed on (seed, dry index,
    chain index). On any failure the files written by this call are removed.
    """
    chains = [tuple(c) for c in chains]
    kinds = sorted({k for c in chains for k in c}) or list(afx.KINDS)
    max_len = max((len(c) for c in chains), default=0)
    vocab_index = {c: i for i, c in enumerate(chains)}
    out_dir = Path(out_dir)
    (out_dir / "dry").mkdir(parents=True, exist_ok=True)
    (out_dir / "wet").mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    records: list[SampleRecord] = []
    try:
        for di, src in enumerate(dry):
            audio = quantize16(src.audio)
            dry_rel = f"dry/{src.id}.wav"
            write_wav_atomic(out_dir / dry_rel, audio, sr)
            written.append(out_dir / dry_rel)
            for kinds_seq in chains:
                k = vocab_index[kinds_seq]
                rng = np.random.default_rng([seed, di, k])
                chain = afx.sample_params(kinds_seq, rng, mix=mix)
                wet, gain = afx.render_chain(audio, chain, sr)
                sample_id = f"{di:05d}-{k:02d}"
                wet_rel = f"wet/{sample_id}.wav"
                write_wav_atomic(out_dir / wet_rel, wet, sr)
                written.append(out_dir / wet_rel)
                records.append(SampleRecord(sample_id, src.id, dry_rel, wet_rel, k,
                                            afx.chain_key(kinds_seq),
                                            [e.to_dict() for e in chain.effects], None, gain))
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    cfg = {"effects": list(kinds), "max_len": max_len, "seed": seed, "sample_rate": sr,
           "n_dry": len(dry), "n_classes": len(chains), "mix": mix,
           "chains": [afx.chain_key(c) for c in chains]}
    if config:
        cfg.update(config)
    return Manifest(cfg, records, out_dir)


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

def split_sizes(n: int, ratios=SPLIT_RATIOS) -> list[int]:
    """Largest-remainder apportionment of n items; ties go to the earlier split."""
    quotas = [r * n for r in ratios]
    sizes = [int(q) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def assign_splits(manifest: Manifest, mode: str = "group", seed: int = 0) -> Manifest:
    """Assign train/val/test in place (70/15/15) and return the manifest.

    ``sample`` shuffles individual records; ``group`` shuffles dry clips so
    every variant of one clip lands in the same split.
    """
    if not manifest.records:
        raise UsageError("cannot split an empty manifest")
    rng = np.random.default_rng([seed, 0x5917])
    if mode == "sample":
        units = [[i] for i in range(len(manifest.records))]
    elif mode == "group":
        groups: dict[str, list[int]] = {}
        for i, r in enumerate(manifest.records):
            groups.setdefault(r.dry_id, []).append(i)
        if len(groups) < 3:
            raise UsageError(f"group split needs at least 3 dry clips, got {len(groups)}")
        units = list(groups.values())
    else:
        raise UsageError(f"unknown split mode {mode!r} (expected 'sample' or 'group')")
    perm = rng.permutation(len(units))
    sizes = split_sizes(len(units))
    bounds = np.cumsum([0] + sizes)
    for s, name in enumerate(SPLITS):
        for u in perm[bounds[s]:bounds[s + 1]]:
            for i in units[u]:
                manifest.records[i].split = name
    manifest.config["split_mode"] = mode
    manifest.config["split_seed"] = seed
    return manifest


# --------------------------------------------------------------------------
# persistence (JSON lines, header first)
# --------------------------------------------------------------------------

def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "w", encoding="utf-8") as f:
        header = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "config": manifest.config}
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for r in manifest.records:
            f.write(json.dumps(asdict(r), sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_manifest(path) -> Manifest:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise FormatError(f"{path}: line 1: missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line 1: malformed header ({exc.msg})") from None
    if not isinstance(header, dict) or header.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path}: line 1: not a {MANIFEST_FORMAT} file")
    if header.get("version") != MANIFEST_VERSION:
        raise FormatError(f"{path}: line 1: unsupported manifest version {header.get('version')!r}")
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            records.append(SampleRecord(**json.loads(line)))
        except (json.JSONDecodeError, TypeError) as exc:
            raise FormatError(f"{path}: line {lineno}: malformed record ({exc})") from None
    return Manifest(header.get("config", {}), records, path.parent)


def load_wet(manifest: Manifest, record: SampleRecord) -> tuple[np.ndarray, int]:
    return read_wav(manifest.resolve(record.wet_path))
