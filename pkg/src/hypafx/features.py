"""Log-mel front-end that stands in for a pretrained music encoder."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import CLIP_SECONDS, SAMPLE_RATE
from .errors import UsageError

LOG_FLOOR = 1e-5


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = SAMPLE_RATE
    n_fft: int = 2048
    hop: int = 512
    n_mels: int = 128
    fmin: float = 20.0
    fmax: float = 16000.0
    clip_seconds: float = CLIP_SECONDS

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate))

    @property
    def n_frames(self) -> int:
        return -(-self.clip_samples // self.hop)


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    logstep = np.log(6.4) / 27.0
    lin = f / f_sp
    log = min_log_hz / f_sp + np.log(np.maximum(f, 1e-10) / min_log_hz) / logstep
    return np.where(f >= min_log_hz, log, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_mel = 1000.0 / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, 1000.0 * np.exp(logstep * (m - min_log_mel)), f_sp * m)


@lru_cache(maxsize=8)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular filters with unit peak, shape (n_mels, n_fft // 2 + 1)."""
    if not 0 <= fmin < fmax <= sample_rate / 2:
        raise UsageError(f"bad mel range {fmin}-{fmax} Hz for sr={sample_rate}")
    freqs = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lower) / (centre - lower)
    down = (upper - freqs) / (upper - centre)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.flags.writeable = False
    return fb


def fit_clip(signal: np.ndarray, n: int) -> np.ndarray:
    """Zero-pad short signals at the end, centre-crop long ones."""
    if signal.size == n:
        return signal
    if signal.size < n:
        return np.pad(signal, (0, n - signal.size))
    start = (signal.size - n) // 2
    return signal[start:start + n]


def log_mel(signal, sr: int = SAMPLE_RATE, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Un-normalised log-mel frames (T, n_mels) of one mono clip.

    Frames are centred (zero padding of n_fft/2 on both sides) so a clip of N
    samples yields ceil(N / hop) frames. Spectra are scaled by the window sum
    so a full-scale sinusoid peaks near 0.25 in power before the log.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise UsageError("extract_features expects a non-empty mono signal")
    if not np.all(np.isfinite(x)):
        raise UsageError("extract_features: audio contains non-finite samples")
    if sr != cfg.sample_rate:
        raise UsageError(f"expected {cfg.sample_rate} Hz audio, got {sr}")
    x = fit_clip(x, cfg.clip_samples)
    pad = cfg.n_fft // 2
    xp = np.pad(x, (pad, pad))
    n_frames = cfg.n_frames
    idx = np.arange(cfg.n_fft)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    # the last partial frames run past the padded end; extend with zeros
    need = idx[-1, -1] + 1
    if need > xp.size:
        xp = np.pad(xp, (0, need - xp.size))
    window = np.hanning(cfg.n_fft + 1)[:-1]
    frames = xp[idx] * window
    spec = np.abs(np.fft.rfft(frames, axis=1)) / window.sum()
    power = spec * spec
    fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)
    mel = power @ fb.T
    return np.log(mel + LOG_FLOOR).astype(np.float32)


def extract_features(signal, sr: int = SAMPLE_RATE, cfg: MelConfig = MelConfig(),
                     normalizer: "FeatureNormalizer | None" = None) -> np.ndarray:
    """Log-mel frames, optionally standardised with training-split statistics."""
    frames = log_mel(signal, sr, cfg)
    return normalizer(frames) if normalizer is not None else frames


@dataclass
class FeatureNormalizer:
    """Per-mel-bin mean and standard deviation estimated on training clips only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, batches) -> "FeatureNormalizer":
        """Accumulate statistics over an iterable of (T, M) or (B, T, M) arrays."""
        total = None
        sq = None
        count = 0
        for frames in batches:
            f = np.asarray(frames, dtype=np.float64).reshape(-1, np.shape(frames)[-1])
            total = f.sum(axis=0) if total is None else total + f.sum(axis=0)
            sq = (f * f).sum(axis=0) if sq is None else sq + (f * f).sum(axis=0)
            count += f.shape[0]
        if count == 0:
            raise UsageError("cannot fit feature statistics on an empty split")
        mean = total / count
        var = np.maximum(sq / count - mean * mean, 0.0)
        std = np.sqrt(var)
        # constant bins (e.g. silence everywhere) would otherwise divide by zero
        std = np.where(std < 1e-6, 1.0, std)
        return cls(mean.astype(np.float32), std.astype(np.float32))

    def __call__(self, frames: np.ndarray) -> np.ndarray:
        return ((frames - self.mean) / self.std).astype(np.float32)
