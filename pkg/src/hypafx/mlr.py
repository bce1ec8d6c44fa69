"""Multinomial logistic regression heads for flat and Poincare-ball embeddings.

These are the plain numpy forms used for inference and as reference values;
the training path goes through the matching autograd kernels, which call the
same helpers here for their forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import UsageError


@dataclass
class EuclideanHead:
    """Per-class hyperplanes: normals ``a`` and offset points ``p``, both (K, n)."""

    a: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.a.ndim != 2 or self.a.shape != self.p.shape:
            raise UsageError(f"head shapes disagree: a{self.a.shape} p{self.p.shape}")

    @property
    def n_classes(self) -> int:
        return self.a.shape[0]


@dataclass
class HyperbolicHead:
    """Gyroplanes on the ball: offsets ``p`` (ball points) and tangent normals ``a``."""

    a: np.ndarray
    p: np.ndarray
    c: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.a.ndim != 2 or self.a.shape != self.p.shape:
            raise UsageError(f"head shapes disagree: a{self.a.shape} p{self.p.shape}")
        if self.c * np.max(np.sum(self.p**2, axis=1)) >= 1.0:
            raise UsageError("hyperbolic head offsets must lie inside the ball")

    @property
    def n_classes(self) -> int:
        return self.a.shape[0]


def init_normals(n_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Normals drawn from N(0, 1/dim) per coordinate."""
    return rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n_classes, dim))


def init_euclidean_head(n_classes: int, dim: int, rng: np.random.Generator) -> EuclideanHead:
    return EuclideanHead(init_normals(n_classes, dim, rng), np.zeros((n_classes, dim)))


def init_hyperbolic_head(n_classes: int, dim: int, c: float, rng: np.random.Generator) -> HyperbolicHead:
    return HyperbolicHead(init_normals(n_classes, dim, rng), np.zeros((n_classes, dim)), c)


def _batch(z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    return (z[None, :] if single else z), single


def euclid_logits(z, head: EuclideanHead) -> np.ndarray:
    """logit_k = <z - p_k, a_k>, i.e. signed distance to H_k scaled by |a_k|."""
    zb, single = _batch(z)
    if zb.shape[-1] != head.a.shape[1]:
        raise UsageError(f"embedding dim {zb.shape[-1]} != head dim {head.a.shape[1]}")
    out = zb @ head.a.T - np.sum(head.p * head.a, axis=1)
    return out[0] if single else out


def asinh_stable(r: np.ndarray) -> np.ndarray:
    """sinh^-1 via log(|r| + sqrt(r^2 + 1)), guarded against overflow for large |r|."""
    r = np.asarray(r, dtype=np.float64)
    ar = np.abs(r)
    big = ar > 1e150
    safe = np.where(big, 1.0, ar)
    small_form = np.log1p(safe + safe * safe / (1.0 + np.sqrt(safe * safe + 1.0)))
    big_form = np.log(2.0) + np.log(np.where(big, ar, 1.0))
    return np.sign(r) * np.where(big, big_form, small_form)


def gyroplane_terms(z: np.ndarray, p: np.ndarray, a: np.ndarray, c: float) -> dict:
    """Shared intermediates of the hyperbolic logit for z (B,n), p and a (K,n).

    Returns the (B, K, n) Mobius differences u = (-p_k) (+) z_b and everything
    the backward pass needs. Kept separate so the autograd kernel and the
    reference function cannot drift apart.
    """
    sc = np.sqrt(c)
    x = -p[None, :, :]                       # (1, K, n)
    y = z[:, None, :]                        # (B, 1, n)
    xy = np.sum(x * y, axis=-1, keepdims=True)
    x2 = np.sum(x * x, axis=-1, keepdims=True)
    y2 = np.sum(y * y, axis=-1, keepdims=True)
    A = 1.0 + 2.0 * c * xy + c * y2
    Bc = 1.0 - c * x2
    D = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    u = (A * x + Bc * y) / D                 # (B, K, n)
    # 1 - c|x (+) y|^2 = (1 - c|x|^2)(1 - c|y|^2) / D, free of cancellation
    E = np.maximum((Bc * (1.0 - c * y2) / D)[..., 0], 1e-300)
    an = np.linalg.norm(a, axis=1)           # (K,)
    ua = np.einsum("bkn,kn->bk", u, a)
    r = 2.0 * sc * ua / (E * an)
    lam_p = 2.0 / (1.0 - c * np.sum(p * p, axis=1))   # (K,)
    asr = asinh_stable(r)
    logits = lam_p * an / sc * asr
    return dict(x=x, y=y, xy=xy, x2=x2, y2=y2, A=A, Bc=Bc, D=D, u=u, E=E,
                an=an, ua=ua, r=r, lam_p=lam_p, asr=asr, logits=logits, sc=sc)


def hyper_logits(z_h, head: HyperbolicHead) -> np.ndarray:
    """Ball MLR logits (lambda_p |a| / sqrt c) asinh(r_k) using (-p_k) (+) z."""
    zb, single = _batch(z_h)
    c = head.c
    if zb.shape[-1] != head.a.shape[1]:
        raise UsageError(f"embedding dim {zb.shape[-1]} != head dim {head.a.shape[1]}")
    if np.any(np.linalg.norm(head.a, axis=1) == 0.0):
        raise UsageError("hyperbolic MLR normal a_k must be non-zero")
    if np.any(c * np.sum(zb * zb, axis=1) >= 1.0):
        raise UsageError("embedding lies on or outside the ball boundary")
    out = gyroplane_terms(zb, head.p, head.a, c)["logits"]
    return out[0] if single else out


def predict(logits) -> np.ndarray | int:
    """Arg-max class; ties resolve to the lowest index (numpy argmax semantics)."""
    logits = np.asarray(logits)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise UsageError("predict: empty logits")
    idx = np.argmax(logits, axis=-1)
    return int(idx) if logits.ndim == 1 else idx


def softmax(logits) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def head_from_euclidean(head: EuclideanHead, c: float) -> HyperbolicHead:
    """Ball head with the same normals and offsets pushed through exp0."""
    return HyperbolicHead(head.a.copy(), geometry.exp0(head.p, c), c)
