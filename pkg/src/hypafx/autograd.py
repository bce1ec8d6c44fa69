"""A small reverse-mode differentiation engine over numpy arrays.

Only the primitives the classifier needs are provided, each with a
hand-written backward rule. Broadcasting is limited to adding a 1-D bias on
the last axis. Geometry kernels run in float64 and cast their results back
to the dtype of their first input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import geometry, mlr
from .errors import UsageError


class Tensor:
    """Dense array plus the bookkeeping needed for backpropagation."""

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        self.data = np.array(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if self.data.dtype.kind not in "fiu":
            raise UsageError(f"unsupported dtype {self.data.dtype}")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    # -- plumbing -----------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g: np.ndarray):
        if not self.requires_grad:
            return
        g = np.asarray(g)
        if g.shape != self.data.shape:
            raise UsageError(f"gradient shape {g.shape} != tensor shape {self.data.shape} ({self._op})")
        g = g.astype(self.data.dtype, copy=False)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that does not depend on any parameter")
        if grad is None:
            if self.data.size != 1:
                raise UsageError("backward() without an upstream gradient needs a scalar output")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        # intermediate grads belong to this pass only
        for node in topo:
            if node._backward is not None:
                node.grad = None
        self._accum(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, s):
        return scale(self, s)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    out = Tensor(data)
    out._op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


# --------------------------------------------------------------------------
# dense primitives
# --------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise UsageError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def backward(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), "matmul", backward)


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1-D bias matching a's last axis."""
    a, b = _wrap(a), _wrap(b)
    if a.shape == b.shape:
        def backward(g):
            a._accum(g)
            b._accum(g)
    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        def backward(g):
            a._accum(g)
            b._accum(g.reshape(-1, b.shape[0]).sum(axis=0, dtype=np.float64))
    else:
        raise UsageError(f"add shape mismatch {a.shape} + {b.shape}")
    return _make(a.data + b.data, (a, b), "add", backward)


def scale(a, s: float) -> Tensor:
    a = _wrap(a)
    s = float(s)

    def backward(g):
        a._accum(g * s)

    return _make(a.data * a.dtype.type(s), (a,), "scale", backward)


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0

    def backward(g):
        a._accum(g * mask)

    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,), "relu", backward)


def tanh(a) -> Tensor:
    a = _wrap(a)
    t = np.tanh(a.data)

    def backward(g):
        a._accum(g * (1 - t * t))

    return _make(t, (a,), "tanh", backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply learned gain and bias."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise UsageError("layer_norm gain/bias must match the feature axis")
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = (xhat * gain.data + bias.data).astype(x.dtype)

    def backward(g):
        g64 = g.astype(np.float64)
        gain._accum((g64 * xhat).reshape(-1, n).sum(axis=0))
        bias._accum(g64.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            gx = g64 * gain.data
            dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            x._accum(dx)

    return _make(out, (x, gain, bias), "layer_norm", backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    if not ts:
        raise UsageError("concat of an empty list")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, sizes, axis=axis)):
            t._accum(piece)

    return _make(data, ts, "concat", backward)


def reduce_mean(a, axis=None) -> Tensor:
    a = _wrap(a)
    out = np.mean(a.data, axis=axis, dtype=np.float64).astype(a.dtype)
    count = a.data.size // max(out.size, 1)

    def backward(g):
        gg = np.asarray(g)
        if axis is not None:
            gg = np.expand_dims(gg, axis)
        a._accum(np.broadcast_to(gg / count, a.shape))

    return _make(out, (a,), "reduce_mean", backward)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = _wrap(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise UsageError(f"cross-entropy expects (B,K) logits and (B,) labels, got {logits.shape}, {labels.shape}")
    K = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise UsageError(f"label index out of range for {K} classes")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    B = labels.shape[0]
    loss = -logp[np.arange(B), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(B), labels] -= 1.0
        logits._accum(float(g) * p / B)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), "softmax_cross_entropy", backward)


def attention_pool_kernel(frames, W, w) -> Tensor:
    """Attention-weighted mean over time.

    frames (B, T, M), W (M, H), w (H,) -> (B, M) with weights
    softmax_t(<w, tanh(frame_t W)>).
    """
    frames, W, w = _wrap(frames), _wrap(W), _wrap(w)
    if frames.ndim != 3 or W.ndim != 2 or frames.shape[2] != W.shape[0] or w.shape != (W.shape[1],):
        raise UsageError(f"attention_pool shapes: frames{frames.shape} W{W.shape} w{w.shape}")
    B, T, M = frames.shape
    H = W.shape[1]
    F = frames.data
    h = np.tanh(F.reshape(B * T, M) @ W.data).reshape(B, T, H)
    s = (h @ w.data).astype(np.float64)
    s -= s.max(axis=1, keepdims=True)
    alpha = np.exp(s)
    alpha /= alpha.sum(axis=1, keepdims=True)
    pooled = np.einsum("bt,btm->bm", alpha.astype(F.dtype), F)

    def backward(g):
        g = np.asarray(g)
        dalpha = np.einsum("bm,btm->bt", g, F).astype(np.float64)
        ds = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
        ds = ds.astype(F.dtype)
        w._accum(np.einsum("bt,bth->h", ds, h, dtype=np.float64))
        dpre = (ds[:, :, None] * w.data) * (1 - h * h)          # (B, T, H)
        if W.requires_grad:
            W._accum(F.reshape(B * T, M).T @ dpre.reshape(B * T, H))
        if frames.requires_grad:
            dF = alpha.astype(F.dtype)[:, :, None] * g[:, None, :]
            dF = dF + (dpre.reshape(B * T, H) @ W.data.T).reshape(B, T, M)
            frames._accum(dF)

    out = _make(pooled, (frames, W, w), "attention_pool", backward)
    out.attention = alpha
    return out


# --------------------------------------------------------------------------
# geometry kernels (float64 inside)
# --------------------------------------------------------------------------

def _mobius_vjp(x, y, c, gu):
    """Vector-Jacobian product of u = x (+)_c y (unprojected) w.r.t. x and y."""
    xy = np.sum(x * y, axis=-1, keepdims=True)
    x2 = np.sum(x * x, axis=-1, keepdims=True)
    y2 = np.sum(y * y, axis=-1, keepdims=True)
    A = 1.0 + 2.0 * c * xy + c * y2
    Bc = 1.0 - c * x2
    D = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    u = (A * x + Bc * y) / D
    gN = gu / D
    gD = -np.sum(gu * u, axis=-1, keepdims=True) / D
    gA = np.sum(gN * x, axis=-1, keepdims=True)
    gB = np.sum(gN * y, axis=-1, keepdims=True)
    gxy = 2.0 * c * gA + 2.0 * c * gD
    gx2 = -c * gB + c * c * y2 * gD
    gy2 = c * gA + c * c * x2 * gD
    gx = A * gN + gxy * y + 2.0 * gx2 * x
    gy = Bc * gN + gxy * x + 2.0 * gy2 * y
    return gx, gy


def _clamp_jacobian_t(raw: np.ndarray, g: np.ndarray, c: float) -> tuple[np.ndarray, np.ndarray]:
    """Pull g back through project_to_ball evaluated at ``raw``.

    Returns (gradient w.r.t. raw, mask of rows that were clamped).
    """
    r_max = geometry.max_radius(c)
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    clamped = norm >= r_max
    safe = np.where(clamped, norm, 1.0)
    unit = raw / safe
    radial = np.sum(g * unit, axis=-1, keepdims=True)
    g_clamped = (r_max / safe) * (g - radial * unit)
    return np.where(clamped, g_clamped, g), clamped


def mobius_add(x, y, c: float) -> Tensor:
    """Differentiable x (+)_c y for matching (..., n) tensors, ball-projected."""
    x, y = _wrap(x), _wrap(y)
    if x.shape != y.shape:
        raise UsageError(f"mobius_add shape mismatch {x.shape} vs {y.shape}")
    x64, y64 = x.data.astype(np.float64), y.data.astype(np.float64)
    raw = geometry.mobius_add(x64, y64, c, project=False)
    out = geometry.project_to_ball(raw, c)

    def backward(g):
        graw, _ = _clamp_jacobian_t(raw, np.asarray(g, dtype=np.float64), c)
        gx, gy = _mobius_vjp(x64, y64, c, graw)
        x._accum(gx)
        y._accum(gy)

    return _make(out.astype(x.dtype), (x, y), "mobius_add", backward)


def exp0_map(v, c: float) -> Tensor:
    """Differentiable exponential map at the origin, row-wise on (..., n)."""
    v = _wrap(v)
    v64 = v.data.astype(np.float64)
    sc = np.sqrt(c)
    vn = np.linalg.norm(v64, axis=-1, keepdims=True)
    s = sc * vn
    ratio = geometry._tanh_ratio(s)
    raw = ratio * v64
    out = geometry.project_to_ball(raw, c)

    def backward(g):
        graw, _ = _clamp_jacobian_t(raw, np.asarray(g, dtype=np.float64), c)
        # d/ds [tanh(s)/s] = (s sech^2 s - tanh s) / s^2 ~ -2s/3 near 0
        small = s < 1e-4
        ss = np.where(small, 1.0, s)
        dratio = np.where(small, -2.0 * s / 3.0, (ss / np.cosh(ss) ** 2 - np.tanh(ss)) / ss**2)
        vdotg = np.sum(v64 * graw, axis=-1, keepdims=True)
        # ds/dv = sc * v / |v|; the product sc^2 * dratio/s stays finite at 0
        coef = np.where(small, -2.0 * c / 3.0, sc * dratio / np.where(small, 1.0, vn))
        v._accum(ratio * graw + coef * vdotg * v64)

    return _make(out.astype(v.dtype), (v,), "exp0_map", backward)


def hyper_logit_kernel(z, p, a, c: float) -> Tensor:
    """Ball-MLR logits for z (B, n) against K gyroplanes with p, a (K, n)."""
    z, p, a = _wrap(z), _wrap(p), _wrap(a)
    if z.ndim != 2 or p.shape != a.shape or p.ndim != 2 or z.shape[1] != p.shape[1]:
        raise UsageError(f"hyper_logit shapes z{z.shape} p{p.shape} a{a.shape}")
    z64, p64, a64 = (t.data.astype(np.float64) for t in (z, p, a))
    if np.any(np.linalg.norm(a64, axis=1) == 0.0):
        raise UsageError("hyperbolic MLR normal a_k must be non-zero")
    if np.any(c * np.sum(p64 * p64, axis=1) >= 1.0) or np.any(c * np.sum(z64 * z64, axis=1) >= 1.0):
        raise UsageError("hyper_logit: embedding or offset lies on or outside the ball boundary")
    T = mlr.gyroplane_terms(z64, p64, a64, c)

    def backward(g):
        g = np.asarray(g, dtype=np.float64)           # (B, K)
        sc, an, r, E, u = T["sc"], T["an"], T["r"], T["E"], T["u"]
        lam_p, asr = T["lam_p"], T["asr"]
        dl_dr = lam_p * an / sc / np.sqrt(1.0 + r * r)
        gr = g * dl_dr                                 # (B, K)
        # u enters through <u, a> and through E = 1 - c|u|^2
        gu = (gr * 2.0 * sc / (E * an))[..., None] * a64[None] \
            + (gr * 2.0 * c * r / E)[..., None] * u
        # a enters through <u, a>, |a| in r, and |a| in the prefactor
        g_an = np.sum(-gr * r / an + g * lam_p / sc * asr, axis=0)           # (K,)
        ga = np.einsum("bk,bkn->kn", gr * 2.0 * sc / (E * an), u) + (g_an / an)[:, None] * a64
        # p enters through lambda_p and through x = -p
        g_lam = np.sum(g * an / sc * asr, axis=0)                             # (K,)
        gp = (g_lam * c * lam_p**2)[:, None] * p64
        gx, gy = _mobius_vjp(T["x"], T["y"], c, gu)
        gp = gp - gx.sum(axis=0)
        z._accum(gy.sum(axis=1))
        p._accum(gp)
        a._accum(ga)

    return _make(T["logits"].astype(z.dtype), (z, p, a), "hyper_logit", backward)


def euclid_logit_kernel(z, p, a) -> Tensor:
    """Flat MLR logits <z_b - p_k, a_k> for z (B, n), p and a (K, n)."""
    z, p, a = _wrap(z), _wrap(p), _wrap(a)
    if z.ndim != 2 or p.shape != a.shape or z.shape[1] != p.shape[1]:
        raise UsageError(f"euclid_logit shapes z{z.shape} p{p.shape} a{a.shape}")
    out = z.data @ a.data.T - np.sum(p.data * a.data, axis=1)

    def backward(g):
        g = np.asarray(g)
        z._accum(g @ a.data)
        gk = g.sum(axis=0, dtype=np.float64)
        a._accum(g.T @ z.data - gk[:, None] * p.data)
        p._accum(-gk[:, None] * a.data)

    return _make(out, (z, p, a), "euclid_logit", backward)


# --------------------------------------------------------------------------
# finite-difference checking
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: list[float]
    tol: float
    names: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_rel_error)

    def __str__(self):
        rows = [f"{n or i}: {e:.2e}" for i, (n, e) in enumerate(zip(self.names, self.max_rel_error))]
        return ("PASS" if self.passed else "FAIL") + f" (tol {self.tol:g}) " + ", ".join(rows)


def grad_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor], tol: float = 1e-4,
               h: float = 1e-5, atol: float = 1e-6, max_elems: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare backprop gradients of scalar ``fn(*inputs)`` against central differences.

    The relative error of each checked entry is |analytic - numeric| divided by
    max(|analytic|, |numeric|, atol). ``max_elems`` limits how many randomly
    chosen entries per input are perturbed.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise UsageError("grad_check needs float64 inputs")
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.zero_grad()
    out = fn(*inputs)
    again = fn(*inputs)
    if out.data.size != 1:
        raise UsageError("grad_check needs a scalar-valued function")
    if not np.array_equal(out.data, again.data):
        raise UsageError("grad_check: function is not deterministic")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    rng = rng or np.random.default_rng(0)
    errors = []
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elems is not None and flat.size > max_elems:
            idx = rng.choice(flat.size, size=max_elems, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn(*inputs).data)
            flat[i] = orig - h
            fm = float(fn(*inputs).data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            an = ga.reshape(-1)[i]
            err = abs(an - num) / max(abs(an), abs(num), atol)
            worst = max(worst, err)
        errors.append(worst)
    return GradCheckReport(errors, tol, [t.name for t in inputs])
