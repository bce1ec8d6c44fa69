"""Self-check suites: geometry identities, Euclidean limits, gradients,
chain combinatorics, metric oracles, DSP responses and the optimiser.

Each suite returns a list of Check records; ``run_all`` is what the
``verify`` command prints.
"""

from __future__ import annotations

import itertools
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import afx, geometry, metrics, mlr, optim
from . import autograd as ag
from .network import Model, NetworkConfig


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.suite}: {self.name}" + (f" ({self.detail})" if self.detail else "")


def _ball_points(rng, n, dim, c, max_frac=0.9):
    """Random points with |x| <= max_frac / sqrt(c), radius spread over the whole range."""
    d = rng.normal(size=(n, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(0, max_frac, size=(n, 1)) / np.sqrt(c)
    return d * r


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------

def geometry_suite(n: int = 10_000, dim: int = 8, seed: int = 0, tol: float = 1e-9) -> list[Check]:
    out = []
    rng = np.random.default_rng(seed)
    t0 = time.time()
    for c in (0.001, 1.0):
        x, y, z = (_ball_points(rng, n, dim, c) for _ in range(3))
        zero = np.zeros_like(x)
        # errors measured in units of the ball radius so both curvatures share one tolerance
        s = np.sqrt(c)

        def err(a, b):
            return float(np.max(np.linalg.norm(a - b, axis=-1)) * s)

        e_id = max(err(geometry.mobius_add(zero, x, c), x), err(geometry.mobius_add(x, zero, c), x))
        out.append(Check("geometry", f"identity 0(+)x = x(+)0 = x, c={c:g}", e_id <= tol, f"max err {e_id:.1e}"))
        e_inv = err(geometry.mobius_add(-x, x, c), zero)
        out.append(Check("geometry", f"inverse (-x)(+)x = 0, c={c:g}", e_inv <= tol, f"max err {e_inv:.1e}"))
        e_canc = err(geometry.mobius_add(-x, geometry.mobius_add(x, y, c), c), y)
        out.append(Check("geometry", f"left cancellation, c={c:g}", e_canc <= tol, f"max err {e_canc:.1e}"))
        xy = geometry.mobius_add(x, y, c, project=False)
        inside = bool(np.all(c * np.sum(xy * xy, axis=1) < 1.0))
        out.append(Check("geometry", f"closure x(+)y inside ball, c={c:g}", inside))
        v = rng.normal(size=(n, dim)) * rng.uniform(0, 3, (n, 1)) / s
        vv = geometry.log0(geometry.exp0(v, c), c)
        # exp0 saturates for large |v|, so the round trip is checked where tanh is well conditioned
        ok = np.linalg.norm(v, axis=1) * s < 3.0
        e_map = float(np.max(np.linalg.norm((vv - v)[ok], axis=1) / np.maximum(1.0, np.linalg.norm(v[ok], axis=1))))
        e_map2 = err(geometry.exp0(geometry.log0(x, c), c), x)
        out.append(Check("geometry", f"log0(exp0(v)) = v and exp0(log0(y)) = y, c={c:g}",
                         e_map <= 1e-9 and e_map2 <= tol, f"max err {max(e_map, e_map2):.1e}"))
        dxz = geometry.distance(x, z, c)
        slack = geometry.distance(x, y, c) + geometry.distance(y, z, c) - dxz
        worst = float(slack.min())
        out.append(Check("geometry", f"triangle inequality ({n} triples), c={c:g}", worst >= -1e-9,
                         f"min slack {worst:.1e}"))
        comm = np.linalg.norm(geometry.mobius_add(x, y, c) - geometry.mobius_add(y, x, c), axis=1) * s
        out.append(Check("geometry", f"non-commutativity witness, c={c:g}", bool(comm.max() > 1e-3),
                         f"max |x(+)y - y(+)x| = {comm.max():.2e}"))
    dt = time.time() - t0
    out.append(Check("geometry", "runtime < 10 s", dt < 10, f"{dt:.2f}s"))
    return out


def euclidean_limit_suite(n: int = 1000, dim: int = 8, K: int = 16, seed: int = 1) -> list[Check]:
    """Small-curvature behaviour of the ball MLR and of exp0.

    The first check compares against a flat head with the same normals and
    offsets. The ball logit tends to lambda_0^2 = 4 times the flat one as
    c -> 0, so that check is expected to fail; the second check compares
    against the flat head with normals 4a.
    """
    rng = np.random.default_rng(seed)
    t0 = time.time()
    c = 1e-6
    worst_same, worst_scaled = 0.0, 0.0
    for _ in range(n):
        z = rng.normal(size=(1, dim))
        a = mlr.init_normals(K, dim, rng)
        p = rng.normal(size=(K, dim)) * 0.5
        h = mlr.hyper_logits(z, mlr.HyperbolicHead(a, p, c))
        e_same = mlr.euclid_logits(z, mlr.EuclideanHead(a, p))
        e_scaled = mlr.euclid_logits(z, mlr.EuclideanHead(4.0 * a, p))
        worst_same = max(worst_same, float(np.linalg.norm(h - e_same) / np.linalg.norm(e_same)))
        worst_scaled = max(worst_scaled, float(np.linalg.norm(h - e_scaled) / np.linalg.norm(e_scaled)))
    out = [
        Check("euclidean-limit", "hyper_logits(c=1e-6) vs euclid_logits, same (a, p)", worst_same <= 1e-3,
              f"max rel err {worst_same:.2e}; the ball logit tends to 4x the flat one"),
        Check("euclidean-limit", "hyper_logits(c=1e-6) vs euclid_logits with normals 4a", worst_scaled <= 1e-3,
              f"max rel err {worst_scaled:.2e}"),
    ]
    v = rng.normal(size=(n, dim))
    e = float(np.max(np.abs(geometry.exp0(v, 1e-8) - v)))
    out.append(Check("euclidean-limit", "exp0 at c=1e-8 within 1e-6 of identity", e <= 1e-6, f"max err {e:.1e}"))
    dt = time.time() - t0
    out.append(Check("euclidean-limit", "runtime < 10 s", dt < 10, f"{dt:.2f}s"))
    return out


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------

def _t(x, name=""):
    return ag.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True, name=name)


def _weighted_sum(out: ag.Tensor, w: np.ndarray) -> ag.Tensor:
    """Scalar <w, out> via the autograd primitives themselves."""
    flat = out.data.reshape(-1)
    wt = ag.Tensor(w.reshape(-1, 1))
    return ag.matmul(_reshape_row(out, flat.size), wt)


def _reshape_row(t: ag.Tensor, n: int) -> ag.Tensor:
    shape = t.shape

    def backward(g):
        t._accum(np.asarray(g).reshape(shape))

    return ag._make(t.data.reshape(1, n), (t,), "reshape", backward)


def _scalarise(fn, out_shape, rng):
    w = rng.normal(size=out_shape)
    return lambda *xs: ag.reduce_mean(_weighted_sum(fn(*xs), w))


def gradient_suite(seed: int = 2, tol: float = 1e-4) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    t0 = time.time()
    B, n, K, T, M, H = 4, 6, 5, 7, 5, 4

    def check(name, fn, inputs, out_shape, **kw):
        rep = ag.grad_check(_scalarise(fn, out_shape, rng), inputs, tol=tol, **kw)
        out.append(Check("gradients", name, rep.passed, str(rep)))

    check("matmul", ag.matmul, [_t(rng.normal(size=(B, n)), "a"), _t(rng.normal(size=(n, K)), "b")], (B, K))
    check("add (bias)", ag.add, [_t(rng.normal(size=(B, n)), "x"), _t(rng.normal(size=n), "b")], (B, n))
    check("scale", lambda x: ag.scale(x, -1.7), [_t(rng.normal(size=(B, n)), "x")], (B, n))
    xr = rng.normal(size=(B, n))
    xr[np.abs(xr) < 0.05] = 0.3           # keep away from the kink
    check("relu", ag.relu, [_t(xr, "x")], (B, n))
    check("tanh", ag.tanh, [_t(rng.normal(size=(B, n)), "x")], (B, n))
    check("layer_norm", ag.layer_norm, [_t(rng.normal(size=(B, n)), "x"), _t(rng.normal(size=n), "g"),
                                        _t(rng.normal(size=n), "b")], (B, n))
    check("concat", lambda a, b: ag.concat([a, b]), [_t(rng.normal(size=(B, 2)), "a"), _t(rng.normal(size=(B, 3)), "b")], (B, 5))
    check("reduce_mean", lambda x: ag.reduce_mean(x, axis=0), [_t(rng.normal(size=(B, n)), "x")], (n,))
    labels = rng.integers(0, K, B)
    rep = ag.grad_check(lambda z: ag.softmax_cross_entropy(z, labels), [_t(rng.normal(size=(B, K)), "logits")], tol=tol)
    out.append(Check("gradients", "softmax_cross_entropy", rep.passed, str(rep)))
    check("attention_pool", ag.attention_pool_kernel,
          [_t(rng.normal(size=(B, T, M)), "frames"), _t(rng.normal(size=(M, H)), "W"), _t(rng.normal(size=H), "w")], (B, M))
    for c in (0.1, 1.0):
        x = _ball_points(rng, B, n, c, 0.7)
        y = _ball_points(rng, B, n, c, 0.7)
        check(f"mobius_add c={c:g}", lambda a, b: ag.mobius_add(a, b, c), [_t(x, "x"), _t(y, "y")], (B, n))
        v = rng.normal(size=(B, n)) * 0.5 / np.sqrt(c)
        check(f"exp0_map c={c:g}", lambda a: ag.exp0_map(a, c), [_t(v, "v")], (B, n))
        z = _ball_points(rng, B, n, c, 0.7)
        p = _ball_points(rng, K, n, c, 0.5)
        a = rng.normal(size=(K, n))
        check(f"hyper_logit c={c:g}", lambda zz, pp, aa: ag.hyper_logit_kernel(zz, pp, aa, c),
              [_t(z, "z"), _t(p, "p"), _t(a, "a")], (B, K))
    check("euclid_logit", ag.euclid_logit_kernel,
          [_t(rng.normal(size=(B, n)), "z"), _t(rng.normal(size=(K, n)), "p"), _t(rng.normal(size=(K, n)), "a")], (B, K))
    out.extend(full_loss_gradients(seed=seed, tol=tol))
    dt = time.time() - t0
    out.append(Check("gradients", "runtime < 2 min", dt < 120, f"{dt:.1f}s"))
    return out


def full_loss_gradients(seed: int = 2, tol: float = 1e-4, dim: int = 64, batch: int = 4,
                        n_frames: int = 6, max_elems: int = 12) -> list[Check]:
    """End-to-end cross-entropy gradient check for both geometries in float64."""
    out = []
    for geom in ("euclidean", "hyperbolic"):
        cfg = NetworkConfig(geometry=geom, c=1.0, dim=dim, n_classes=16)
        model = Model(cfg, seed=seed, dtype=np.float64)
        rng = np.random.default_rng(seed)
        # move the offsets off the origin so every head parameter has a generic gradient
        model.params["head.p"].data = _ball_points(rng, 16, dim, 1.0, 0.3)
        model.params["attn.w"].data = rng.normal(size=cfg.attn_dim) * 0.5
        frames = rng.normal(size=(batch, n_frames, cfg.mel.n_mels))
        labels = rng.integers(0, 16, batch)
        names = list(model.params)
        tensors = [model.params[k] for k in names]

        def fn(*_):
            return model.loss(frames, labels)

        rep = ag.grad_check(fn, tensors, tol=tol, max_elems=max_elems, rng=np.random.default_rng(seed))
        emb = model.embed(frames).data
        detail = str(rep)
        if geom == "hyperbolic":
            detail += f"; max |e| = {np.linalg.norm(emb, axis=1).max():.4f}"
        out.append(Check("gradients", f"full loss, {geom}, J={dim}, batch {batch}", rep.passed, detail))
    return out


# --------------------------------------------------------------------------
# combinatorics
# --------------------------------------------------------------------------

def combinatorics_suite(max_f: int = 5) -> list[Check]:
    out = []
    ok = True
    for F in range(0, max_f + 1):
        kinds = [f"k{i}" for i in range(F)]
        for L in range(0, F + 1):
            got = afx.enumerate_chains(kinds, L)
            formula = sum(math.factorial(F) // math.factorial(F - l) for l in range(L + 1))
            brute = {seq for l in range(L + 1) for seq in itertools.product(kinds, repeat=l)
                     if len(set(seq)) == len(seq)}
            ok &= len(got) == formula == len(brute) and set(got) == brute and len(set(got)) == len(got)
    out.append(Check("combinatorics", f"count = sum F!/(F-l)! with brute force, F <= {max_f}", ok))
    n16 = len(afx.enumerate_chains(afx.KINDS, 3))
    out.append(Check("combinatorics", "F=3, L=3 gives 16 classes", n16 == 16, f"{n16}"))
    return out


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def brute_force_f1(counts: np.ndarray) -> tuple[float, float]:
    """Macro/micro F1 from expanded (truth, pred) pairs, computed one sample at a time."""
    K = counts.shape[0]
    pairs = [(t, p) for t in range(K) for p in range(K) for _ in range(int(counts[t, p]))]
    per = []
    TP = FP = FN = 0
    for k in range(K):
        tp = sum(1 for t, p in pairs if t == k and p == k)
        fp = sum(1 for t, p in pairs if t != k and p == k)
        fn = sum(1 for t, p in pairs if t == k and p != k)
        TP, FP, FN = TP + tp, FP + fp, FN + fn
        per.append(2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0)
    macro = 0.0
    for v in per:
        macro += v
    micro = 2 * TP / (2 * TP + FP + FN) if (2 * TP + FP + FN) else 0.0
    return macro / K, micro


def metrics_suite(seed: int = 3, n: int = 100) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    mismatches = 0
    for _ in range(n):
        K = int(rng.integers(2, 17))
        counts = rng.integers(0, 6, size=(K, K)) * (rng.random((K, K)) < 0.6)
        rep = metrics.f1_scores(metrics.ConfusionMatrix(counts, [str(i) for i in range(K)]))
        macro, micro = brute_force_f1(counts)
        mismatches += (rep.macro != macro) + (rep.micro != micro)
    out.append(Check("metrics", f"macro/micro F1 equal brute force on {n} random matrices (exact)",
                     mismatches == 0, f"{mismatches} mismatches"))
    rep = metrics.f1_scores(metrics.ConfusionMatrix(np.array([[2, 1], [0, 1]]), ["0", "1"]))
    out.append(Check("metrics", "[[2,1],[0,1]] -> macro 11/15, micro 3/4",
                     math.isclose(rep.macro, 11 / 15, rel_tol=1e-15) and rep.micro == 0.75,
                     f"macro {rep.macro!r}, micro {rep.micro!r}"))
    vocab = afx.ChainVocabulary()
    truths = rng.integers(0, 16, 500)
    preds = np.where(rng.random(500) < 0.6, truths, rng.integers(0, 16, 500))
    full, _ = metrics.full_f1(preds, truths, vocab)
    f3 = metrics.first_n_f1(preds, truths, vocab, 3)
    l3 = metrics.latest_n_f1(preds, truths, vocab, 3)
    same = (f3.macro, f3.micro) == (full.macro, full.micro) == (l3.macro, l3.micro)
    out.append(Check("metrics", "first-3 and latest-3 equal full-chain F1", same,
                     f"full {full.macro:.4f}/{full.micro:.4f}"))
    return out


# --------------------------------------------------------------------------
# DSP
# --------------------------------------------------------------------------

def dsp_suite(seed: int = 4, sr: int = 44100) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []
    n = 4000
    D, fb, mix = 300, 0.6, 0.4
    imp = np.zeros(n)
    imp[0] = 1.0
    y = afx.apply_delay(imp, afx.EffectSpec("delay", {"delay_seconds": D / sr, "feedback": fb, "mix": mix}), sr)
    expect = np.zeros(n)
    expect[0] = 1 - mix
    for k in range(1, (n - 1) // D + 1):
        expect[k * D] = mix * fb ** (k - 1)
    e = float(np.max(np.abs(y - expect)))
    out.append(Check("dsp", "delay impulse response follows the comb recurrence", e <= 1e-6, f"max err {e:.1e}"))

    x = rng.uniform(-1, 1, 1000)
    drive = 12.0
    yd = afx.apply_distortion(x, afx.EffectSpec("distortion", {"drive_db": drive}))
    g = 10 ** (drive / 20)
    e = max(abs(a - math.tanh(g * b)) for a, b in zip(yd, x))
    out.append(Check("dsp", "distortion is pointwise tanh(g x)", e <= 1e-9, f"max err {e:.1e}"))

    t = np.arange(sr) / sr
    sine = 0.5 * np.sin(2 * np.pi * 440 * t)
    yc = afx.apply_chorus(sine, afx.EffectSpec("chorus", {"depth": 0.0, "feedback": 0.0, "centre_delay_ms": 10.0,
                                                          "mix": 0.5, "rate_hz": 1.0}), sr)
    yl = afx.apply_delay(sine, afx.EffectSpec("delay", {"delay_seconds": 0.01, "feedback": 0.0, "mix": 0.5}), sr)
    rms = float(np.sqrt(np.mean((yc - yl) ** 2)))
    out.append(Check("dsp", "chorus with depth 0 equals a fixed delay", rms <= 1e-3, f"RMS {rms:.1e}"))

    sig = 0.6 * rng.standard_normal(sr // 2)
    d = afx.EffectSpec("distortion", {"drive_db": 10.0})
    ch = afx.EffectSpec("chorus", {"rate_hz": 1.2, "depth": 0.8, "feedback": 0.3})
    a = afx.apply_effect(afx.apply_effect(sig, d, sr), ch, sr)
    b = afx.apply_effect(afx.apply_effect(sig, ch, sr), d, sr)
    rel = float(np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(a ** 2)))
    out.append(Check("dsp", "distortion/chorus order matters", rel >= 1e-2, f"relative RMS diff {rel:.3f}"))

    d1 = afx.EffectSpec("delay", {"delay_seconds": 0.013, "feedback": 0.5, "mix": 0.7})
    d2 = afx.EffectSpec("delay", {"delay_seconds": 0.021, "feedback": 0.3, "mix": 0.4})
    a = afx.apply_delay(afx.apply_delay(sig, d1, sr), d2, sr)
    b = afx.apply_delay(afx.apply_delay(sig, d2, sr), d1, sr)
    rel = float(np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(a ** 2)))
    out.append(Check("dsp", "two delays commute", rel <= 1e-6, f"relative RMS diff {rel:.1e}"))
    return out


# --------------------------------------------------------------------------
# optimiser
# --------------------------------------------------------------------------

def synthetic_mlr_problem(seed: int = 5, n: int = 96, dim: int = 4, K: int = 4, c: float = 1.0):
    """Learnable ball embeddings and gyroplanes for random labels (a memorisation task)."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, K, n)
    z = ag.Tensor(_ball_points(rng, n, dim, c, 0.1), requires_grad=True)
    p = ag.Tensor(_ball_points(rng, K, dim, c, 0.1), requires_grad=True)
    a = ag.Tensor(mlr.init_normals(K, dim, rng), requires_grad=True)
    return labels, z, p, a


def optimizer_suite(steps: int = 200, lr: float = 0.05, c: float = 1.0, seed: int = 5) -> list[Check]:
    out = []
    labels, z, p, a = synthetic_mlr_problem(seed, c=c)
    states = {id(t): optim.AdamState.zeros_like(t.data) for t in (z, p, a)}

    def loss():
        return ag.softmax_cross_entropy(ag.hyper_logit_kernel(z, p, a, c), labels)

    first = float(loss().data)
    bound = (1 - geometry.BALL_EPS) ** 2
    contained = True
    for _ in range(steps):
        for t in (z, p, a):
            t.zero_grad()
        L = loss()
        L.backward()
        for t in (z, p):
            t.data = optim.radam_step(t.data, t.grad, states[id(t)], lr, c)
            contained &= bool(np.all(c * np.sum(t.data ** 2, axis=-1) <= bound))
        a.data = optim.adamw_step(a.data, a.grad, states[id(a)], lr, 0.0)
    last = float(loss().data)
    out.append(Check("optimizer", f"{steps} radam steps keep c|p|^2 <= (1-1e-5)^2", contained))
    out.append(Check("optimizer", "loss falls by at least 50%", last <= 0.5 * first, f"{first:.3f} -> {last:.3f}"))

    rng = np.random.default_rng(seed + 1)
    x0 = rng.normal(size=(3, 5)) * 1e-3
    g = rng.normal(size=(3, 5))
    small_c = 1e-8
    worst = 0.0
    s_r, s_e = optim.AdamState.zeros_like(x0), optim.AdamState.zeros_like(x0)
    xr, xe = x0.copy(), x0.copy()
    for _ in range(3):
        nr = optim.radam_step(xr, g, s_r, 1e-3, small_c)
        ne = optim.adamw_step(xe, g, s_e, 1e-3, 0.0)
        dr, de = nr - xr, ne - xe
        worst = max(worst, float(np.linalg.norm(dr - de) / np.linalg.norm(de)))
        xr, xe = nr, ne
    out.append(Check("optimizer", "radam step matches adamw step at c=1e-8", worst <= 1e-3, f"rel diff {worst:.1e}"))
    return out


SUITES = {
    "geometry": geometry_suite,
    "euclidean-limit": euclidean_limit_suite,
    "gradients": gradient_suite,
    "combinatorics": combinatorics_suite,
    "metrics": metrics_suite,
    "dsp": dsp_suite,
    "optimizer": optimizer_suite,
}


def run_all(names=None) -> list[Check]:
    checks = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name in names or SUITES:
            checks.extend(SUITES[name]())
    return checks
