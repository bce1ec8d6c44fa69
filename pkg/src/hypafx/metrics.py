"""Confusion matrices, F1 variants over chain labels, and seed aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .afx import ChainVocabulary
from .errors import UsageError

VARIANTS = ("full", "first-N", "latest-N", "presence")
EMPTY = ""


@dataclass
class ConfusionMatrix:
    counts: np.ndarray            # counts[truth, pred]
    labels: list[str]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class F1Report:
    macro: float
    micro: float
    per_class: list[float]
    variant: str = "full"
    labels: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"variant": self.variant, "macro_f1": self.macro, "micro_f1": self.micro,
                "per_class": dict(zip(self.labels, self.per_class)) if self.labels else self.per_class}


@dataclass
class SeedAggregate:
    mean: dict[str, float]
    stderr: dict[str, float]
    runs: int
    single_run: bool

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "runs": self.runs,
                "stderr_undefined_single_run": self.single_run}


def confusion(preds, truths, K: int, labels: list[str] | None = None) -> ConfusionMatrix:
    preds = np.asarray(preds, dtype=np.int64).ravel()
    truths = np.asarray(truths, dtype=np.int64).ravel()
    if preds.shape != truths.shape:
        raise UsageError(f"{preds.size} predictions vs {truths.size} truths")
    if preds.size and (min(preds.min(), truths.min()) < 0 or max(preds.max(), truths.max()) >= K):
        raise UsageError(f"label out of range [0, {K})")
    counts = np.zeros((K, K), dtype=np.int64)
    np.add.at(counts, (truths, preds), 1)
    return ConfusionMatrix(counts, labels or [str(i) for i in range(K)])


def f1_scores(cm: ConfusionMatrix, variant: str = "full") -> F1Report:
    """Per-class 2TP/(2TP+FP+FN) with 0/0 -> 0; macro over all K classes."""
    C = np.asarray(cm.counts, dtype=np.int64)
    if C.size == 0:
        raise UsageError("empty confusion matrix")
    tp = np.diag(C)
    fp = C.sum(axis=0) - tp
    fn = C.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    per = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    TP, FP, FN = tp.sum(), fp.sum(), fn.sum()
    micro = float(2 * TP / (2 * TP + FP + FN)) if (2 * TP + FP + FN) else 0.0
    total = C.sum()
    # single-label multiclass: pooled FP == pooled FN, so micro F1 is accuracy
    assert total == 0 or math.isclose(micro, float(TP) / total, rel_tol=0, abs_tol=1e-12)
    per_list = [float(v) for v in per]
    macro = 0.0
    for v in per_list:            # plain left-to-right sum keeps results reproducible bit-for-bit
        macro += v
    return F1Report(macro / len(per_list), micro, per_list, variant, list(cm.labels))


# --------------------------------------------------------------------------
# label reductions
# --------------------------------------------------------------------------

def tuple_label(chain, width: int) -> str:
    """Padded tuple form, e.g. "('delay', '', '')"."""
    chain = tuple(chain)
    return str(chain + (EMPTY,) * (width - len(chain)))


def first_n_labels(chain, N: int, L: int | None = None) -> tuple[str, ...]:
    """Length-N prefix, right-padded with empty entries."""
    chain = tuple(chain)
    _check_n(N, L)
    head = chain[:N]
    return head + (EMPTY,) * (N - len(head))


def latest_n_labels(chain, N: int, L: int | None = None) -> tuple[str, ...]:
    """Length-N suffix, left-padded with empty entries."""
    chain = tuple(chain)
    _check_n(N, L)
    tail = chain[-N:] if chain else ()
    return (EMPTY,) * (N - len(tail)) + tail


def presence_label(chain) -> frozenset:
    return frozenset(chain)


def _check_n(N: int, L: int | None):
    if N < 1 or (L is not None and N > L):
        raise UsageError(f"N must be in [1, {L}], got {N}")


def _reduced_f1(preds, truths, vocab: ChainVocabulary, reduce, variant: str, label_fmt) -> F1Report:
    """F1 over reduced labels; the class universe is every reduction reachable from the vocabulary."""
    keys = []
    for ch in vocab.chains:
        r = reduce(ch)
        if r not in keys:
            keys.append(r)
    index = {k: i for i, k in enumerate(keys)}
    p = [index[reduce(vocab.chain(int(i)))] for i in preds]
    t = [index[reduce(vocab.chain(int(i)))] for i in truths]
    cm = confusion(p, t, len(keys), [label_fmt(k) for k in keys])
    return f1_scores(cm, variant)


def first_n_f1(preds, truths, vocab: ChainVocabulary, N: int) -> F1Report:
    _check_n(N, vocab.max_len)
    return _reduced_f1(preds, truths, vocab, lambda ch: first_n_labels(ch, N), f"first-{N}", str)


def latest_n_f1(preds, truths, vocab: ChainVocabulary, N: int) -> F1Report:
    _check_n(N, vocab.max_len)
    return _reduced_f1(preds, truths, vocab, lambda ch: latest_n_labels(ch, N), f"latest-{N}", str)


def presence_f1(preds, truths, vocab: ChainVocabulary) -> F1Report:
    return _reduced_f1(preds, truths, vocab, presence_label, "presence",
                       lambda s: str(tuple(sorted(s))))


def full_f1(preds, truths, vocab: ChainVocabulary) -> tuple[F1Report, ConfusionMatrix]:
    labels = [tuple_label(ch, vocab.max_len) for ch in vocab.chains]
    cm = confusion(preds, truths, len(vocab), labels)
    return f1_scores(cm, "full"), cm


# --------------------------------------------------------------------------
# aggregation and output
# --------------------------------------------------------------------------

def aggregate(runs: list[dict[str, float]]) -> SeedAggregate:
    """Mean and standard error (sample sd / sqrt(n)) per metric; one run gives stderr 0."""
    if not runs:
        raise UsageError("aggregate needs at least one run")
    keys = list(runs[0])
    n = len(runs)
    mean, se = {}, {}
    for k in keys:
        vals = np.array([r[k] for r in runs], dtype=np.float64)
        mean[k] = float(vals.mean())
        se[k] = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return SeedAggregate(mean, se, n, n == 1)


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["truth \\ pred"] + cm.labels)
        for label, row in zip(cm.labels, cm.counts):
            w.writerow([label] + [int(v) for v in row])


def read_confusion_csv(path) -> ConfusionMatrix:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    labels = rows[0][1:]
    counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)
    return ConfusionMatrix(counts, labels)


def evaluate_predictions(preds, truths, vocab: ChainVocabulary, first_n=(), latest_n=()) -> tuple[dict, ConfusionMatrix]:
    """All metric blocks for one run as a flat JSON-ready dict, plus the full confusion matrix."""
    full, cm = full_f1(preds, truths, vocab)
    blocks = {"full": full, "presence": presence_f1(preds, truths, vocab)}
    for N in first_n:
        blocks[f"first-{N}"] = first_n_f1(preds, truths, vocab, N)
    for N in latest_n:
        blocks[f"latest-{N}"] = latest_n_f1(preds, truths, vocab, N)
    return {k: v.to_dict() for k, v in blocks.items()}, cm


def summary_scalars(blocks: dict) -> dict[str, float]:
    out = {}
    for name, b in blocks.items():
        out[f"{name}/macro_f1"] = b["macro_f1"]
        out[f"{name}/micro_f1"] = b["micro_f1"]
    return out
