"""Effect-chain classifier: mel front-end, FC projection, geometry map, MLR head."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import mlr
from .errors import FormatError, UsageError
from .features import FeatureNormalizer, MelConfig, extract_features

GEOMETRIES = ("euclidean", "hyperbolic")
FRAME_FEATURES = ("logmel", "delta", "square")
STANDARD_DIMS = (64, 128, 256, 512)
CHECKPOINT_FORMAT = "hypafx-checkpoint"
CHECKPOINT_VERSION = 1

# optimiser tags
EUCLIDEAN = "euclidean"
EUCLIDEAN_NO_DECAY = "euclidean-nodecay"
MANIFOLD = "manifold"


@dataclass
class NetworkConfig:
    geometry: str = "hyperbolic"
    c: float = 1.0
    dim: int = 128              # J
    n_blocks: int = 3           # I
    feat_dim: int = 128         # D_feat
    attn_dim: int = 64
    n_classes: int = 16
    # per-frame inputs to the attention pool, built from normalised log-mel frames
    frame_features: tuple = FRAME_FEATURES
    mel: MelConfig = field(default_factory=MelConfig)

    def __post_init__(self):
        if isinstance(self.mel, dict):
            self.mel = MelConfig(**self.mel)
        self.frame_features = tuple(self.frame_features)
        if not self.frame_features or "logmel" not in self.frame_features \
                or any(f not in FRAME_FEATURES for f in self.frame_features) \
                or len(set(self.frame_features)) != len(self.frame_features):
            raise UsageError(f"frame_features must include 'logmel' and use only {FRAME_FEATURES}")
        if self.geometry not in GEOMETRIES:
            raise UsageError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.geometry == "hyperbolic" and not self.c > 0:
            raise UsageError(f"curvature must be positive, got {self.c}")
        if self.n_blocks < 1:
            raise UsageError("need at least one FC block")
        if self.dim < 2 or self.dim % 2:
            raise UsageError(f"output dimension J must be even, got {self.dim}")
        if self.dim not in STANDARD_DIMS:
            warnings.warn(f"J={self.dim} is outside the usual {STANDARD_DIMS}", stacklevel=3)
        if self.n_classes < 2:
            raise UsageError("need at least two classes")

    @property
    def frame_dim(self) -> int:
        return self.mel.n_mels * len(self.frame_features)

    @property
    def hidden(self) -> int:
        return self.dim // 2

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) of each FC block."""
        widths = [self.feat_dim] + [self.hidden] * (self.n_blocks - 1) + [self.dim]
        return list(zip(widths[:-1], widths[1:]))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


def kaiming_uniform(rng, fan_in: int, fan_out: int, a: float = np.sqrt(5.0)) -> np.ndarray:
    """Fan-in Kaiming-uniform with leaky-ReLU slope ``a``; the default gives bound 1/sqrt(fan_in).

    With a = 0 (bound sqrt(6/fan_in)) the pre-map vector starts with norm near
    sqrt(2 J), which pins every exp0 output to the ball's clamp radius.
    """
    return _uniform(rng, fan_in, fan_out, np.sqrt(2.0 / (1.0 + a * a)) * np.sqrt(3.0 / fan_in))


def embedding_init(rng, fan_in: int, fan_out: int) -> np.ndarray:
    """Init for the last FC block: expected output norm about 1 for unit-scale inputs.

    Plain fan-in scaling leaves the J-dim embedding with norm near sqrt(J/3), so
    exp0 lands next to the boundary and the hyperbolic logits start huge.
    Bound sqrt(3/(fan_in J)) gives per-coordinate variance 1/J instead.
    """
    return _uniform(rng, fan_in, fan_out, np.sqrt(3.0 / (fan_in * fan_out)))


def _uniform(rng, fan_in, fan_out, bound):
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Model:
    """Parameters live in ``self.params`` (name -> Tensor); tags drive the optimiser."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.normalizer: FeatureNormalizer | None = None
        rng = np.random.default_rng([seed, 0xAF])
        M, cfg = config.frame_dim, config
        p: dict[str, np.ndarray] = {}
        tags: dict[str, str] = {}
        # attention pool starts as a plain mean: zero score vector
        p["attn.W"] = rng.uniform(-1, 1, (M, cfg.attn_dim)) / np.sqrt(M)
        p["attn.w"] = np.zeros(cfg.attn_dim)
        p["front.W"] = kaiming_uniform(rng, M, cfg.feat_dim)
        p["front.b"] = np.zeros(cfg.feat_dim)
        for name in ("attn.W", "attn.w", "front.W", "front.b"):
            tags[name] = EUCLIDEAN
        for i, (fi, fo) in enumerate(cfg.layer_dims()):
            last = i == cfg.n_blocks - 1
            p[f"fc{i}.W"] = embedding_init(rng, fi, fo) if last else kaiming_uniform(rng, fi, fo)
            p[f"fc{i}.b"] = np.zeros(fo)
            tags[f"fc{i}.W"] = tags[f"fc{i}.b"] = EUCLIDEAN
            if i < cfg.n_blocks - 1:
                p[f"ln{i}.g"] = np.ones(fo)
                p[f"ln{i}.b"] = np.zeros(fo)
                tags[f"ln{i}.g"] = tags[f"ln{i}.b"] = EUCLIDEAN_NO_DECAY
        head = mlr.init_euclidean_head(cfg.n_classes, cfg.dim, rng)
        p["head.a"] = head.a
        p["head.p"] = head.p
        tags["head.a"] = EUCLIDEAN
        tags["head.p"] = MANIFOLD if cfg.geometry == "hyperbolic" else EUCLIDEAN
        self.params = {k: ag.Tensor(v, requires_grad=True, dtype=self.dtype, name=k) for k, v in p.items()}
        self.tags = tags

    # -- stages -------------------------------------------------------------
    def frame_inputs(self, frames) -> np.ndarray:
        """(B, T, M) log-mel frames -> (B, T, frame_dim) pool inputs.

        ``delta`` is the first difference over time (zero for the first frame)
        and ``square`` the elementwise square, so the pooled vector carries
        weighted second moments and spectral flux alongside the weighted mean.
        """
        frames = np.asarray(frames, dtype=self.dtype)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim != 3 or frames.shape[1] < 1 or frames.shape[2] != self.config.mel.n_mels:
            raise UsageError(f"expected (B, T, {self.config.mel.n_mels}) frames, got {frames.shape}")
        parts = []
        for name in self.config.frame_features:
            if name == "logmel":
                parts.append(frames)
            elif name == "delta":
                parts.append(np.diff(frames, axis=1, prepend=frames[:, :1]))
            elif name == "square":
                parts.append(frames * frames)
        return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=2)

    def pool(self, frames) -> ag.Tensor:
        """(B, T, M) frames -> (B, D_feat) clip embedding."""
        P = self.params
        x = self.frame_inputs(frames)
        pooled = ag.attention_pool_kernel(ag.Tensor(x), P["attn.W"], P["attn.w"])
        self.last_attention = pooled.attention
        return ag.add(ag.matmul(pooled, P["front.W"]), P["front.b"])

    def project(self, z) -> ag.Tensor:
        P = self.params
        n = self.config.n_blocks
        for i in range(n):
            z = ag.add(ag.matmul(z, P[f"fc{i}.W"]), P[f"fc{i}.b"])
            if i < n - 1:
                z = ag.layer_norm(ag.relu(z), P[f"ln{i}.g"], P[f"ln{i}.b"])
        return z

    def map_to_geometry(self, z) -> ag.Tensor:
        if self.config.geometry == "hyperbolic":
            return ag.exp0_map(z, self.config.c)
        return z

    def head_logits(self, e) -> ag.Tensor:
        P = self.params
        if self.config.geometry == "hyperbolic":
            return ag.hyper_logit_kernel(e, P["head.p"], P["head.a"], self.config.c)
        return ag.euclid_logit_kernel(e, P["head.p"], P["head.a"])

    def embed(self, frames) -> ag.Tensor:
        return self.map_to_geometry(self.project(self.pool(frames)))

    def logits(self, frames) -> ag.Tensor:
        return self.head_logits(self.embed(frames))

    def loss(self, frames, labels) -> ag.Tensor:
        labels = np.asarray(labels)
        if labels.size and labels.max() >= self.config.n_classes:
            raise UsageError(f"label {labels.max()} >= number of classes {self.config.n_classes}")
        return ag.softmax_cross_entropy(self.logits(frames), labels)

    # -- inference on raw audio ----------------------------------------------
    def features(self, signal, sr: int) -> np.ndarray:
        return extract_features(signal, sr, self.config.mel, self.normalizer)

    def forward(self, signal, sr: int) -> np.ndarray:
        """Logits (K,) for one mono clip."""
        return self.logits(self.features(signal, sr)[None]).data[0]

    def predict_frames(self, frames, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
        """(predictions, logits) for an array of frame matrices, in batches."""
        out = []
        for s in range(0, len(frames), batch_size):
            out.append(self.logits(frames[s:s + batch_size]).data.astype(np.float64))
        logits = np.concatenate(out) if out else np.zeros((0, self.config.n_classes))
        return (mlr.predict(logits) if len(logits) else np.zeros(0, dtype=np.int64)), logits

    # -- parameter utilities --------------------------------------------------
    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, t in self.params.items():
            if k not in state or state[k].shape != t.shape:
                raise FormatError(f"parameter {k!r} missing or mis-shaped in state")
            t.data = np.array(state[k], dtype=self.dtype)

    def n_params(self, prefix: tuple[str, ...] = ()) -> int:
        return sum(t.data.size for k, t in self.params.items() if not prefix or k.startswith(prefix))

    def check_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self.params.values())

    def hyperbolic_head(self) -> mlr.HyperbolicHead:
        return mlr.HyperbolicHead(self.params["head.a"].data, self.params["head.p"].data, self.config.c)

    def euclidean_head(self) -> mlr.EuclideanHead:
        return mlr.EuclideanHead(self.params["head.a"].data, self.params["head.p"].data)


# --------------------------------------------------------------------------
# checkpoint: one JSON header line, then little-endian float32 tensors
# --------------------------------------------------------------------------

def save_checkpoint(model: Model, path, meta: dict | None = None) -> None:
    tensors = dict(model.state())
    if model.normalizer is not None:
        tensors["norm.mean"] = model.normalizer.mean
        tensors["norm.std"] = model.normalizer.std
    directory, offset, chunks = [], 0, []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
              "config": model.config.to_dict(), "dtype": model.dtype.name,
              "tensors": directory, "payload_bytes": offset, "meta": meta or {}}
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for chunk in chunks:
            f.write(chunk)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[Model, dict]:
    """Returns (model, meta)."""
    path = Path(path)
    blob = path.read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed checkpoint header ({exc})") from None
    if header.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    payload = blob[nl + 1:]
    if len(payload) != header["payload_bytes"]:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header says {header['payload_bytes']}")
    tensors = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        config = NetworkConfig.from_dict(header["config"])
    model = Model(config, dtype=np.dtype(header.get("dtype", "float32")))
    model.load_state(tensors)
    if "norm.mean" in tensors:
        model.normalizer = FeatureNormalizer(tensors["norm.mean"], tensors["norm.std"])
    return model, header.get("meta", {})
