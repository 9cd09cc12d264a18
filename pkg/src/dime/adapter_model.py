"""Frozen random-feature backbone, residual bottleneck adapter, growing linear head."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .linalg import as_matrix, check_finite, format_matrix, read_matrix

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class BackboneSpec:
    input_dim: int
    feature_dim: int
    seed: int
    projection: np.ndarray
    offset: np.ndarray

    @classmethod
    def create(cls, input_dim: int, feature_dim: int, seed: int) -> "BackboneSpec":
        rng = np.random.default_rng(seed)
        projection = rng.standard_normal((feature_dim, input_dim)) / math.sqrt(input_dim)
        offset = 0.1 * rng.standard_normal(feature_dim)
        projection.flags.writeable = False
        offset.flags.writeable = False
        return cls(input_dim, feature_dim, seed, projection, offset)


@dataclass
class AdapterParams:
    w_down: np.ndarray  # (d_hat, d)
    w_up: np.ndarray    # (d, d_hat)
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    scale: float = 1.0

    MATRICES = ("w_down", "w_up")
    VECTORS = ("ln_gain", "ln_bias")

    def __post_init__(self):
        self.w_down = as_matrix(self.w_down, "w_down")
        self.w_up = as_matrix(self.w_up, "w_up")
        self.ln_gain = np.asarray(self.ln_gain, dtype=np.float64)
        self.ln_bias = np.asarray(self.ln_bias, dtype=np.float64)
        d_hat, d = self.w_down.shape
        if self.w_up.shape != (d, d_hat):
            raise ValueError(f"w_up shape {self.w_up.shape} does not match w_down {self.w_down.shape}")
        if self.ln_gain.shape != (d,) or self.ln_bias.shape != (d,):
            raise ValueError("layer-norm vectors must have length d")
        if not d_hat < d:
            raise ValueError(f"bottleneck requires d_hat < d, got {d_hat} >= {d}")
        check_finite(self.ln_gain, "ln_gain")
        check_finite(self.ln_bias, "ln_bias")
        if not math.isfinite(self.scale):
            raise ValueError("scale must be finite")

    @property
    def dim(self) -> int:
        return self.w_down.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w_down.shape[0]

    @classmethod
    def init(cls, d: int, d_hat: int, rng: np.random.Generator, scale: float = 1.0,
             ln_gain=None, ln_bias=None) -> "AdapterParams":
        """Fresh adapter: normal(0, 1/sqrt(d)) down-projection, zero up-projection."""
        w_down = rng.standard_normal((d_hat, d)) / math.sqrt(d)
        w_up = np.zeros((d, d_hat))
        gain = np.ones(d) if ln_gain is None else np.array(ln_gain, dtype=np.float64)
        bias = np.zeros(d) if ln_bias is None else np.array(ln_bias, dtype=np.float64)
        return cls(w_down, w_up, gain, bias, scale)

    def copy(self) -> "AdapterParams":
        return copy.deepcopy(self)

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.MATRICES + self.VECTORS}


@dataclass
class ClassifierHead:
    weight: np.ndarray
    bias: np.ndarray
    class_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        self.class_ids = [int(c) for c in self.class_ids]
        if self.weight.ndim != 2 or self.weight.shape[0] != len(self.class_ids):
            raise ValueError("head weight rows must match class_ids")
        if self.bias.shape != (len(self.class_ids),):
            raise ValueError("head bias length must match class_ids")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("duplicate class ids in head")

    @classmethod
    def empty(cls, d: int) -> "ClassifierHead":
        return cls(np.zeros((0, d)), np.zeros(0), [])

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    def rows_of(self, class_ids) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.class_ids)}
        try:
            return np.array([index[int(c)] for c in class_ids], dtype=np.intp)
        except KeyError as exc:
            raise ValueError(f"class {exc.args[0]} not in head") from None

    def grow(self, new_ids) -> None:
        """Append zero-initialized rows for classes not yet present."""
        new_ids = [int(c) for c in new_ids if int(c) not in set(self.class_ids)]
        if not new_ids:
            return
        d = self.weight.shape[1]
        self.weight = np.vstack([self.weight, np.zeros((len(new_ids), d))])
        self.bias = np.concatenate([self.bias, np.zeros(len(new_ids))])
        self.class_ids = self.class_ids + new_ids


@dataclass
class ModelState:
    backbone: BackboneSpec
    adapter: AdapterParams
    head: ClassifierHead

    def __post_init__(self):
        d = self.backbone.feature_dim
        if self.adapter.dim != d:
            raise ValueError(f"adapter dim {self.adapter.dim} != feature_dim {d}")
        if self.head.weight.shape[1] != d:
            raise ValueError(f"head has {self.head.weight.shape[1]} columns, expected {d}")

    def adapters(self) -> list[AdapterParams]:
        """Adapter parameter sets held by the model (always exactly one)."""
        return [v for v in vars(self).values() if isinstance(v, AdapterParams)]


# --- forward ----------------------------------------------------------------

def backbone_forward(spec: BackboneSpec, x) -> np.ndarray:
    """tanh(P x + b). Accepts a single vector or a batch (rows)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"input has dim {x.shape[-1]}, backbone expects {spec.input_dim}")
    check_finite(x, "input")
    return np.tanh(x @ spec.projection.T + spec.offset)


def layer_norm(x, gain, bias) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ValueError("layer_norm needs at least 2 features")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ValueError("gain/bias length must match input")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * gain + bias


def gelu(u):
    return 0.5 * u * (1.0 + np.tanh(_GELU_C * (u + 0.044715 * u ** 3)))


def gelu_grad(u):
    inner = _GELU_C * (u + 0.044715 * u ** 3)
    th = np.tanh(inner)
    return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)


def adapter_forward(a: AdapterParams, x_in) -> np.ndarray:
    x_in = np.asarray(x_in, dtype=np.float64)
    if x_in.shape[-1] != a.dim:
        raise ValueError(f"adapter expects dim {a.dim}, got {x_in.shape[-1]}")
    check_finite(x_in, "adapter input")
    h = layer_norm(x_in, a.ln_gain, a.ln_bias) @ a.w_down.T
    return x_in + a.scale * (gelu(h) @ a.w_up.T)


def head_forward(h: ClassifierHead, f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != h.weight.shape[1]:
        raise ValueError(f"head expects dim {h.weight.shape[1]}, got {f.shape[-1]}")
    return f @ h.weight.T + h.bias


def logits(m: ModelState, x) -> np.ndarray:
    return head_forward(m.head, adapter_forward(m.adapter, backbone_forward(m.backbone, x)))


def predict(m: ModelState, x):
    """Predicted global class id(s); argmax ties go to the lowest head row."""
    if m.head.num_classes == 0:
        raise ValueError("cannot predict with an empty head")
    z = logits(m, x)
    ids = np.asarray(m.head.class_ids)
    if z.ndim == 1:
        return int(ids[np.argmax(z)])
    return ids[np.argmax(z, axis=1)]


# --- checkpoint -------------------------------------------------------------

def _checkpoint_tensors(m: ModelState) -> dict[str, np.ndarray]:
    a = m.adapter
    tensors = {
        "backbone.projection": m.backbone.projection,
        "backbone.offset": m.backbone.offset[None, :],
        "adapter.w_down": a.w_down,
        "adapter.w_up": a.w_up,
        "adapter.ln_gain": a.ln_gain[None, :],
        "adapter.ln_bias": a.ln_bias[None, :],
        "adapter.scale": np.array([[a.scale]]),
        # 64-bit seed split into 32-bit halves so it survives float text
        "backbone.seed": np.array([[float(m.backbone.seed >> 32), float(m.backbone.seed & 0xFFFFFFFF)]]),
    }
    if m.head.num_classes:
        tensors["head.weight"] = m.head.weight
        tensors["head.bias"] = m.head.bias[None, :]
        tensors["head.class_ids"] = np.array([m.head.class_ids], dtype=np.float64)
    return tensors


def save_checkpoint(m: ModelState, path) -> None:
    """Each tensor: manifest line ``name rows cols`` then the matrix text block."""
    chunks = []
    for name, t in _checkpoint_tensors(m).items():
        chunks.append(f"{name} {t.shape[0]} {t.shape[1]}\n")
        chunks.append(format_matrix(t))
    Path(path).write_text("".join(chunks))


def load_checkpoint(path) -> ModelState:
    tensors = {}
    with open(path) as fh:
        while line := fh.readline():
            if not line.strip():
                continue
            name, rows, cols = line.split()
            t = read_matrix(fh)
            if t.shape != (int(rows), int(cols)):
                raise ValueError(f"{path}: tensor {name} shape {t.shape} disagrees with manifest")
            tensors[name] = t
    proj = tensors["backbone.projection"]
    hi, lo = tensors["backbone.seed"][0]
    seed = (int(hi) << 32) | int(lo)
    backbone = BackboneSpec(proj.shape[1], proj.shape[0], seed, proj, tensors["backbone.offset"][0])
    adapter = AdapterParams(
        tensors["adapter.w_down"], tensors["adapter.w_up"],
        tensors["adapter.ln_gain"][0], tensors["adapter.ln_bias"][0],
        float(tensors["adapter.scale"][0, 0]),
    )
    if "head.weight" in tensors:
        head = ClassifierHead(tensors["head.weight"], tensors["head.bias"][0],
                              [int(c) for c in tensors["head.class_ids"][0]])
    else:
        head = ClassifierHead.empty(backbone.feature_dim)
    return ModelState(backbone, adapter, head)


def with_adapter(m: ModelState, adapter: AdapterParams) -> ModelState:
    return replace(m, adapter=adapter)
