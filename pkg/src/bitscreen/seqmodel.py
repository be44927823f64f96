"""Multi-scale 1D CNN over the byte segment, fused with the standardized
statistical vector into a single-logit Trojan detector.

Per scale: same-padded conv -> ReLU -> global max pool. The pooled channels
are concatenated and projected to the embedding, which is concatenated with
the z-scored feature vector and fed to a logistic head. Backprop is written
out by hand; :func:`grad_check` compares it against central differences.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bitstream import SEGMENT_LEN, Segment
from .features import N_FEATURES, FeatureVector

NN_MAGIC = b"BLNN0001"


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ConvSpec:
    kernel_sizes: tuple[int, ...] = (3, 7, 15)
    channels_per_scale: int = 8
    embedding_dim: int = 64

    def __post_init__(self):
        if not self.kernel_sizes or any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ModelError("kernel sizes must be odd and >= 1")
        if self.channels_per_scale < 1 or self.embedding_dim < 1:
            raise ModelError("dimensions must be >= 1")

    @classmethod
    def full_scale(cls) -> "ConvSpec":
        return cls(embedding_dim=512)

    @property
    def pooled_dim(self) -> int:
        return len(self.kernel_sizes) * self.channels_per_scale


@dataclass
class HybridModel:
    spec: ConvSpec
    params: dict[str, np.ndarray]
    scaler_mean: np.ndarray | None = None
    scaler_std: np.ndarray | None = None

    def param_names(self) -> list[str]:
        return list(self.params)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "HybridModel":
        return HybridModel(
            self.spec,
            {k: v.copy() for k, v in self.params.items()},
            None if self.scaler_mean is None else self.scaler_mean.copy(),
            None if self.scaler_std is None else self.scaler_std.copy(),
        )

    # -- serialization ---------------------------------------------------------

    def to_bytes(self) -> bytes:
        s = self.spec
        out = [NN_MAGIC, struct.pack("<I", len(s.kernel_sizes))]
        out.append(struct.pack(f"<{len(s.kernel_sizes)}I", *s.kernel_sizes))
        out.append(struct.pack("<II", s.channels_per_scale, s.embedding_dim))
        tensors = dict(self.params)
        if self.scaler_mean is not None:
            tensors["scaler_mean"] = self.scaler_mean
            tensors["scaler_std"] = self.scaler_std
        out.append(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            key = name.encode()
            arr = np.asarray(arr, dtype="<f8")
            out.append(struct.pack("<H", len(key)) + key)
            out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(arr.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "HybridModel":
        if blob[:8] != NN_MAGIC:
            raise ModelError("not a model checkpoint")
        try:
            off = 8
            (n_k,) = struct.unpack_from("<I", blob, off)
            off += 4
            kernels = struct.unpack_from(f"<{n_k}I", blob, off)
            off += 4 * n_k
            channels, emb = struct.unpack_from("<II", blob, off)
            off += 8
            (n_t,) = struct.unpack_from("<I", blob, off)
            off += 4
            tensors = {}
            for _ in range(n_t):
                (klen,) = struct.unpack_from("<H", blob, off)
                off += 2
                name = blob[off : off + klen].decode()
                off += klen
                (ndim,) = struct.unpack_from("<I", blob, off)
                off += 4
                shape = struct.unpack_from(f"<{ndim}I", blob, off)
                off += 4 * ndim
                count = math.prod(shape)
                tensors[name] = (
                    np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
                )
                off += 8 * count
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise ModelError(f"corrupt model checkpoint: {exc}") from exc
        if off != len(blob):
            raise ModelError("trailing bytes in model checkpoint")
        spec = ConvSpec(tuple(kernels), channels, emb)
        mean = tensors.pop("scaler_mean", None)
        std = tensors.pop("scaler_std", None)
        model = cls(spec, tensors, mean, std)
        expected = init_params(spec, 0)
        if set(tensors) != set(expected) or any(tensors[k].shape != expected[k].shape for k in expected):
            raise ModelError("checkpoint tensors do not match its ConvSpec")
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "HybridModel":
        return cls.from_bytes(Path(path).read_bytes())


def init_params(spec: ConvSpec, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for i, k in enumerate(spec.kernel_sizes):
        params[f"conv{i}_w"] = rng.normal(0.0, math.sqrt(2.0 / k), (spec.channels_per_scale, k))
        params[f"conv{i}_b"] = np.zeros(spec.channels_per_scale)
    fan_in = spec.pooled_dim
    params["proj_w"] = rng.normal(0.0, math.sqrt(1.0 / fan_in), (spec.embedding_dim, fan_in))
    params["proj_b"] = np.zeros(spec.embedding_dim)
    params["head_w"] = rng.normal(0.0, 0.01, spec.embedding_dim + N_FEATURES)
    params["head_b"] = np.zeros(1)
    return params


def new_model(spec: ConvSpec = ConvSpec(), seed: int = 0) -> HybridModel:
    return HybridModel(spec, init_params(spec, seed))


# --- forward / backward -------------------------------------------------------

def normalize_bytes(x) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype != np.uint8:
        raise ModelError("segment bytes must be uint8")
    return x.astype(np.float64) / 255.0


def _as_batch(segs) -> np.ndarray:
    if isinstance(segs, Segment):
        segs = [segs]
    if isinstance(segs, np.ndarray):
        arr = segs if segs.ndim == 2 else segs[None, :]
    else:
        arr = np.stack([s.as_array() if isinstance(s, Segment) else np.asarray(s, dtype=np.uint8) for s in segs])
    if arr.shape[1] != SEGMENT_LEN:
        raise ModelError(f"segments must be {SEGMENT_LEN} bytes, got {arr.shape[1]}")
    return arr


def _windows(x: np.ndarray, k: int) -> np.ndarray:
    half = k // 2
    padded = np.pad(x, ((0, 0), (half, half)))
    # contiguous copy: BLAS on the strided view is markedly slower
    return np.ascontiguousarray(sliding_window_view(padded, k, axis=1))  # (B, T, k)


def _embed(model: HybridModel, x: np.ndarray):
    spec, p = model.spec, model.params
    pooled, cache = [], []
    for i, k in enumerate(spec.kernel_sizes):
        win = _windows(x, k)
        B, T, _ = win.shape
        z = (win.reshape(B * T, k) @ p[f"conv{i}_w"].T).reshape(B, T, -1) + p[f"conv{i}_b"]
        arg = np.argmax(z, axis=1)  # (B, C)
        zmax = np.take_along_axis(z, arg[:, None, :], axis=1)[:, 0, :]
        pooled.append(np.maximum(zmax, 0.0))
        cache.append((win, arg, zmax))
    h = np.concatenate(pooled, axis=1)
    e = h @ p["proj_w"].T + p["proj_b"]
    return e, h, cache


def standardize(model: HybridModel, fv: np.ndarray) -> np.ndarray:
    if model.scaler_mean is None or model.scaler_std is None:
        raise ModelError("feature scaler missing; vectors must be standardized")
    fv = np.atleast_2d(fv)
    if fv.shape[1] != N_FEATURES:
        raise ModelError(f"expected {N_FEATURES} features, got {fv.shape[1]}")
    return (fv - model.scaler_mean) / model.scaler_std


def forward(model: HybridModel, x: np.ndarray, f: np.ndarray):
    """Logits for normalized bytes ``x`` (B, T) and standardized features ``f`` (B, 278)."""
    e, h, cache = _embed(model, x)
    u = np.concatenate([e, f], axis=1)
    logit = u @ model.params["head_w"] + model.params["head_b"][0]
    return logit, (u, h, cache)


def bce(logit: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, logit) - y * logit


def sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def loss_and_grads(model: HybridModel, x, f, y):
    """Mean binary cross-entropy over the batch and its gradient per parameter."""
    spec, p = model.spec, model.params
    logit, (u, h, cache) = forward(model, x, f)
    loss = float(bce(logit, y).mean())
    B = x.shape[0]
    dlogit = (sigmoid(logit) - y) / B
    g = {"head_w": u.T @ dlogit, "head_b": np.array([dlogit.sum()])}
    de = np.outer(dlogit, p["head_w"][: spec.embedding_dim])
    g["proj_w"] = de.T @ h
    g["proj_b"] = de.sum(axis=0)
    dh = de @ p["proj_w"]
    C = spec.channels_per_scale
    rows = np.arange(B)[:, None]
    for i, (win, arg, zmax) in enumerate(cache):
        dz = dh[:, i * C : (i + 1) * C] * (zmax > 0)  # (B, C)
        picked = win[rows, arg]  # (B, C, k): window at each channel's argmax
        g[f"conv{i}_w"] = np.einsum("bc,bck->ck", dz, picked)
        g[f"conv{i}_b"] = dz.sum(axis=0)
    return loss, {k: g[k] for k in p}


def embed(seg, model: HybridModel) -> np.ndarray:
    x = normalize_bytes(_as_batch(seg))
    e, _, _ = _embed(model, x)
    return e[0] if e.shape[0] == 1 else e


def predict_proba(model: HybridModel, segs, fvs) -> np.ndarray:
    x = normalize_bytes(_as_batch(segs))
    if isinstance(fvs, FeatureVector):
        fvs = fvs.values
    elif isinstance(fvs, (list, tuple)) and fvs and isinstance(fvs[0], FeatureVector):
        fvs = np.stack([v.values for v in fvs])
    f = standardize(model, np.asarray(fvs, dtype=np.float64))
    if f.shape[0] != x.shape[0]:
        raise ModelError("segment / feature batch size mismatch")
    out = []
    for lo in range(0, x.shape[0], 64):
        logit, _ = forward(model, x[lo : lo + 64], f[lo : lo + 64])
        out.append(sigmoid(logit))
    return np.concatenate(out)


def predict(seg, fv, model: HybridModel) -> float:
    return float(predict_proba(model, seg, fv)[0])


# --- training -----------------------------------------------------------------

@dataclass
class SeqDataset:
    x: np.ndarray  # (N, 4096) uint8
    fv: np.ndarray  # (N, 278)
    y: np.ndarray  # (N,) 0/1

    def __len__(self) -> int:
        return int(self.y.size)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainLog:
    epoch_loss: list[float] = field(default_factory=list)


def fit_scaler(fv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = fv.mean(axis=0)
    std = fv.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


def train(data: SeqDataset, spec: ConvSpec = ConvSpec(), hyper: TrainConfig = TrainConfig(), model: HybridModel | None = None):
    """Adam on mean BCE over shuffled minibatches. Returns (model, log); the
    log holds the full-dataset loss after each epoch."""
    y = np.asarray(data.y, dtype=np.float64)
    if np.unique(y).size < 2:
        raise ModelError("training data needs both classes")
    model = model.copy() if model is not None else new_model(spec, hyper.seed)
    model.scaler_mean, model.scaler_std = fit_scaler(np.asarray(data.fv, dtype=np.float64))
    x_all = normalize_bytes(data.x)
    f_all = standardize(model, data.fv)
    rng = np.random.default_rng([hyper.seed, 1])
    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v = {k: np.zeros_like(v) for k, v in model.params.items()}
    t = 0
    log = TrainLog()
    n = len(y)
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo : lo + hyper.batch_size]
            _, grads = loss_and_grads(model, x_all[idx], f_all[idx], y[idx])
            t += 1
            for k, g in grads.items():
                m[k] = hyper.beta1 * m[k] + (1 - hyper.beta1) * g
                v[k] = hyper.beta2 * v[k] + (1 - hyper.beta2) * g * g
                mhat = m[k] / (1 - hyper.beta1**t)
                vhat = v[k] / (1 - hyper.beta2**t)
                model.params[k] = model.params[k] - hyper.lr * mhat / (np.sqrt(vhat) + hyper.eps)
        log.epoch_loss.append(dataset_loss(model, x_all, f_all, y))
    return model, log


def dataset_loss(model: HybridModel, x, f, y, chunk: int = 64) -> float:
    total = 0.0
    for lo in range(0, len(y), chunk):
        logit, _ = forward(model, x[lo : lo + chunk], f[lo : lo + chunk])
        total += float(bce(logit, y[lo : lo + chunk]).sum())
    return total / len(y)


def grad_check(
    model: HybridModel,
    x,
    fv,
    y,
    n_params: int = 100,
    h: float = 1e-4,
    seed: int = 0,
    only: tuple[str, ...] | None = None,
) -> float:
    """Max relative error between backprop and central differences over a
    random sample of scalar parameters.

    The default step sits at the top of the allowed range: parameters with
    near-zero gradients (~1e-7) are roundoff-limited at smaller steps.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ModelError("finite-difference step must be in [1e-6, 1e-4]")
    x = normalize_bytes(_as_batch(x))
    f = standardize(model, np.asarray(fv, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    _, grads = loss_and_grads(model, x, f, y)
    names = [k for k in model.params if only is None or k in only]
    sizes = np.array([model.params[k].size for k in names])
    rng = np.random.default_rng(seed)
    flat = rng.choice(int(sizes.sum()), size=min(n_params, int(sizes.sum())), replace=False)
    bounds = np.cumsum(sizes)
    worst = 0.0
    for j in flat:
        ti = int(np.searchsorted(bounds, j, side="right"))
        name = names[ti]
        local = int(j - (bounds[ti - 1] if ti else 0))
        param = model.params[name].reshape(-1)
        orig = param[local]
        param[local] = orig + h
        up = float(bce(forward(model, x, f)[0], y).mean())
        param[local] = orig - h
        down = float(bce(forward(model, x, f)[0], y).mean())
        param[local] = orig
        numeric = (up - down) / (2 * h)
        analytic = float(grads[name].reshape(-1)[local])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-12)
        worst = max(worst, err)
    return worst
