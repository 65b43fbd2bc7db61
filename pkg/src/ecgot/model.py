"""Multi-feature transformer classifier with hand-rolled reverse-mode gradients.

The 672-long feature vector is split into 28 tokens of width 24, embedded,
summed with sinusoidal positional encodings, passed through five identical
encoder layers (multi-head scaled dot-product attention and a two-layer
feed-forward block, each wrapped in residual + LayerNorm), then classified by
a 1-D convolution over the sequence axis, mean pooling, an affine map, and a
softmax. Everything is numpy; gradients are derived layer by layer and can be
verified against central finite differences via :func:`gradient_check`.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    DivergedTraining,
    InvalidArgument,
    NonFiniteActivation,
    NonFiniteLoss,
)
from .ingest import CLASS_NAMES

LAYER_NORM_EPS = 1e-5
CHECKPOINT_MAGIC = b"ECGOTCK1"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    feature_len: int = 672
    seq_len: int = 28
    d_model: int = 64
    n_layers: int = 5
    n_heads: int = 4
    d_k: int = 16
    d_v: int = 16
    d_ff: int = 128
    n_classes: int = 5
    dropout: float = 0.1
    conv_kernel: int = 3
    conv_channels: int = 32
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.d_model != self.n_heads * self.d_k:
            raise InvalidArgument("d_model must equal n_heads * d_k")
        if self.feature_len % self.seq_len != 0:
            raise InvalidArgument("seq_len must divide the feature length")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgument("dropout must be in [0, 1)")
        if self.conv_kernel < 1 or self.conv_kernel % 2 == 0:
            raise InvalidArgument("conv_kernel must be odd")

    @property
    def token_width(self) -> int:
        return self.feature_len // self.seq_len

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    val_fraction: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    class_names: tuple[str, ...] = field(default_factory=lambda: CLASS_NAMES)

    def __post_init__(self) -> None:
        if self.batch_size <= 0 or self.epochs <= 0:
            raise InvalidArgument("batch_size and epochs must be positive")
        if self.learning_rate < 0:
            raise InvalidArgument("learning_rate must be nonnegative")


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal encoding: sin at even columns, cos at odd, shared argument."""
    if d_model % 2 != 0:
        raise InvalidArgument("d_model must be even for the sin/cos pairing")
    pos = np.arange(seq_len)[:, None]
    i = np.arange(d_model // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d_model)
    pe = np.empty((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_k)) V with row-wise, max-shifted softmax."""
    q = np.asarray(q, dtype=np.float64) if not isinstance(q, np.ndarray) else q
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise InvalidArgument("attention shapes disagree")
    scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])
    return softmax(scores, axis=-1) @ v


def multi_head_attention(x: np.ndarray, layer_params: dict[str, np.ndarray]) -> np.ndarray:
    """Per-head projections, scaled dot-product attention, concat, output map.

    ``x`` may be (S, D) or batched (B, S, D); weights are ``w_q``/``w_k``/``w_v``
    of shape (h, D, d_k|d_v) and ``w_o`` of shape (h*d_v, D). No biases.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    w_q, w_k, w_v, w_o = (layer_params[k] for k in ("w_q", "w_k", "w_v", "w_o"))
    q = np.einsum("bsd,hdk->bhsk", x, w_q)
    k = np.einsum("bsd,hdk->bhsk", x, w_k)
    v = np.einsum("bsd,hdv->bhsv", x, w_v)
    heads = scaled_dot_attention(q, k, v)
    b, h, s, d_v = heads.shape
    concat = heads.transpose(0, 2, 1, 3).reshape(b, s, h * d_v)
    out = concat @ w_o
    return out[0] if squeeze else out


def _layer_norm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    x_hat = (x - mu) * inv_std
    return x_hat * gain + bias, (x_hat, inv_std)


def _layer_norm_backward(dout, cache, gain):
    x_hat, inv_std = cache
    dgain = (dout * x_hat).sum(axis=tuple(range(dout.ndim - 1)))
    dbias = dout.sum(axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * gain
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - x_hat * (dxhat * x_hat).mean(axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def _mha_forward(x, w_q, w_k, w_v, w_o):
    q = np.einsum("bsd,hdk->bhsk", x, w_q)
    k = np.einsum("bsd,hdk->bhsk", x, w_k)
    v = np.einsum("bsd,hdv->bhsv", x, w_v)
    scale = 1.0 / np.sqrt(w_q.shape[2])
    scores = np.einsum("bhsk,bhtk->bhst", q, k) * scale
    attn = softmax(scores, axis=-1)
    heads = np.einsum("bhst,bhtv->bhsv", attn, v)
    b, h, s, d_v = heads.shape
    concat = heads.transpose(0, 2, 1, 3).reshape(b, s, h * d_v)
    out = concat @ w_o
    cache = (x, q, k, v, attn, concat, scale)
    return out, cache


def _mha_backward(dout, cache, w_q, w_k, w_v, w_o):
    x, q, k, v, attn, concat, scale = cache
    b, s, _ = x.shape
    h, _, d_v = w_v.shape
    dw_o = np.einsum("bsc,bsd->cd", concat, dout)
    dconcat = dout @ w_o.T
    dheads = dconcat.reshape(b, s, h, d_v).transpose(0, 2, 1, 3)
    dattn = np.einsum("bhsv,bhtv->bhst", dheads, v)
    dv = np.einsum("bhst,bhsv->bhtv", attn, dheads)
    dscores = (dattn - (dattn * attn).sum(axis=-1, keepdims=True)) * attn
    dq = np.einsum("bhst,bhtk->bhsk", dscores, k) * scale
    dk = np.einsum("bhst,bhsk->bhtk", dscores, q) * scale
    dw_q = np.einsum("bsd,bhsk->hdk", x, dq)
    dw_k = np.einsum("bsd,bhsk->hdk", x, dk)
    dw_v = np.einsum("bsd,bhsv->hdv", x, dv)
    dx = (
        np.einsum("bhsk,hdk->bsd", dq, w_q)
        + np.einsum("bhsk,hdk->bsd", dk, w_k)
        + np.einsum("bhsv,hdv->bsd", dv, w_v)
    )
    return dx, dw_q, dw_k, dw_v, dw_o


def encoder_layer(
    x: np.ndarray, layer_params: dict[str, np.ndarray], layer_index: int = 0
) -> np.ndarray:
    """Residual LayerNorm around attention, then around the feed-forward block."""
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    attn = multi_head_attention(x, layer_params)
    y, _ = _layer_norm_forward(x + attn, layer_params["ln1_g"], layer_params["ln1_b"])
    hidden = np.maximum(y @ layer_params["ffn_w1"] + layer_params["ffn_b1"], 0.0)
    ffn = hidden @ layer_params["ffn_w2"] + layer_params["ffn_b2"]
    z, _ = _layer_norm_forward(y + ffn, layer_params["ln2_g"], layer_params["ln2_b"])
    if not np.isfinite(z).all():
        raise NonFiniteActivation(layer_index, "encoder output")
    return z[0] if squeeze else z


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded uniform init scaled by 1/sqrt(fan_in); biases zero, LN gains one."""
    rng = np.random.default_rng(seed)
    dt = config.np_dtype

    def uniform(shape, fan_in):
        limit = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-limit, limit, size=shape).astype(dt)

    d, h, dk, dv, dff = (
        config.d_model,
        config.n_heads,
        config.d_k,
        config.d_v,
        config.d_ff,
    )
    params: dict[str, np.ndarray] = {
        "emb_w": uniform((config.token_width, d), config.token_width),
        "emb_b": np.zeros(d, dtype=dt),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        params[p + "w_q"] = uniform((h, d, dk), d)
        params[p + "w_k"] = uniform((h, d, dk), d)
        params[p + "w_v"] = uniform((h, d, dv), d)
        params[p + "w_o"] = uniform((h * dv, d), h * dv)
        params[p + "ln1_g"] = np.ones(d, dtype=dt)
        params[p + "ln1_b"] = np.zeros(d, dtype=dt)
        params[p + "ffn_w1"] = uniform((d, dff), d)
        params[p + "ffn_b1"] = np.zeros(dff, dtype=dt)
        params[p + "ffn_w2"] = uniform((dff, d), dff)
        params[p + "ffn_b2"] = np.zeros(d, dtype=dt)
        params[p + "ln2_g"] = np.ones(d, dtype=dt)
        params[p + "ln2_b"] = np.zeros(d, dtype=dt)
    params["conv_w"] = uniform(
        (config.conv_kernel, d, config.conv_channels), config.conv_kernel * d
    )
    params["conv_b"] = np.zeros(config.conv_channels, dtype=dt)
    params["out_w"] = uniform((config.conv_channels, config.n_classes), config.conv_channels)
    params["out_b"] = np.zeros(config.n_classes, dtype=dt)
    return params


def audit_shapes(params: dict[str, np.ndarray], config: ModelConfig) -> None:
    """Verify every tensor has exactly its contracted shape; raises otherwise."""
    d, h, dk, dv, dff = (
        config.d_model,
        config.n_heads,
        config.d_k,
        config.d_v,
        config.d_ff,
    )
    expected: dict[str, tuple[int, ...]] = {
        "emb_w": (config.token_width, d),
        "emb_b": (d,),
        "conv_w": (config.conv_kernel, d, config.conv_channels),
        "conv_b": (config.conv_channels,),
        "out_w": (config.conv_channels, config.n_classes),
        "out_b": (config.n_classes,),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        expected[p + "w_q"] = (h, d, dk)
        expected[p + "w_k"] = (h, d, dk)
        expected[p + "w_v"] = (h, d, dv)
        expected[p + "w_o"] = (h * dv, d)
        expected[p + "ln1_g"] = (d,)
        expected[p + "ln1_b"] = (d,)
        expected[p + "ffn_w1"] = (d, dff)
        expected[p + "ffn_b1"] = (dff,)
        expected[p + "ffn_w2"] = (dff, d)
        expected[p + "ffn_b2"] = (d,)
        expected[p + "ln2_g"] = (d,)
        expected[p + "ln2_b"] = (d,)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise InvalidArgument(f"parameter names mismatch: missing {missing}, extra {extra}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise InvalidArgument(
                f"{name}: shape {params[name].shape}, expected {shape}"
            )


# ---------------------------------------------------------------------------
# full forward / backward
# ---------------------------------------------------------------------------


def _dropout_mask(shape, p, rng, dt):
    if p <= 0.0 or rng is None:
        return None
    return (rng.random(shape) >= p).astype(dt) / (1.0 - p)


def _forward_full(x, params, config: ModelConfig, dropout_rng=None):
    dt = config.np_dtype
    x = np.asarray(x, dtype=dt)
    if x.ndim != 2 or x.shape[1] != config.feature_len:
        raise InvalidArgument(
            f"expected (batch, {config.feature_len}) features, got {x.shape}"
        )
    b = x.shape[0]
    s, w = config.seq_len, config.token_width
    tokens = x.reshape(b, s, w)
    pe = positional_encoding(s, config.d_model).astype(dt)
    z = tokens @ params["emb_w"] + params["emb_b"] + pe
    mask_emb = _dropout_mask(z.shape, config.dropout, dropout_rng, dt)
    if mask_emb is not None:
        z = z * mask_emb
    caches = {"tokens": tokens, "mask_emb": mask_emb, "layers": []}
    for i in range(config.n_layers):
        p = f"layers.{i}."
        attn_out, mha_cache = _mha_forward(
            z, params[p + "w_q"], params[p + "w_k"], params[p + "w_v"], params[p + "w_o"]
        )
        mask_attn = _dropout_mask(attn_out.shape, config.dropout, dropout_rng, dt)
        if mask_attn is not None:
            attn_out = attn_out * mask_attn
        y, ln1_cache = _layer_norm_forward(
            z + attn_out, params[p + "ln1_g"], params[p + "ln1_b"]
        )
        hidden_pre = y @ params[p + "ffn_w1"] + params[p + "ffn_b1"]
        hidden = np.maximum(hidden_pre, 0.0)
        ffn_out = hidden @ params[p + "ffn_w2"] + params[p + "ffn_b2"]
        mask_ffn = _dropout_mask(ffn_out.shape, config.dropout, dropout_rng, dt)
        if mask_ffn is not None:
            ffn_out = ffn_out * mask_ffn
        z_next, ln2_cache = _layer_norm_forward(
            y + ffn_out, params[p + "ln2_g"], params[p + "ln2_b"]
        )
        if not np.isfinite(z_next).all():
            raise NonFiniteActivation(i, "encoder output")
        caches["layers"].append(
            (z, mha_cache, mask_attn, ln1_cache, y, hidden_pre, hidden, mask_ffn, ln2_cache)
        )
        z = z_next
    pad = config.conv_kernel // 2
    zp = np.pad(z, ((0, 0), (pad, pad), (0, 0)))
    conv = np.zeros((b, s, config.conv_channels), dtype=dt)
    for t in range(config.conv_kernel):
        conv += zp[:, t : t + s, :] @ params["conv_w"][t]
    conv += params["conv_b"]
    pooled = conv.mean(axis=1)
    logits = pooled @ params["out_w"] + params["out_b"]
    probs = softmax(logits, axis=-1)
    caches.update({"z_final": z, "zp": zp, "pooled": pooled, "probs": probs})
    return probs, caches


def forward(x, params, config: ModelConfig) -> np.ndarray:
    """Class probabilities, (batch, n_classes); dropout inactive."""
    probs, _ = _forward_full(x, params, config, dropout_rng=None)
    return probs


def loss_and_gradients(
    x,
    labels,
    params: dict[str, np.ndarray],
    config: ModelConfig,
    dropout_rng=None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy and its gradient for every parameter tensor."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= config.n_classes:
        raise InvalidArgument("labels out of range")
    probs, caches = _forward_full(x, params, config, dropout_rng)
    b = probs.shape[0]
    eps = np.finfo(probs.dtype).tiny
    loss = float(-np.log(probs[np.arange(b), labels] + eps).mean())
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")

    grads: dict[str, np.ndarray] = {}
    s = config.seq_len
    pad = config.conv_kernel // 2
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    grads["out_w"] = caches["pooled"].T @ dlogits
    grads["out_b"] = dlogits.sum(axis=0)
    dpooled = dlogits @ params["out_w"].T
    dconv = np.repeat(dpooled[:, None, :], s, axis=1) / s
    grads["conv_b"] = dconv.sum(axis=(0, 1))
    dzp = np.zeros_like(caches["zp"])
    grads["conv_w"] = np.zeros_like(params["conv_w"])
    zp = caches["zp"]
    for t in range(config.conv_kernel):
        grads["conv_w"][t] = np.einsum("bsd,bso->do", zp[:, t : t + s, :], dconv)
        dzp[:, t : t + s, :] += dconv @ params["conv_w"][t].T
    dz = dzp[:, pad : pad + s, :]

    for i in reversed(range(config.n_layers)):
        p = f"layers.{i}."
        (z_in, mha_cache, mask_attn, ln1_cache, y, hidden_pre, hidden, mask_ffn, ln2_cache) = caches[
            "layers"
        ][i]
        dr2, dg2, db2 = _layer_norm_backward(dz, ln2_cache, params[p + "ln2_g"])
        grads[p + "ln2_g"] = dg2
        grads[p + "ln2_b"] = db2
        dffn = dr2 if mask_ffn is None else dr2 * mask_ffn
        grads[p + "ffn_w2"] = np.einsum("bsf,bsd->fd", hidden, dffn)
        grads[p + "ffn_b2"] = dffn.sum(axis=(0, 1))
        dhidden = (dffn @ params[p + "ffn_w2"].T) * (hidden_pre > 0)
        grads[p + "ffn_w1"] = np.einsum("bsd,bsf->df", y, dhidden)
        grads[p + "ffn_b1"] = dhidden.sum(axis=(0, 1))
        dy = dr2 + dhidden @ params[p + "ffn_w1"].T
        dr1, dg1, db1 = _layer_norm_backward(dy, ln1_cache, params[p + "ln1_g"])
        grads[p + "ln1_g"] = dg1
        grads[p + "ln1_b"] = db1
        dattn = dr1 if mask_attn is None else dr1 * mask_attn
        dz_mha, dwq, dwk, dwv, dwo = _mha_backward(
            dattn, mha_cache, params[p + "w_q"], params[p + "w_k"], params[p + "w_v"], params[p + "w_o"]
        )
        grads[p + "w_q"] = dwq
        grads[p + "w_k"] = dwk
        grads[p + "w_v"] = dwv
        grads[p + "w_o"] = dwo
        dz = dr1 + dz_mha

    if caches["mask_emb"] is not None:
        dz = dz * caches["mask_emb"]
    grads["emb_w"] = np.einsum("bsw,bsd->wd", caches["tokens"], dz)
    grads["emb_b"] = dz.sum(axis=(0, 1))
    return loss, grads


def gradient_check(
    x,
    labels,
    params: dict[str, np.ndarray],
    config: ModelConfig,
    step: float = 1e-4,
) -> dict[str, float]:
    """Relative error between analytic gradients and central finite differences.

    The reference side evaluates only the forward loss, so it is independent
    of the backward pass it verifies. Dropout must be disabled.
    """
    if config.dropout != 0.0:
        raise InvalidArgument("gradient_check requires dropout=0")

    def loss_only() -> float:
        probs, _ = _forward_full(x, params, config, dropout_rng=None)
        b = probs.shape[0]
        return float(-np.log(probs[np.arange(b), np.asarray(labels)]).mean())

    _, grads = loss_and_gradients(x, labels, params, config)
    errors: dict[str, float] = {}
    for name, tensor in params.items():
        numeric = np.zeros_like(tensor)
        flat = tensor.ravel()
        num_flat = numeric.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss_only()
            flat[idx] = orig - step
            down = loss_only()
            flat[idx] = orig
            num_flat[idx] = (up - down) / (2 * step)
        denom = max(np.linalg.norm(numeric), np.linalg.norm(grads[name]), 1e-12)
        errors[name] = float(np.linalg.norm(numeric - grads[name]) / denom)
    return errors


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def evaluate_accuracy(x, labels, params, config: ModelConfig, batch_size: int = 512) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    correct = 0
    for start in range(0, x.shape[0], batch_size):
        probs = forward(x[start : start + batch_size], params, config)
        correct += int((probs.argmax(axis=1) == labels[start : start + batch_size]).sum())
    return correct / labels.size


def train(
    x: np.ndarray,
    labels: np.ndarray,
    model_config: ModelConfig,
    train_config: TrainConfig,
) -> tuple[dict[str, np.ndarray], list[tuple[int, float, float]]]:
    """Adam mini-batch training; returns the best-validation parameters.

    The validation split is carved from the input deterministically from the
    seed. The log holds one (epoch, train_loss, val_accuracy) row per epoch.
    """
    x = np.asarray(x, dtype=model_config.np_dtype)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    if n == 0:
        raise InvalidArgument("empty training set")
    params = init_params(model_config, train_config.seed)
    audit_shapes(params, model_config)
    rng = np.random.default_rng(train_config.seed)
    dropout_rng = (
        np.random.default_rng([train_config.seed, 7]) if model_config.dropout > 0 else None
    )

    perm = rng.permutation(n)
    n_val = int(round(train_config.val_fraction * n))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        raise InvalidArgument("validation fraction leaves no training data")
    x_val, y_val = x[val_idx], labels[val_idx]
    x_tr, y_tr = x[train_idx], labels[train_idx]

    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(vv) for k, vv in params.items()}
    t_step = 0
    log: list[tuple[int, float, float]] = []
    best_params = {k: p.copy() for k, p in params.items()}
    best_val = -np.inf
    lr, b1, b2, eps = (
        train_config.learning_rate,
        train_config.beta1,
        train_config.beta2,
        train_config.adam_eps,
    )
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(x_tr.shape[0])
        total_loss = 0.0
        for start in range(0, order.size, train_config.batch_size):
            batch = order[start : start + train_config.batch_size]
            loss, grads = loss_and_gradients(
                x_tr[batch], y_tr[batch], params, model_config, dropout_rng
            )
            total_loss += loss * batch.size
            t_step += 1
            correction = np.sqrt(1.0 - b2**t_step) / (1.0 - b1**t_step)
            for name, grad in grads.items():
                m[name] = b1 * m[name] + (1 - b1) * grad
                v[name] = b2 * v[name] + (1 - b2) * grad * grad
                params[name] = params[name] - lr * correction * m[name] / (
                    np.sqrt(v[name]) + eps
                )
        train_loss = total_loss / order.size
        if not np.isfinite(train_loss) or train_loss > 1e3:
            raise DivergedTraining(f"loss {train_loss} at epoch {epoch}", log)
        if val_idx.size:
            val_acc = evaluate_accuracy(x_val, y_val, params, model_config)
        else:
            val_acc = evaluate_accuracy(x_tr, y_tr, params, model_config)
        log.append((epoch, float(train_loss), float(val_acc)))
        if val_acc > best_val:
            best_val = val_acc
            best_params = {k: p.copy() for k, p in params.items()}
    return best_params, log


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------


def save_checkpoint(
    path,
    params: dict[str, np.ndarray],
    config: ModelConfig,
    meta: dict | None = None,
) -> None:
    """Versioned binary: magic, config/meta JSON header, named float32 tensors."""
    header = {"model_config": config.__dict__, "meta": meta or {}}
    header_bytes = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes)))
    buf.write(header_bytes)
    buf.write(struct.pack("<I", len(params)))
    for name in sorted(params):
        tensor = np.ascontiguousarray(params[name], dtype="<f4")
        name_b = name.encode()
        buf.write(struct.pack("<H", len(name_b)))
        buf.write(name_b)
        buf.write(struct.pack("<B", tensor.ndim))
        for dim in tensor.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(tensor.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    raw = open(path, "rb").read()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise InvalidArgument("not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from("<II", raw, off)
    if version != CHECKPOINT_VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {version}")
    off += 8
    header = json.loads(raw[off : off + header_len].decode())
    off += header_len
    config = ModelConfig(**header["model_config"])
    (n_tensors,) = struct.unpack_from("<I", raw, off)
    off += 4
    params: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        tensor = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
        off += 4 * count
        params[name] = tensor.astype(config.np_dtype)
    return params, config, header["meta"]


def clone_config(config: ModelConfig, **overrides) -> ModelConfig:
    return replace(config, **overrides)
