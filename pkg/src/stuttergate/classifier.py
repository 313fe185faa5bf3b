"""Context-aware binary stutter classifier.

Two 1-D convolution blocks (conv along time, batch norm, ReLU) followed
by two fully-connected layers (affine + ReLU + batch norm, then affine +
sigmoid) over [71 x n_mels] log-mel context features.  Forward, backward
and the Adam update are written directly in numpy so the whole training
loop is deterministic for a given seed and the gradients can be checked
against central finite differences.

Parameters are float32 (checkpoints round-trip bit-exactly); compute
happens in a configurable dtype, float64 for gradient checks.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import features as feats
from . import metrics
from .errors import (
    DegenerateDataError,
    NumericFailureError,
    ShapeError,
    TrainingFailureError,
)
from .framing import AudioBuffer

DECISION_THRESHOLD = 0.5  # inclusive: posterior >= 0.5 means stutter


@dataclass(frozen=True)
class ClassifierConfig:
    n_mels: int = 64
    n_rows: int = 71
    conv1_channels: int = 32
    conv1_kernel: int = 5
    conv1_stride: int = 2
    conv2_channels: int = 64
    conv2_kernel: int = 3
    conv2_stride: int = 2
    fc1_width: int = 128
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 8
    seed: int = 0
    pos_weight: float | None = None  # None: n_neg / n_pos from the training labels


@dataclass
class TrainState:
    params: dict
    config: ClassifierConfig
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class PosteriorTrack:
    """Per-100ms-frame stutter posterior and the >= 0.5 decision."""

    posteriors: np.ndarray
    decisions: np.ndarray
    utterance_id: str = ""

    def __post_init__(self):
        p = np.asarray(self.posteriors, dtype=np.float64)
        d = np.asarray(self.decisions, dtype=np.uint8)
        if p.shape != d.shape:
            raise ShapeError("posteriors and decisions must be equally long")
        if np.any((p < 0) | (p > 1)):
            raise ShapeError("posteriors must lie in [0, 1]")
        if not np.array_equal(d, (p >= DECISION_THRESHOLD).astype(np.uint8)):
            raise ShapeError("decisions must equal (posterior >= 0.5)")
        object.__setattr__(self, "posteriors", p)
        object.__setattr__(self, "decisions", d)


LEARNABLE = (
    "conv1_w", "conv1_b", "bn1_gamma", "bn1_beta",
    "conv2_w", "conv2_b", "bn2_gamma", "bn2_beta",
    "fc1_w", "fc1_b", "bn3_gamma", "bn3_beta",
    "fc2_w", "fc2_b",
)
RUNNING = ("bn1_mean", "bn1_var", "bn2_mean", "bn2_var", "bn3_mean", "bn3_var")


def init_params(cfg: ClassifierConfig, rng: np.random.Generator) -> dict:
    def he(shape, fan_in):
        return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)

    c1, c2 = cfg.conv1_channels, cfg.conv2_channels
    p = {
        "conv1_w": he((c1, cfg.n_mels, cfg.conv1_kernel), cfg.n_mels * cfg.conv1_kernel),
        "conv1_b": np.zeros(c1, np.float32),
        "conv2_w": he((c2, c1, cfg.conv2_kernel), c1 * cfg.conv2_kernel),
        "conv2_b": np.zeros(c2, np.float32),
        "fc1_w": he((cfg.fc1_width, c2), c2),
        "fc1_b": np.zeros(cfg.fc1_width, np.float32),
        "fc2_w": he((1, cfg.fc1_width), cfg.fc1_width),
        "fc2_b": np.zeros(1, np.float32),
    }
    for i, width in (("1", c1), ("2", c2), ("3", cfg.fc1_width)):
        p[f"bn{i}_gamma"] = np.ones(width, np.float32)
        p[f"bn{i}_beta"] = np.zeros(width, np.float32)
        p[f"bn{i}_mean"] = np.zeros(width, np.float32)
        p[f"bn{i}_var"] = np.ones(width, np.float32)
    return p


def _check_finite(arr, layer):
    if not np.all(np.isfinite(arr)):
        raise NumericFailureError(f"non-finite activation in layer {layer!r}")


def _conv1d_fwd(x, w, b, stride):
    # x [B, C, T], w [O, C, K] -> y [B, O, T_out]
    k = w.shape[2]
    cols = np.lib.stride_tricks.sliding_window_view(x, k, axis=2)[:, :, ::stride, :]
    y = np.tensordot(cols, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    return y + b[None, :, None], cols


def _conv1d_bwd(dy, cols, w, x_shape, stride):
    dw = np.tensordot(dy, cols, axes=([0, 2], [0, 2]))  # [O, C, K]
    db = dy.sum(axis=(0, 2))
    dx = np.zeros(x_shape, dtype=dy.dtype)
    t_out = dy.shape[2]
    for k in range(w.shape[2]):
        contrib = np.tensordot(dy, w[:, :, k], axes=([1], [0]))  # [B, T_out, C]
        dx[:, :, k : k + stride * t_out : stride] += contrib.transpose(0, 2, 1)
    return dx, dw, db


def _bn_fwd(x2, p, name, eps, momentum, mode):
    # x2 [N, C]; returns (y2, cache). Train mode updates running stats in place.
    gamma = p[f"{name}_gamma"].astype(x2.dtype)
    beta = p[f"{name}_beta"].astype(x2.dtype)
    if mode == "train":
        mu = x2.mean(axis=0)
        var = x2.var(axis=0)  # biased, used for both normalization and running stats
        for key, stat in ((f"{name}_mean", mu), (f"{name}_var", var)):
            updated = (1.0 - momentum) * p[key].astype(np.float64) + momentum * stat.astype(np.float64)
            p[key] = updated.astype(np.float32)
    else:
        mu = p[f"{name}_mean"].astype(x2.dtype)
        var = p[f"{name}_var"].astype(x2.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x2 - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, mode)


def _bn_bwd(dy2, cache):
    xhat, inv_std, gamma, mode = cache
    dgamma = (dy2 * xhat).sum(axis=0)
    dbeta = dy2.sum(axis=0)
    dxhat = dy2 * gamma
    if mode == "train":
        dx2 = (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0)) * inv_std
    else:
        dx2 = dxhat * inv_std
    return dx2, dgamma, dbeta


def _to2d_channel(x):
    # [B, C, T] -> [B*T, C]
    return np.moveaxis(x, 1, 2).reshape(-1, x.shape[1])


def _from2d_channel(x2, shape):
    b, c, t = shape
    return np.moveaxis(x2.reshape(b, t, c), 2, 1)


def forward_batch(x, params, cfg: ClassifierConfig, mode: str = "eval",
                  dtype=np.float32, want_cache: bool = False):
    """Posterior for a batch of feature matrices x [B, n_rows, n_mels].

    Returns (posteriors [B] float64, cache or None).  Eval mode uses the
    running batch-norm statistics and is deterministic.
    """
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1:] != (cfg.n_rows, cfg.n_mels):
        raise ShapeError(
            f"expected features [B, {cfg.n_rows}, {cfg.n_mels}], got {x.shape}"
        )
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")

    x = x.astype(dtype).transpose(0, 2, 1)  # [B, n_mels, T]
    p = params
    w = {k: p[k].astype(dtype) for k in ("conv1_w", "conv1_b", "conv2_w", "conv2_b",
                                         "fc1_w", "fc1_b", "fc2_w", "fc2_b")}

    a1, cols1 = _conv1d_fwd(x, w["conv1_w"], w["conv1_b"], cfg.conv1_stride)
    _check_finite(a1, "conv1")
    n1_2d, bn1_cache = _bn_fwd(_to2d_channel(a1), p, "bn1", cfg.bn_eps, cfg.bn_momentum, mode)
    r1 = np.maximum(_from2d_channel(n1_2d, a1.shape), 0)

    a2, cols2 = _conv1d_fwd(r1, w["conv2_w"], w["conv2_b"], cfg.conv2_stride)
    _check_finite(a2, "conv2")
    n2_2d, bn2_cache = _bn_fwd(_to2d_channel(a2), p, "bn2", cfg.bn_eps, cfg.bn_momentum, mode)
    r2 = np.maximum(_from2d_channel(n2_2d, a2.shape), 0)

    g = r2.mean(axis=2)  # global average pool over time
    f1 = g @ w["fc1_w"].T + w["fc1_b"]
    _check_finite(f1, "fc1")
    rf = np.maximum(f1, 0)
    n3, bn3_cache = _bn_fwd(rf, p, "bn3", cfg.bn_eps, cfg.bn_momentum, mode)

    z = (n3 @ w["fc2_w"].T + w["fc2_b"]).reshape(-1)
    _check_finite(z, "fc2")
    logits = z.astype(np.float64)
    posterior = np.clip(1.0 / (1.0 + np.exp(-logits)),
                        np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))

    cache = None
    if want_cache:
        cache = {
            "x": x, "w": w, "cols1": cols1, "a1_shape": a1.shape, "bn1": bn1_cache,
            "r1": r1, "cols2": cols2, "a2_shape": a2.shape, "bn2": bn2_cache,
            "r2": r2, "g": g, "f1": f1, "rf": rf, "bn3": bn3_cache, "n3": n3,
            "logits": logits, "cfg": cfg, "dtype": dtype,
        }
    return posterior, cache


def forward(feature_matrix, state: TrainState, mode: str = "eval") -> float:
    """Posterior in (0, 1) for one [n_rows x n_mels] feature matrix."""
    data = feature_matrix.data if isinstance(feature_matrix, feats.FeatureMatrix) else feature_matrix
    posterior, _ = forward_batch(np.asarray(data)[None], state.params, state.config, mode)
    return float(posterior[0])


def backward_batch(cache, dlogits):
    """Gradients of the loss wrt all learnable parameters, given d loss/d logits."""
    cfg, dtype = cache["cfg"], cache["dtype"]
    w = cache["w"]
    grads = {}

    dz = np.asarray(dlogits, dtype=dtype).reshape(-1, 1)
    grads["fc2_w"] = dz.T @ cache["n3"]
    grads["fc2_b"] = dz.sum(axis=0)
    dn3 = dz @ w["fc2_w"]

    drf, grads["bn3_gamma"], grads["bn3_beta"] = _bn_bwd(dn3, cache["bn3"])
    df1 = drf * (cache["f1"] > 0)
    grads["fc1_w"] = df1.T @ cache["g"]
    grads["fc1_b"] = df1.sum(axis=0)
    dg = df1 @ w["fc1_w"]

    t2 = cache["r2"].shape[2]
    dr2 = np.repeat(dg[:, :, None], t2, axis=2) / t2
    dn2_2d = _to2d_channel(dr2 * (cache["r2"] > 0))
    da2_2d, grads["bn2_gamma"], grads["bn2_beta"] = _bn_bwd(dn2_2d, cache["bn2"])
    da2 = _from2d_channel(da2_2d, cache["a2_shape"])
    dr1, grads["conv2_w"], grads["conv2_b"] = _conv1d_bwd(
        da2, cache["cols2"], w["conv2_w"], cache["r1"].shape, cfg.conv2_stride)

    dn1_2d = _to2d_channel(dr1 * (cache["r1"] > 0))
    da1_2d, grads["bn1_gamma"], grads["bn1_beta"] = _bn_bwd(dn1_2d, cache["bn1"])
    da1 = _from2d_channel(da1_2d, cache["a1_shape"])
    _, grads["conv1_w"], grads["conv1_b"] = _conv1d_bwd(
        da1, cache["cols1"], w["conv1_w"], cache["x"].shape, cfg.conv1_stride)
    return grads


def bce_loss(logits, labels, pos_weight: float = 1.0):
    """Mean weighted binary cross-entropy from logits; returns (loss, dlogits)."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    softplus = np.where(z > 0, z + np.log1p(np.exp(-z)), np.log1p(np.exp(z)))
    per = pos_weight * y * (softplus - z) + (1.0 - y) * softplus
    p = 1.0 / (1.0 + np.exp(-z))
    dz = (pos_weight * y * (p - 1.0) + (1.0 - y) * p) / len(z)
    return float(per.mean()), dz


def loss_and_grads(x, y, params, cfg, mode="train", pos_weight=1.0, dtype=np.float32):
    posterior, cache = forward_batch(x, params, cfg, mode, dtype, want_cache=True)
    loss, dlogits = bce_loss(cache["logits"], y, pos_weight)
    grads = backward_batch(cache, dlogits)
    return loss, grads, posterior


def _adam_step(state: TrainState, grads: dict, tc: TrainConfig):
    state.step += 1
    b1, b2 = tc.beta1, tc.beta2
    bias1 = 1.0 - b1**state.step
    bias2 = 1.0 - b2**state.step
    for key in LEARNABLE:
        g = np.asarray(grads[key], dtype=np.float64)
        m = b1 * state.adam_m[key].astype(np.float64) + (1 - b1) * g
        v = b2 * state.adam_v[key].astype(np.float64) + (1 - b2) * g * g
        state.adam_m[key] = m.astype(np.float32)
        state.adam_v[key] = v.astype(np.float32)
        update = tc.lr * (m / bias1) / (np.sqrt(v / bias2) + tc.adam_eps)
        state.params[key] = (state.params[key].astype(np.float64) - update).astype(np.float32)


def train(dataset, cfg: ClassifierConfig = ClassifierConfig(),
          train_cfg: TrainConfig = TrainConfig(), val_set=None) -> TrainState:
    """Train on (features [N, n_rows, n_mels], labels [N]); deterministic per seed.

    History records per-epoch mean loss and PR-AUC (on val_set when given,
    else on the training set).  Divergence raises TrainingFailureError
    carrying the last epoch-boundary state.
    """
    x, y = dataset
    x = np.asarray(x)
    y = np.asarray(y).astype(np.uint8)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise DegenerateDataError("training data must contain both classes")
    pos_weight = train_cfg.pos_weight
    if pos_weight is None:
        pos_weight = (len(y) - n_pos) / n_pos

    rng = np.random.default_rng(train_cfg.seed)
    state = TrainState(params=init_params(cfg, rng), config=cfg)
    state.adam_m = {k: np.zeros_like(state.params[k]) for k in LEARNABLE}
    state.adam_v = {k: np.zeros_like(state.params[k]) for k in LEARNABLE}

    def snapshot():
        return TrainState(
            params={k: v.copy() for k, v in state.params.items()},
            config=cfg,
            adam_m={k: v.copy() for k, v in state.adam_m.items()},
            adam_v={k: v.copy() for k, v in state.adam_v.items()},
            step=state.step, epoch=state.epoch, history=list(state.history),
        )

    for epoch in range(train_cfg.epochs):
        last_good = snapshot()
        order = rng.permutation(len(y))
        losses = []
        for start in range(0, len(y), train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            loss, grads, _ = loss_and_grads(
                x[idx], y[idx], state.params, cfg, "train", pos_weight)
            if not np.isfinite(loss):
                raise TrainingFailureError(
                    f"loss became non-finite at epoch {epoch}", last_state=last_good)
            _adam_step(state, grads, train_cfg)
            losses.append(loss)
        state.epoch = epoch + 1

        ex, ey = (val_set if val_set is not None else (x, y))
        posts = predict_batch(ex, state)
        auc = metrics.pr_auc(posts, ey).pr_auc
        state.history.append(
            {"epoch": epoch + 1, "loss": float(np.mean(losses)), "pr_auc": auc})
    return state


def predict_batch(x, state: TrainState, batch_size: int = 256) -> np.ndarray:
    """Eval-mode posteriors for [N, n_rows, n_mels] features."""
    x = np.asarray(x)
    out = np.empty(len(x), dtype=np.float64)
    for start in range(0, len(x), batch_size):
        out[start : start + batch_size], _ = forward_batch(
            x[start : start + batch_size], state.params, state.config, "eval")
    return out


def predict_track(audio: AudioBuffer, state: TrainState,
                  mel_cfg=feats.MelConfig(), stft_cfg=feats.StftConfig(),
                  utterance_id: str = "") -> PosteriorTrack:
    """One posterior per 100 ms frame, from that frame's 9-frame context."""
    stack = feats.classifier_feature_stack(audio, mel_cfg, stft_cfg)
    posteriors = predict_batch(stack.astype(np.float32), state)
    return PosteriorTrack(
        posteriors=posteriors,
        decisions=(posteriors >= DECISION_THRESHOLD).astype(np.uint8),
        utterance_id=utterance_id,
    )


def grad_check(state: TrainState, feature_matrix, label, h: float = 1e-4) -> float:
    """Max relative error between analytic and central-FD gradients.

    Runs in eval mode (batch-norm frozen) and in float64.  Intended for
    small architectures; cost is two forward passes per parameter.
    """
    data = np.asarray(
        feature_matrix.data if isinstance(feature_matrix, feats.FeatureMatrix) else feature_matrix,
        dtype=np.float64,
    )[None]
    y = np.asarray([label], dtype=np.float64)
    cfg = state.config
    params64 = {k: v.astype(np.float64) for k, v in state.params.items()}

    _, grads, _ = loss_and_grads(data, y, params64, cfg, "eval", 1.0, np.float64)

    def loss_now():
        _, cache = forward_batch(data, params64, cfg, "eval", np.float64, want_cache=True)
        return bce_loss(cache["logits"], y)[0]

    worst = 0.0
    for key in LEARNABLE:
        flat = params64[key].reshape(-1)
        gflat = np.asarray(grads[key]).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_now()
            flat[idx] = orig - h
            down = loss_now()
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            an = gflat[idx]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-6))
    return worst


def save_state(path, state: TrainState) -> None:
    tensors = dict(state.params)
    tensors.update({f"adam_m.{k}": v for k, v in state.adam_m.items()})
    tensors.update({f"adam_v.{k}": v for k, v in state.adam_v.items()})
    arch = {"config": asdict(state.config), "step": state.step, "epoch": state.epoch}
    from .checkpoint import save_checkpoint

    save_checkpoint(path, "classifier", arch, tensors)


def load_state(path) -> TrainState:
    from .checkpoint import load_checkpoint

    kind, arch, tensors = load_checkpoint(path)
    if kind != "classifier":
        raise ShapeError(f"checkpoint holds a {kind!r} model, not a classifier")
    cfg = ClassifierConfig(**arch["config"])
    params = {k: v for k, v in tensors.items() if not k.startswith("adam_")}
    state = TrainState(params=params, config=cfg,
                       step=arch["step"], epoch=arch["epoch"])
    state.adam_m = {k[len("adam_m."):]: v for k, v in tensors.items() if k.startswith("adam_m.")}
    state.adam_v = {k[len("adam_v."):]: v for k, v in tensors.items() if k.startswith("adam_v.")}
    return state


def save_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "pr_auc"])
        for row in history:
            writer.writerow([row["epoch"], f"{row['loss']:.6f}", f"{row['pr_auc']:.6f}"])
