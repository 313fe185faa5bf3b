"""Desk-scale RNN transducer: the downstream consumer of gated streams.

Encoder and prediction networks are single-layer tanh RNNs; the joint
network combines them as tanh(W_zt h_enc + W_zu h_pred + b_z) followed by
an affine projection and a softmax over tokens plus blank (index 0).  The
loss is the standard negative log-likelihood of the target sequence,
summed over all monotone alignments by the forward recursion in
stuttergate.lattice; gradients flow through the transition occupancies
and plain backprop-through-time.

Everything is numpy with float32 parameters and float64 compute, so
training is deterministic per seed and checkpoints round-trip bit-exactly.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from . import lattice
from .errors import DomainError, EmptyInputError, ShapeError, TrainingFailureError

BLANK = 0


@dataclass(frozen=True)
class TransducerConfig:
    input_dim: int
    vocab: tuple[str, ...]
    enc_hidden: int = 64
    pred_hidden: int = 64
    joint_dim: int = 64
    # Affine feature normalization applied before the encoder.
    input_shift: float = 12.0
    input_scale: float = 8.0
    # When set, the last input column is a binary stutter flag recoded to
    # {-0.5, +0.5} instead of being normalized like a mel value.
    flag_input: bool = False
    emission_cap: int = 5

    @property
    def n_tokens(self) -> int:
        return len(self.vocab)

    @property
    def n_out(self) -> int:
        return len(self.vocab) + 1  # tokens plus blank


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0


@dataclass
class TransducerState:
    params: dict
    config: TransducerConfig
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    score: float


PARAM_KEYS = ("enc_wx", "enc_wh", "enc_b", "pred_emb", "pred_wh", "pred_b",
              "w_zt", "w_zu", "b_z", "w_out", "b_out")


def init_params(cfg: TransducerConfig, rng: np.random.Generator) -> dict:
    def mat(shape, fan_in):
        return (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(np.float32)

    h, p, j, v = cfg.enc_hidden, cfg.pred_hidden, cfg.joint_dim, cfg.n_out
    return {
        "enc_wx": mat((h, cfg.input_dim), cfg.input_dim),
        "enc_wh": mat((h, h), h),
        "enc_b": np.zeros(h, np.float32),
        "pred_emb": mat((v, p), p),  # row 0 doubles as the start-of-sequence input
        "pred_wh": mat((p, p), p),
        "pred_b": np.zeros(p, np.float32),
        "w_zt": mat((j, h), h),
        "w_zu": mat((j, p), p),
        "b_z": np.zeros(j, np.float32),
        "w_out": mat((v, j), j),
        "b_out": np.zeros(v, np.float32),
    }


def encode_transcript(text: str, vocab) -> list[int]:
    """Token ids (1-based; 0 is blank) for a whitespace transcript."""
    lookup = {tok: i + 1 for i, tok in enumerate(vocab)}
    try:
        return [lookup[t] for t in text.split()]
    except KeyError as exc:
        raise DomainError(f"transcript token {exc.args[0]!r} not in vocabulary") from exc


def decode_tokens(token_ids, vocab) -> str:
    return " ".join(vocab[i - 1] for i in token_ids)


def normalize_features(x, cfg: TransducerConfig) -> np.ndarray:
    """Affine input normalization; binary flag column recoded to +-0.5."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ShapeError(f"expected features [T, {cfg.input_dim}], got {x.shape}")
    if cfg.flag_input:
        out = np.empty_like(x)
        out[:, :-1] = (x[:, :-1] + cfg.input_shift) / cfg.input_scale
        out[:, -1] = x[:, -1] - 0.5
        return out
    return (x + cfg.input_shift) / cfg.input_scale


def _p64(params) -> dict:
    return {k: params[k].astype(np.float64) for k in PARAM_KEYS}


def _rnn_forward(x, wx, wh, b):
    T, H = len(x), len(b)
    hs = np.zeros((T, H))
    pre = x @ wx.T + b
    h = np.zeros(H)
    for t in range(T):
        h = np.tanh(pre[t] + wh @ h)
        hs[t] = h
    return hs


def _predictor_forward(y, emb, wh, b):
    U, P = len(y), len(b)
    gs = np.zeros((U + 1, P))
    g = np.zeros(P)
    inputs = [0] + list(y)  # SOS row, then previous non-blank labels
    for u in range(U + 1):
        g = np.tanh(emb[inputs[u]] + wh @ g + b)
        gs[u] = g
    return gs


def _joint_grid(henc, gpred, w):
    # [T, U+1, J] joint activations and [T, U+1, V] log-softmax outputs
    zpre = henc @ w["w_zt"].T
    zpre = zpre[:, None, :] + (gpred @ w["w_zu"].T)[None, :, :] + w["b_z"]
    z = np.tanh(zpre)
    logits = z @ w["w_out"].T + w["b_out"]
    shifted = logits - logits.max(axis=2, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=2, keepdims=True))
    return z, logp


def joint(h_enc, h_pred, state: TransducerState) -> np.ndarray:
    """Token distribution over K+1 outputs for one (encoder, predictor) pair."""
    w = _p64(state.params)
    z = np.tanh(w["w_zt"] @ np.asarray(h_enc, dtype=np.float64)
                + w["w_zu"] @ np.asarray(h_pred, dtype=np.float64) + w["b_z"])
    logits = w["w_out"] @ z + w["b_out"]
    e = np.exp(logits - logits.max())
    return e / e.sum()


def loss_and_grads(params, features, targets, cfg: TransducerConfig):
    """Per-utterance NLL and gradients for every parameter.

    features: [T, input_dim] raw (un-normalized) decoder features, T >= 1;
    targets: token ids in [1, n_tokens], length U >= 0.
    """
    x = normalize_features(features, cfg)
    if len(x) < 1:
        raise EmptyInputError("transducer loss needs at least one frame")
    y = list(int(t) for t in targets)
    if any(not 1 <= t <= cfg.n_tokens for t in y):
        raise DomainError("target ids must lie in [1, n_tokens]")

    w = _p64(params)
    henc = _rnn_forward(x, w["enc_wx"], w["enc_wh"], w["enc_b"])
    gpred = _predictor_forward(y, w["pred_emb"], w["pred_wh"], w["pred_b"])
    z, logp = _joint_grid(henc, gpred, w)

    T, U = len(x), len(y)
    lb = np.ascontiguousarray(logp[:, :, BLANK])
    le = (np.ascontiguousarray(logp[np.arange(T)[:, None], np.arange(U)[None, :], y])
          if U else np.zeros((T, 0)))
    alpha, beta, ll = lattice.forward_backward(lb, le)
    occ_b, occ_e = lattice.occupancies(alpha, beta, lb, le, ll)

    # d(nll)/d(logits) = softmax * total_occupancy - occupancy of the used entry
    occ_tot = occ_b.copy()
    if U:
        occ_tot[:, :U] += occ_e
    dlogits = np.exp(logp) * occ_tot[:, :, None]
    dlogits[:, :, BLANK] -= occ_b
    if U:
        tt, uu = np.meshgrid(np.arange(T), np.arange(U), indexing="ij")
        np.subtract.at(dlogits, (tt.ravel(), uu.ravel(), np.repeat([y], T, axis=0).ravel()),
                       occ_e.ravel())

    grads = {}
    grads["w_out"] = np.tensordot(dlogits, z, axes=([0, 1], [0, 1]))
    grads["b_out"] = dlogits.sum(axis=(0, 1))
    dz = dlogits @ w["w_out"]
    dzpre = dz * (1.0 - z * z)
    grads["b_z"] = dzpre.sum(axis=(0, 1))
    dpre_t = dzpre.sum(axis=1)  # [T, J]
    dpre_u = dzpre.sum(axis=0)  # [U+1, J]
    grads["w_zt"] = dpre_t.T @ henc
    grads["w_zu"] = dpre_u.T @ gpred
    dhenc = dpre_t @ w["w_zt"]
    dgpred = dpre_u @ w["w_zu"]

    # encoder BPTT
    grads["enc_wx"] = np.zeros_like(w["enc_wx"])
    grads["enc_wh"] = np.zeros_like(w["enc_wh"])
    grads["enc_b"] = np.zeros_like(w["enc_b"])
    carry = np.zeros(cfg.enc_hidden)
    for t in range(T - 1, -1, -1):
        dpre = (dhenc[t] + carry) * (1.0 - henc[t] * henc[t])
        grads["enc_wx"] += np.outer(dpre, x[t])
        grads["enc_b"] += dpre
        if t > 0:
            grads["enc_wh"] += np.outer(dpre, henc[t - 1])
        carry = w["enc_wh"].T @ dpre

    # predictor BPTT
    grads["pred_emb"] = np.zeros_like(w["pred_emb"])
    grads["pred_wh"] = np.zeros_like(w["pred_wh"])
    grads["pred_b"] = np.zeros_like(w["pred_b"])
    inputs = [0] + y
    carry = np.zeros(cfg.pred_hidden)
    for u in range(U, -1, -1):
        dpre = (dgpred[u] + carry) * (1.0 - gpred[u] * gpred[u])
        grads["pred_emb"][inputs[u]] += dpre
        grads["pred_b"] += dpre
        if u > 0:
            grads["pred_wh"] += np.outer(dpre, gpred[u - 1])
        carry = w["pred_wh"].T @ dpre

    return -ll, grads


def greedy_decode(state: TransducerState, features) -> Hypothesis:
    """Greedy transducer decode: emit argmax tokens until blank wins, then
    advance time.  An emission cap per time step guarantees termination.
    """
    cfg = state.config
    features = np.asarray(features, dtype=np.float64)
    if features.size == 0:
        return Hypothesis(tokens=(), score=0.0)
    x = normalize_features(features, cfg)
    w = _p64(state.params)
    henc = _rnn_forward(x, w["enc_wx"], w["enc_wh"], w["enc_b"])

    g = np.tanh(w["pred_emb"][0] + w["pred_b"])  # SOS predictor state
    tokens: list[int] = []
    score = 0.0
    pre_u = w["w_zu"] @ g + w["b_z"]
    for t in range(len(x)):
        pre_t = w["w_zt"] @ henc[t]
        emitted = 0
        while True:
            z = np.tanh(pre_t + pre_u)
            logits = w["w_out"] @ z + w["b_out"]
            shifted = logits - logits.max()
            logp = shifted - np.log(np.exp(shifted).sum())
            k = int(np.argmax(logp))
            if k == BLANK or emitted >= cfg.emission_cap:
                score += float(logp[BLANK])
                break
            tokens.append(k)
            score += float(logp[k])
            emitted += 1
            g = np.tanh(w["pred_emb"][k] + w["pred_wh"] @ g + w["pred_b"])
            pre_u = w["w_zu"] @ g + w["b_z"]
    return Hypothesis(tokens=tuple(tokens), score=score)


def _adam_step(state: TransducerState, grads: dict, tc: TrainConfig):
    state.step += 1
    bias1 = 1.0 - tc.beta1**state.step
    bias2 = 1.0 - tc.beta2**state.step
    for key in PARAM_KEYS:
        g = np.asarray(grads[key], dtype=np.float64)
        m = tc.beta1 * state.adam_m[key].astype(np.float64) + (1 - tc.beta1) * g
        v = tc.beta2 * state.adam_v[key].astype(np.float64) + (1 - tc.beta2) * g * g
        state.adam_m[key] = m.astype(np.float32)
        state.adam_v[key] = v.astype(np.float32)
        update = tc.lr * (m / bias1) / (np.sqrt(v / bias2) + tc.adam_eps)
        state.params[key] = (state.params[key].astype(np.float64) - update).astype(np.float32)


def train_transducer(corpus, cfg: TransducerConfig,
                     train_cfg: TrainConfig = TrainConfig()) -> TransducerState:
    """Adam training over (features, target_ids) pairs; deterministic per seed.

    Gradients are averaged over each minibatch of utterances in a fixed
    order.  Divergence raises TrainingFailureError with the last
    epoch-boundary state attached.
    """
    rng = np.random.default_rng(train_cfg.seed)
    state = TransducerState(params=init_params(cfg, rng), config=cfg)
    state.adam_m = {k: np.zeros_like(state.params[k]) for k in PARAM_KEYS}
    state.adam_v = {k: np.zeros_like(state.params[k]) for k in PARAM_KEYS}

    def snapshot():
        return TransducerState(
            params={k: v.copy() for k, v in state.params.items()},
            config=cfg,
            adam_m={k: v.copy() for k, v in state.adam_m.items()},
            adam_v={k: v.copy() for k, v in state.adam_v.items()},
            step=state.step, epoch=state.epoch, history=list(state.history),
        )

    n = len(corpus)
    for epoch in range(train_cfg.epochs):
        last_good = snapshot()
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            acc = None
            batch_loss = 0.0
            for i in idx:
                feats_i, targets_i = corpus[i]
                nll, grads = loss_and_grads(state.params, feats_i, targets_i, cfg)
                batch_loss += nll
                if acc is None:
                    acc = grads
                else:
                    for k in PARAM_KEYS:
                        acc[k] += grads[k]
            if not np.isfinite(batch_loss):
                raise TrainingFailureError(
                    f"transducer loss became non-finite at epoch {epoch}",
                    last_state=last_good)
            for k in PARAM_KEYS:
                acc[k] /= len(idx)
            _adam_step(state, acc, train_cfg)
            losses.append(batch_loss / len(idx))
        state.epoch = epoch + 1
        state.history.append({"epoch": epoch + 1, "loss": float(np.mean(losses))})
    return state


def grad_check(params, features, targets, cfg: TransducerConfig, h: float = 1e-4) -> float:
    """Analytic vs central finite-difference gradients; max relative error."""
    _, grads = loss_and_grads(params, features, targets, cfg)
    params64 = {k: v.astype(np.float64) for k, v in params.items()}

    worst = 0.0
    for key in PARAM_KEYS:
        flat = params64[key].reshape(-1)
        gflat = np.asarray(grads[key]).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up, _ = loss_and_grads(params64, features, targets, cfg)
            flat[idx] = orig - h
            down, _ = loss_and_grads(params64, features, targets, cfg)
            flat[idx] = orig
            fd = (up - down) / (2 * h)
            an = gflat[idx]
            worst = max(worst, abs(an - fd) / max(abs(an), abs(fd), 1e-6))
    return worst


def save_state(path, state: TransducerState) -> None:
    tensors = dict(state.params)
    tensors.update({f"adam_m.{k}": v for k, v in state.adam_m.items()})
    tensors.update({f"adam_v.{k}": v for k, v in state.adam_v.items()})
    arch = {"config": {**asdict(state.config), "vocab": list(state.config.vocab)},
            "step": state.step, "epoch": state.epoch}
    from .checkpoint import save_checkpoint

    save_checkpoint(path, "transducer", arch, tensors)


def load_state(path) -> TransducerState:
    from .checkpoint import load_checkpoint

    kind, arch, tensors = load_checkpoint(path)
    if kind != "transducer":
        raise ShapeError(f"checkpoint holds a {kind!r} model, not a transducer")
    arch_cfg = dict(arch["config"])
    arch_cfg["vocab"] = tuple(arch_cfg["vocab"])
    cfg = TransducerConfig(**arch_cfg)
    params = {k: v for k, v in tensors.items() if not k.startswith("adam_")}
    state = TransducerState(params=params, config=cfg,
                            step=arch["step"], epoch=arch["epoch"])
    state.adam_m = {k[len("adam_m."):]: v for k, v in tensors.items() if k.startswith("adam_m.")}
    state.adam_v = {k[len("adam_v."):]: v for k, v in tensors.items() if k.startswith("adam_v.")}
    return state


def save_history_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for row in history:
            writer.writerow([row["epoch"], f"{row['loss']:.6f}"])
