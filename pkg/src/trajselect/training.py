"""Outcome-supervised training of the verifier.

Every step of a trajectory inherits the trajectory's outcome label. The
three-class buffer loss lets the buffer probability count toward whichever
side the label favours, so a step the model is unsure about can be routed
to buffer instead of being forced onto the (possibly wrong) label::

    loss = -(1/T) * sum_t [ y * log(p_right + p_buffer + eps)
                          + (1 - y) * log(p_wrong + p_buffer + eps) ]

The binary variant replaces the head with two classes and uses ordinary
cross-entropy. Batches average the per-trajectory loss.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ._rng import keyed_rng
from .errors import (
    ConfigError,
    EmptyTrajectoryError,
    GradCheckFailure,
    LengthMismatch,
    NumericError,
)
from .verifier import (
    BUFFER,
    RIGHT,
    WRONG,
    VerifierConfig,
    VerifierParams,
    backward,
    forward_cached,
    init_params,
)

log = logging.getLogger(__name__)

LOG_EPS = 1e-12
LOSS_KINDS = ("buffer", "binary_bce")


def head_classes(loss_kind: str) -> int:
    if loss_kind not in LOSS_KINDS:
        raise ConfigError(f"unknown loss_kind {loss_kind!r}; expected one of {LOSS_KINDS}")
    return 3 if loss_kind == "buffer" else 2


@dataclass
class PseudoLabelSet:
    labels: list[int]

    def __len__(self) -> int:
        return len(self.labels)


def make_pseudo_labels(y: int, T: int) -> PseudoLabelSet:
    if T < 1:
        raise EmptyTrajectoryError("a trajectory needs at least one step")
    if y not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {y!r}")
    return PseudoLabelSet([int(y)] * T)


def _labels_array(labels) -> np.ndarray:
    if isinstance(labels, PseudoLabelSet):
        labels = labels.labels
    return np.asarray(labels, dtype=np.float64)


def buffer_loss(dists, labels) -> float:
    p = np.asarray(dists, dtype=np.float64).reshape(-1, 3)
    y = _labels_array(labels)
    if len(p) != len(y):
        raise LengthMismatch(f"{len(p)} distributions for {len(y)} labels")
    if len(y) == 0:
        raise EmptyTrajectoryError("empty trajectory")
    ll = (y * np.log(p[:, RIGHT] + p[:, BUFFER] + LOG_EPS)
          + (1 - y) * np.log(p[:, WRONG] + p[:, BUFFER] + LOG_EPS))
    return float(-ll.mean())


def binary_bce_loss(two_class_dists, labels) -> float:
    """Mean binary cross-entropy; accepts (T, 2) rows or a vector of p_right."""
    p = np.asarray(two_class_dists, dtype=np.float64)
    if p.ndim == 1:
        p = np.stack([p, 1.0 - p], axis=1)
    y = _labels_array(labels)
    if len(p) != len(y):
        raise LengthMismatch(f"{len(p)} distributions for {len(y)} labels")
    if len(y) == 0:
        raise EmptyTrajectoryError("empty trajectory")
    ll = (y * np.log(np.maximum(p[:, RIGHT], LOG_EPS))
          + (1 - y) * np.log(np.maximum(p[:, WRONG], LOG_EPS)))
    return float(-ll.mean())


# -- batches ----------------------------------------------------------------

@dataclass
class Batch:
    x: np.ndarray       # (B, T_max, d_sampler), right-padded with zeros
    mask: np.ndarray    # (B, T_max), 1.0 on real steps
    labels: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.labels)


def make_batch(items: Sequence, max_steps: int | None = None) -> Batch:
    """Stack records (or ``(hiddens, label)`` pairs) into a padded batch."""
    if not items:
        raise ValueError("batch must be non-empty")
    pairs = []
    for it in items:
        h, y = (it.step_hiddens, it.outcome) if hasattr(it, "step_hiddens") else it
        h = np.asarray(h, dtype=np.float64)
        if max_steps is not None:
            h = h[:max_steps]
        if len(h) == 0:
            raise EmptyTrajectoryError("cannot train on a trajectory with no steps")
        pairs.append((h, int(y)))
    T = max(len(h) for h, _ in pairs)
    D = pairs[0][0].shape[1]
    x = np.zeros((len(pairs), T, D))
    mask = np.zeros((len(pairs), T))
    for i, (h, _) in enumerate(pairs):
        x[i, :len(h)] = h
        mask[i, :len(h)] = 1.0
    return Batch(x, mask, np.array([y for _, y in pairs], dtype=np.float64))


def _loss_terms(probs: np.ndarray, batch: Batch, loss_kind: str):
    """Batch loss and its derivative w.r.t. the probabilities."""
    lengths = batch.mask.sum(axis=1, keepdims=True)
    w = batch.mask / (lengths * len(batch))
    y = batch.labels[:, None]
    dprobs = np.zeros_like(probs)
    if loss_kind == "buffer":
        pos = probs[..., RIGHT] + probs[..., BUFFER] + LOG_EPS
        neg = probs[..., WRONG] + probs[..., BUFFER] + LOG_EPS
        loss = -np.sum(w * (y * np.log(pos) + (1 - y) * np.log(neg)))
        dpos = -w * y / pos
        dneg = -w * (1 - y) / neg
        dprobs[..., RIGHT] = dpos
        dprobs[..., WRONG] = dneg
        dprobs[..., BUFFER] = dpos + dneg
    elif loss_kind == "binary_bce":
        pr, pw = probs[..., RIGHT], probs[..., WRONG]
        loss = -np.sum(w * (y * np.log(np.maximum(pr, LOG_EPS))
                            + (1 - y) * np.log(np.maximum(pw, LOG_EPS))))
        dprobs[..., RIGHT] = np.where(pr > LOG_EPS, -w * y / np.maximum(pr, LOG_EPS), 0.0)
        dprobs[..., WRONG] = np.where(pw > LOG_EPS, -w * (1 - y) / np.maximum(pw, LOG_EPS), 0.0)
    else:
        raise ConfigError(f"unknown loss_kind {loss_kind!r}")
    return float(loss), dprobs


def _check_head(vcfg: VerifierConfig, loss_kind: str) -> None:
    if vcfg.n_classes != head_classes(loss_kind):
        raise ConfigError(f"loss {loss_kind!r} needs a {head_classes(loss_kind)}-class head, "
                          f"config has n_classes={vcfg.n_classes}")


def batch_loss(params: VerifierParams, vcfg: VerifierConfig, batch: Batch, loss_kind: str = "buffer") -> float:
    probs, _ = forward_cached(params, vcfg, batch.x)
    return _loss_terms(probs, batch, loss_kind)[0]


def loss_and_grad(params: VerifierParams, vcfg: VerifierConfig, batch: Batch,
                  loss_kind: str = "buffer", want_input_grad: bool = False):
    """Mean loss over the batch and its exact gradient.

    With ``want_input_grad`` the gradient w.r.t. the padded input hiddens
    is returned as a third value.
    """
    _check_head(vcfg, loss_kind)
    probs, cache = forward_cached(params, vcfg, batch.x)
    loss, dprobs = _loss_terms(probs, batch, loss_kind)
    out = backward(params, vcfg, cache, dprobs, want_input_grad=want_input_grad)
    if want_input_grad:
        return loss, out[0], out[1]
    return loss, out


def grad(params: VerifierParams, vcfg: VerifierConfig, batch: Batch, loss_kind: str = "buffer") -> VerifierParams:
    return loss_and_grad(params, vcfg, batch, loss_kind)[1]


# -- gradient check ---------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    entries: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    @property
    def n_checked(self) -> int:
        return len(self.entries)

    def worst(self) -> dict:
        return max(self.entries, key=lambda e: e["rel_error"])


def rel_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from
    turning finite-difference round-off into spurious failures."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(params: VerifierParams, vcfg: VerifierConfig, batch: Batch,
               tolerance: float = 1e-4, loss_kind: str = "buffer", n_coords: int = 50,
               seed: int = 0, step: float = 1e-6,
               grad_fn: Callable | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences in float64.

    Checks ``n_coords`` uniformly sampled coordinates plus the largest
    entry of every tensor. Raises :class:`GradCheckFailure` above
    ``tolerance``.
    """
    grads = (grad_fn or grad)(params, vcfg, batch, loss_kind)
    names = list(params)
    sizes = np.array([params[k].size for k in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = keyed_rng(seed, "gradcheck")
    flat_ids = rng.choice(offsets[-1], size=min(n_coords, int(offsets[-1])), replace=False)
    coords = []
    for f in sorted(flat_ids.tolist()):
        t = int(np.searchsorted(offsets, f, side="right") - 1)
        coords.append((names[t], np.unravel_index(f - offsets[t], params[names[t]].shape)))
    for k in names:
        top = np.unravel_index(int(np.argmax(np.abs(grads[k]))), grads[k].shape)
        if (k, top) not in coords:
            coords.append((k, top))

    work = {k: v.copy() for k, v in params.items()}
    entries = []
    for k, idx in coords:
        orig = work[k][idx]
        work[k][idx] = orig + step
        up = batch_loss(work, vcfg, batch, loss_kind)
        work[k][idx] = orig - step
        down = batch_loss(work, vcfg, batch, loss_kind)
        work[k][idx] = orig
        numeric = (up - down) / (2 * step)
        analytic = float(grads[k][idx])
        entries.append({"param": k, "index": tuple(int(i) for i in idx), "analytic": analytic,
                        "numeric": numeric, "rel_error": rel_error(analytic, numeric)})
    report = GradCheckReport(max(e["rel_error"] for e in entries), tolerance, entries)
    if not report.passed:
        w = report.worst()
        raise GradCheckFailure(
            f"max relative error {report.max_rel_error:.3e} > {tolerance:.1e} "
            f"at {w['param']}{list(w['index'])}", report)
    return report


# -- optimiser --------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 3
    weight_decay: float = 0.1
    batch_size: int = 2
    grad_accum: int = 4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss_kind: str = "buffer"

    def validate(self) -> "TrainConfig":
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1 or self.grad_accum < 1:
            raise ConfigError("batch_size and grad_accum must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        head_classes(self.loss_kind)
        return self


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def init_adam(params: VerifierParams) -> AdamState:
    return AdamState({k: np.zeros_like(p) for k, p in params.items()},
                     {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adamw_step(params: VerifierParams, grads: VerifierParams, state: AdamState, cfg: TrainConfig,
               no_decay: Iterable[str] = ()) -> tuple[VerifierParams, AdamState]:
    """One AdamW update with decoupled weight decay; inputs are not modified."""
    b1, b2, lr = cfg.adam_beta1, cfg.adam_beta2, cfg.learning_rate
    t = state.step + 1
    skip = set(no_decay)
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        wd = 0.0 if k in skip else cfg.weight_decay
        new_p[k] = p - lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + wd * p)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t)


def default_no_decay(params: VerifierParams) -> list[str]:
    """Biases and norm gains are exempt from weight decay."""
    return [k for k, v in params.items() if v.ndim == 1]


def global_norm(grads: VerifierParams) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


# -- training loop ----------------------------------------------------------

@dataclass
class TrainLogRow:
    step: int
    epoch: int
    loss: float
    grad_norm: float
    wall_ms: float


def train(corpus, cfg: TrainConfig, vcfg: VerifierConfig,
          init: VerifierParams | None = None) -> tuple[VerifierParams, list[TrainLogRow]]:
    """Train a verifier on a labelled (normally balanced) corpus.

    Trajectories are visited in a fresh seeded order each epoch. Gradients
    of ``grad_accum`` micro-batches are averaged per trajectory before each
    optimiser step; a short final window is flushed at epoch end.
    """
    cfg.validate()
    vcfg.validate()
    _check_head(vcfg, cfg.loss_kind)
    records = [r for r in corpus.records if r.n_steps > 0]
    if not records:
        raise EmptyTrajectoryError("no trainable trajectories in corpus")
    if len(records) < len(corpus.records):
        log.warning("skipping %d trajectories with no steps", len(corpus.records) - len(records))
    n_long = sum(r.n_steps > vcfg.max_steps for r in records)
    if n_long:
        log.warning("%d trajectories truncated to max_steps=%d", n_long, vcfg.max_steps)

    params = init if init is not None else init_params(vcfg, cfg.seed)
    params = {k: v.copy() for k, v in params.items()}
    state = init_adam(params)
    no_decay = default_no_decay(params)
    history: list[TrainLogRow] = []
    t0 = time.perf_counter()

    acc, acc_loss, acc_n, acc_batches = None, 0.0, 0, 0

    def flush(epoch: int):
        nonlocal params, state, acc, acc_loss, acc_n, acc_batches
        mean_g = {k: g / acc_n for k, g in acc.items()}
        gn = global_norm(mean_g)
        loss = acc_loss / acc_n
        if not (np.isfinite(gn) and np.isfinite(loss)):
            raise NumericError(f"non-finite loss or gradient at optimiser step {state.step + 1}")
        params, state = adamw_step(params, mean_g, state, cfg, no_decay)
        history.append(TrainLogRow(state.step, epoch, loss, gn,
                                   round((time.perf_counter() - t0) * 1000.0, 3)))
        acc, acc_loss, acc_n, acc_batches = None, 0.0, 0, 0

    for epoch in range(cfg.epochs):
        order = keyed_rng(cfg.seed, "epoch", epoch).permutation(len(records))
        for start in range(0, len(order), cfg.batch_size):
            chunk = [records[i] for i in order[start:start + cfg.batch_size]]
            batch = make_batch(chunk, vcfg.max_steps)
            loss, g = loss_and_grad(params, vcfg, batch, cfg.loss_kind)
            n = len(chunk)
            # per-trajectory weighting: mean gradient times batch size
            if acc is None:
                acc = {k: v * n for k, v in g.items()}
            else:
                for k in acc:
                    acc[k] += g[k] * n
            acc_loss += loss * n
            acc_n += n
            acc_batches += 1
            if acc_batches == cfg.grad_accum:
                flush(epoch)
        if acc is not None:
            flush(epoch)
        log.info("epoch %d done: last loss %.4f", epoch, history[-1].loss)
    return params, history
