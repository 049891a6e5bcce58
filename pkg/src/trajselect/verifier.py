"""Process score model over step-final sampler hidden states.

Architecture, per trajectory of T steps::

    hidden (T, d_sampler)
      -> linear projection -> RMS normalisation
      -> n_layers x [pre-LN causal multi-head attention with rotary
                     positions, pre-LN GELU feed-forward], residual
      -> final layer norm
      -> score head: linear -> ReLU -> linear -> softmax over classes

Classes are ordered (right, wrong, buffer); the two-class ablation head
drops buffer. A step's score is its ``right`` probability.

Everything is plain numpy in float64. :func:`forward_cached` keeps the
intermediates that :func:`backward` needs for exact reverse-mode gradients.
Sequences in a batch are right-padded; since attention is causal a padded
tail never influences the real positions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._rng import keyed_rng
from .errors import ConfigError, DimensionMismatch, SchemaError, SequenceTooLong

RIGHT, WRONG, BUFFER = 0, 1, 2
CHECKPOINT_FORMAT = "trajselect-verifier"
CHECKPOINT_VERSION = 1

VerifierParams = dict  # name -> np.ndarray, ordered as param_shapes()


class StepDistribution(NamedTuple):
    p_right: float
    p_wrong: float
    p_buffer: float


@dataclass(frozen=True)
class VerifierConfig:
    d_sampler: int = 32
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_head_hidden: int = 64
    max_steps: int = 256
    d_ff: int = 128
    n_classes: int = 3
    rope_base: float = 10000.0
    norm_eps: float = 1e-6

    def validate(self) -> "VerifierConfig":
        for f in ("d_sampler", "d_model", "n_layers", "n_heads", "d_head_hidden", "max_steps", "d_ff"):
            if getattr(self, f) < 1:
                raise ConfigError(f"{f} must be >= 1")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if (self.d_model // self.n_heads) % 2:
            raise ConfigError("per-head width must be even for rotary encoding")
        if self.n_classes not in (2, 3):
            raise ConfigError("n_classes must be 3 (buffer head) or 2 (binary head)")
        return self

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


def param_shapes(cfg: VerifierConfig) -> list[tuple[str, tuple[int, ...]]]:
    dm, dff = cfg.d_model, cfg.d_ff
    shapes = [("proj.w", (cfg.d_sampler, dm)), ("proj.b", (dm,))]
    for l in range(cfg.n_layers):
        p = f"layers.{l}."
        shapes += [
            (p + "ln1.g", (dm,)), (p + "ln1.b", (dm,)),
            (p + "attn.wq", (dm, dm)), (p + "attn.wk", (dm, dm)),
            (p + "attn.wv", (dm, dm)), (p + "attn.wo", (dm, dm)),
            (p + "ln2.g", (dm,)), (p + "ln2.b", (dm,)),
            (p + "ff.w1", (dm, dff)), (p + "ff.b1", (dff,)),
            (p + "ff.w2", (dff, dm)), (p + "ff.b2", (dm,)),
        ]
    shapes += [
        ("lnf.g", (dm,)), ("lnf.b", (dm,)),
        ("head.w1", (dm, cfg.d_head_hidden)), ("head.b1", (cfg.d_head_hidden,)),
        ("head.w2", (cfg.d_head_hidden, cfg.n_classes)), ("head.b2", (cfg.n_classes,)),
    ]
    return shapes


def init_params(cfg: VerifierConfig, seed: int) -> VerifierParams:
    """Glorot-normal matrices, zero biases, unit layer-norm gains."""
    cfg.validate()
    params = {}
    for name, shape in param_shapes(cfg):
        if len(shape) == 2:
            std = np.sqrt(2.0 / (shape[0] + shape[1]))
            params[name] = keyed_rng(seed, "verifier.init", name).normal(scale=std, size=shape)
        elif name.endswith(".g"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def zeros_like(params: VerifierParams) -> VerifierParams:
    return {k: np.zeros_like(v) for k, v in params.items()}


def count_params(params: VerifierParams) -> int:
    return int(sum(v.size for v in params.values()))


def flatten(params: VerifierParams) -> np.ndarray:
    return np.concatenate([v.ravel() for v in params.values()])


def unflatten(vec: np.ndarray, like: VerifierParams) -> VerifierParams:
    out, i = {}, 0
    for k, v in like.items():
        out[k] = vec[i:i + v.size].reshape(v.shape).copy()
        i += v.size
    return out


# -- primitives -------------------------------------------------------------

def _linear(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # einsum's own loops, unlike BLAS gemm, round each row the same way
    # whatever the row count, which keeps causal prefixes bit-identical
    return np.einsum("...k,kn->...n", x, w)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _causal_softmax(z: np.ndarray) -> np.ndarray:
    # sequential denominator: trailing masked zeros cannot regroup the sum
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / np.cumsum(e, axis=-1)[..., -1:]


def _seq_scores(q: np.ndarray, k: np.ndarray) -> np.ndarray:
    """q @ k^T summed over the feature axis in a fixed order."""
    out = q[..., :, None, 0] * k[..., None, :, 0]
    for d in range(1, q.shape[-1]):
        out = out + q[..., :, None, d] * k[..., None, :, d]
    return out


def _seq_mix(att: np.ndarray, v: np.ndarray) -> np.ndarray:
    """att @ v accumulated key by key, left to right."""
    out = att[..., :, 0:1] * v[..., 0:1, :]
    for j in range(1, v.shape[-2]):
        out = out + att[..., :, j:j + 1] * v[..., j:j + 1, :]
    return out


def _softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


_GELU_C = np.sqrt(2.0 / np.pi)


def _gelu(u):
    t = np.tanh(_GELU_C * (u + 0.044715 * u ** 3))
    return 0.5 * u * (1.0 + t), t


def _gelu_backward(u, t, dy):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * u * u)
    return dy * (0.5 * (1.0 + t) + 0.5 * u * dt)


def _layernorm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layernorm_backward(dy, g, cache):
    xhat, inv = cache
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxh = dy * g
    dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                - xhat * (dxh * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def rope_tables(n_pos: int, head_dim: int, base: float) -> tuple[np.ndarray, np.ndarray]:
    half = head_dim // 2
    inv_freq = base ** (-np.arange(half) * 2.0 / head_dim)
    ang = np.arange(n_pos)[:, None] * inv_freq[None, :]
    return np.cos(ang), np.sin(ang)


def _rope(x, cos, sin):
    h = x.shape[-1] // 2
    x1, x2 = x[..., :h], x[..., h:]
    return np.concatenate([x1 * cos - x2 * sin, x1 * sin + x2 * cos], axis=-1)


def _rope_backward(dy, cos, sin):
    h = dy.shape[-1] // 2
    d1, d2 = dy[..., :h], dy[..., h:]
    return np.concatenate([d1 * cos + d2 * sin, d2 * cos - d1 * sin], axis=-1)


# -- forward / backward -----------------------------------------------------

def _check_input(cfg: VerifierConfig, x: np.ndarray) -> None:
    if x.shape[-1] != cfg.d_sampler:
        raise DimensionMismatch(f"hidden size {x.shape[-1]} != d_sampler {cfg.d_sampler}")
    T = x.shape[-2]
    if T < 1:
        raise DimensionMismatch("need at least one step")
    if T > cfg.max_steps:
        raise SequenceTooLong(f"{T} steps exceeds max_steps={cfg.max_steps}")


def forward_cached(params: VerifierParams, cfg: VerifierConfig, x: np.ndarray):
    """Batched forward on ``x`` of shape (B, T, d_sampler).

    Returns (probs of shape (B, T, n_classes), cache for :func:`backward`).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionMismatch("forward_cached expects (batch, steps, d_sampler)")
    _check_input(cfg, x)
    B, T, _ = x.shape
    H, hd, eps = cfg.n_heads, cfg.head_dim, cfg.norm_eps
    cos, sin = rope_tables(T, hd, cfg.rope_base)
    mask = np.triu(np.full((T, T), -np.inf), k=1)
    scale = 1.0 / np.sqrt(hd)
    cache: dict = {"x_in": x, "cos": cos, "sin": sin, "layers": []}

    p = _linear(x, params["proj.w"]) + params["proj.b"]
    r = np.sqrt((p * p).mean(axis=-1, keepdims=True) + eps)
    h = p / r
    cache["rms"] = (h, r)

    def heads(t):
        return t.reshape(B, T, H, hd).transpose(0, 2, 1, 3)

    for l in range(cfg.n_layers):
        pre = f"layers.{l}."
        lc: dict = {}
        a, lc["ln1"] = _layernorm(h, params[pre + "ln1.g"], params[pre + "ln1.b"], eps)
        q = heads(_linear(a, params[pre + "attn.wq"]))
        k = heads(_linear(a, params[pre + "attn.wk"]))
        v = heads(_linear(a, params[pre + "attn.wv"]))
        qr, kr = _rope(q, cos, sin), _rope(k, cos, sin)
        # attention reductions run in a fixed order so every output row
        # depends only on its causal prefix, bit for bit
        s = _seq_scores(qr, kr) * scale + mask
        att = _causal_softmax(s)
        o = _seq_mix(att, v).transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)
        h = h + _linear(o, params[pre + "attn.wo"])
        c, lc["ln2"] = _layernorm(h, params[pre + "ln2.g"], params[pre + "ln2.b"], eps)
        u = _linear(c, params[pre + "ff.w1"]) + params[pre + "ff.b1"]
        gl, t = _gelu(u)
        h = h + _linear(gl, params[pre + "ff.w2"]) + params[pre + "ff.b2"]
        lc.update(a=a, qr=qr, kr=kr, v=v, att=att, o=o, c=c, u=u, t=t, gl=gl)
        cache["layers"].append(lc)

    z, cache["lnf"] = _layernorm(h, params["lnf.g"], params["lnf.b"], eps)
    hp = _linear(z, params["head.w1"]) + params["head.b1"]
    hr = np.maximum(hp, 0.0)
    logits = _linear(hr, params["head.w2"]) + params["head.b2"]
    probs = _softmax(logits)
    cache.update(z=z, hp=hp, hr=hr, probs=probs)
    return probs, cache


def backward(params: VerifierParams, cfg: VerifierConfig, cache, dprobs: np.ndarray,
             want_input_grad: bool = False):
    """Gradients of a scalar loss given its derivative w.r.t. the output probs."""
    B, T, _ = cache["x_in"].shape
    H, hd = cfg.n_heads, cfg.head_dim
    scale = 1.0 / np.sqrt(hd)
    cos, sin = cache["cos"], cache["sin"]
    g = {}

    def flat(t):
        return t.reshape(-1, t.shape[-1])

    def wgrad(inp, dout):
        return flat(inp).T @ flat(dout)

    def merge(t):
        return t.transpose(0, 2, 1, 3).reshape(B, T, cfg.d_model)

    def heads(t):
        return t.reshape(B, T, H, hd).transpose(0, 2, 1, 3)

    dlogits = _softmax_backward(cache["probs"], dprobs)
    g["head.w2"] = wgrad(cache["hr"], dlogits)
    g["head.b2"] = flat(dlogits).sum(axis=0)
    dhr = _linear(dlogits, params["head.w2"].T)
    dhp = dhr * (cache["hp"] > 0)
    g["head.w1"] = wgrad(cache["z"], dhp)
    g["head.b1"] = flat(dhp).sum(axis=0)
    dz = _linear(dhp, params["head.w1"].T)
    dh, g["lnf.g"], g["lnf.b"] = _layernorm_backward(dz, params["lnf.g"], cache["lnf"])

    for l in reversed(range(cfg.n_layers)):
        pre = f"layers.{l}."
        lc = cache["layers"][l]
        # feed-forward branch
        g[pre + "ff.w2"] = wgrad(lc["gl"], dh)
        g[pre + "ff.b2"] = flat(dh).sum(axis=0)
        dgl = _linear(dh, params[pre + "ff.w2"].T)
        du = _gelu_backward(lc["u"], lc["t"], dgl)
        g[pre + "ff.w1"] = wgrad(lc["c"], du)
        g[pre + "ff.b1"] = flat(du).sum(axis=0)
        dc = _linear(du, params[pre + "ff.w1"].T)
        dx, g[pre + "ln2.g"], g[pre + "ln2.b"] = _layernorm_backward(dc, params[pre + "ln2.g"], lc["ln2"])
        dh = dh + dx
        # attention branch
        g[pre + "attn.wo"] = wgrad(lc["o"], dh)
        do = heads(_linear(dh, params[pre + "attn.wo"].T))
        datt = do @ lc["v"].swapaxes(-1, -2)
        dv = lc["att"].swapaxes(-1, -2) @ do
        ds = _softmax_backward(lc["att"], datt) * scale
        dqr = ds @ lc["kr"]
        dkr = ds.swapaxes(-1, -2) @ lc["qr"]
        dq = merge(_rope_backward(dqr, cos, sin))
        dk = merge(_rope_backward(dkr, cos, sin))
        dv = merge(dv)
        a = lc["a"]
        g[pre + "attn.wq"] = wgrad(a, dq)
        g[pre + "attn.wk"] = wgrad(a, dk)
        g[pre + "attn.wv"] = wgrad(a, dv)
        da = (_linear(dq, params[pre + "attn.wq"].T)
              + _linear(dk, params[pre + "attn.wk"].T)
              + _linear(dv, params[pre + "attn.wv"].T))
        dx, g[pre + "ln1.g"], g[pre + "ln1.b"] = _layernorm_backward(da, params[pre + "ln1.g"], lc["ln1"])
        dh = dh + dx

    hn, r = cache["rms"]
    dp = (dh - hn * (dh * hn).mean(axis=-1, keepdims=True)) / r
    g["proj.w"] = wgrad(cache["x_in"], dp)
    g["proj.b"] = flat(dp).sum(axis=0)
    grads = {k: g[k] for k in params}
    if want_input_grad:
        return grads, _linear(dp, params["proj.w"].T)
    return grads


def forward(params: VerifierParams, cfg: VerifierConfig, step_hiddens) -> np.ndarray:
    """Per-step class probabilities for one trajectory, shape (T, n_classes)."""
    x = np.asarray(step_hiddens, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("step_hiddens must have shape (steps, d_sampler)")
    probs, _ = forward_cached(params, cfg, x[None])
    return probs[0]


def as_distributions(probs: np.ndarray) -> list[StepDistribution]:
    if probs.shape[-1] != 3:
        raise DimensionMismatch("StepDistribution needs a three-class head")
    return [StepDistribution(*map(float, row)) for row in probs]


def step_scores(distributions) -> list[float]:
    """Probability of the ``right`` class for each step."""
    if len(distributions) == 0:
        return []
    return [float(v) for v in np.asarray(distributions, dtype=np.float64)[:, RIGHT]]


def trajectory_scores(params: VerifierParams, cfg: VerifierConfig, records) -> list[list[float]]:
    """Step scores for every record; trajectories longer than max_steps are truncated."""
    out = []
    for r in records:
        h = r.step_hiddens[:cfg.max_steps]
        out.append(step_scores(forward(params, cfg, h)) if len(h) else [])
    return out


# -- checkpoints ------------------------------------------------------------

def save_checkpoint(params: VerifierParams, cfg: VerifierConfig, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": asdict(cfg),
        "params": [{"name": k, "shape": list(v.shape), "data": v.ravel().tolist()}
                   for k, v in params.items()],
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[VerifierParams, VerifierConfig]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"{path} is not a verifier checkpoint")
    known = {f.name for f in fields(VerifierConfig)}
    cfg = VerifierConfig(**{k: v for k, v in doc["config"].items() if k in known}).validate()
    params = {}
    for entry in doc["params"]:
        params[entry["name"]] = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    expected = dict(param_shapes(cfg))
    if list(params) != list(expected) or any(params[k].shape != s for k, s in expected.items()):
        raise SchemaError(f"{path}: parameter names or shapes do not match the config")
    return params, cfg
