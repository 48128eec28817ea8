"""Differentiable function kit: dense nets, conv/MLP encoders, dilated causal
temporal convolutions, attention with a linear distance bias, and the
MimeticSNAIL actor/critic assembly.

Every network owns one flat parameter vector; weight matrices are reshaped
views into it, so optimizer steps and soft target updates are single vector
operations. Forward passes run on the autodiff tape when parameters are
trainable and as plain numpy otherwise.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    EmptySequenceError,
    InvalidSlopeError,
    InvalidTauError,
    SeqTooLongError,
    ShapeError,
    TopologyMismatchError,
)


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Net:
    """Base for parameterized functions with a flat parameter vector.

    Subclasses declare named parameter arrays, then call `_build`, which
    allocates the vector and exposes each array as a view-backed autodiff
    leaf. `tape_forward` must be implemented by subclasses.
    """

    def __init__(self, topology: str, dtype=np.float32):
        self.topology = topology
        self.dtype = np.dtype(dtype)
        self._names: list[str] = []
        self._shapes: list[tuple] = []
        self._inits: list = []

    def _declare(self, name: str, shape: tuple, init) -> None:
        self._names.append(name)
        self._shapes.append(tuple(shape))
        self._inits.append(init)

    def _build(self, seed: int, trainable: bool) -> None:
        self.seed = seed
        self.trainable = trainable
        sizes = [int(np.prod(s)) for s in self._shapes]
        self.params = np.zeros(int(sum(sizes)), dtype=self.dtype)
        self._leaves: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        off = 0
        for name, shape, size, init in zip(self._names, self._shapes, sizes, self._inits):
            view = self.params[off : off + size].reshape(shape)
            if isinstance(init, (int, float)):
                view[...] = init
            elif init == "zeros":
                pass
            else:  # fan-in integer passed as ("fan", n)
                view[...] = _uniform_fan_in(rng, init[1], shape, self.dtype)
            self._leaves[name] = Tensor(view, requires_grad=trainable)
            off += size

    def p(self, name: str) -> Tensor:
        return self._leaves[name]

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def topology_hash(self) -> str:
        key = f"{self.topology}|{self.dtype.name}"
        return hashlib.sha256(key.encode()).hexdigest()[:16]

    def set_params(self, vec: np.ndarray) -> None:
        if vec.size != self.params.size:
            raise ShapeError(f"expected {self.params.size} parameters, got {vec.size}")
        self.params[:] = vec

    def zero_grad(self) -> None:
        for leaf in self._leaves.values():
            leaf.grad = None

    def grad_vector(self) -> np.ndarray:
        parts = []
        for name, shape in zip(self._names, self._shapes):
            g = self._leaves[name].grad
            if g is None:
                g = np.zeros(shape, dtype=self.dtype)
            parts.append(np.asarray(g, dtype=self.dtype).reshape(-1))
        return np.concatenate(parts)

    def tape_forward(self, *inputs):
        raise NotImplementedError

    def forward(self, *inputs):
        """Deterministic evaluation returning plain numpy output(s)."""
        out = self.tape_forward(*inputs)
        if isinstance(out, tuple):
            return tuple(o.data for o in out)
        return out.data

    def gradient(self, loss_head: Callable, *inputs) -> np.ndarray:
        """d(loss)/d(params) by reverse accumulation.

        `loss_head` maps the forward output (Tensor or tuple of Tensors)
        to a scalar Tensor.
        """
        self.zero_grad()
        loss = loss_head(self.tape_forward(*inputs))
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            raise ShapeError("loss head must produce a scalar")
        loss.backward()
        return self.grad_vector()


def polyak_update(target_params: np.ndarray, online_params: np.ndarray, tau: float) -> np.ndarray:
    """In-place soft update: target <- (1 - tau) * target + tau * online."""
    if not (0.0 < tau <= 1.0):
        raise InvalidTauError(f"tau must be in (0, 1], got {tau}")
    if target_params.shape != online_params.shape:
        raise ShapeError("parameter vectors differ in size")
    target_params *= 1.0 - tau
    target_params += tau * online_params
    return target_params


def save_checkpoint(net: Net, path) -> None:
    np.savez(
        path,
        params=net.params,
        topology_hash=np.array(net.topology_hash),
        precision=np.array(net.dtype.name),
        seed=np.array(net.seed),
    )


def load_checkpoint(net: Net, path) -> None:
    with np.load(path, allow_pickle=False) as ck:
        stored = str(ck["topology_hash"])
        if stored != net.topology_hash:
            raise TopologyMismatchError(
                f"checkpoint topology {stored} does not match network {net.topology_hash}"
            )
        net.set_params(ck["params"].astype(net.dtype))


# ---------------------------------------------------------------------------
# dense networks


class MLP(Net):
    """Fully connected network with a fused numpy forward/backward.

    The fused pair is the training fast path; `tape_forward` runs the same
    parameters through the autodiff tape for generic loss heads and for
    cross-checking in tests.
    """

    def __init__(self, sizes, hidden_act: str = "relu", out_act: Optional[str] = None,
                 seed: int = 0, dtype=np.float32, trainable: bool = True):
        topo = f"mlp:{'-'.join(str(s) for s in sizes)}:{hidden_act}:{out_act or 'linear'}"
        super().__init__(topo, dtype)
        self.sizes = list(sizes)
        self.hidden_act = hidden_act
        self.out_act = out_act
        for i in range(len(sizes) - 1):
            self._declare(f"W{i}", (sizes[i], sizes[i + 1]), ("fan", sizes[i]))
            self._declare(f"b{i}", (sizes[i + 1],), "zeros")
        self._build(seed, trainable)
        self._n_layers = len(sizes) - 1
        self._layers = [
            (self.p(f"W{i}").data, self.p(f"b{i}").data,
             out_act if i == self._n_layers - 1 else hidden_act)
            for i in range(self._n_layers)
        ]

    def _act(self, z: np.ndarray, kind: Optional[str]) -> np.ndarray:
        if kind == "relu":
            return np.maximum(z, 0.0)
        if kind == "tanh":
            return np.tanh(z)
        if kind == "sigmoid":
            return 1.0 / (1.0 + np.exp(-z))
        return z

    @staticmethod
    def _act_deriv(y: np.ndarray, kind: Optional[str]) -> np.ndarray:
        if kind == "relu":
            return (y > 0).astype(y.dtype)
        if kind == "tanh":
            return 1.0 - y * y
        if kind == "sigmoid":
            return y * (1.0 - y)
        return np.ones_like(y)

    def forward(self, x: np.ndarray, cache: Optional[list] = None) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected input (*, {self.sizes[0]}), got {x.shape}")
        h = x
        for W, b, kind in self._layers:
            z = h @ W
            z += b
            y = self._act(z, kind)
            if cache is not None:
                cache.append((h, y, kind))
            h = y
        return h

    def backward(self, cache: list, dout: np.ndarray):
        """Backprop from d(loss)/d(output); returns (flat_param_grad, d_input)."""
        grads = [None] * (2 * self._n_layers)
        g = dout
        for i in range(self._n_layers - 1, -1, -1):
            x_in, y, kind = cache[i]
            if kind is not None:
                g = g * self._act_deriv(y, kind)
            grads[2 * i] = (x_in.T @ g).reshape(-1)
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self._layers[i][0].T
        return np.concatenate(grads), g

    def tape_forward(self, x) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if h.data.ndim != 2 or h.data.shape[1] != self.sizes[0]:
            raise ShapeError(f"expected input (*, {self.sizes[0]}), got {h.data.shape}")
        for i in range(self._n_layers):
            kind = self.out_act if i == self._n_layers - 1 else self.hidden_act
            z = ad.add(ad.matmul(h, self.p(f"W{i}")), self.p(f"b{i}"))
            if kind == "relu":
                h = ad.relu(z)
            elif kind == "tanh":
                h = ad.tanh(z)
            elif kind == "sigmoid":
                h = ad.sigmoid(z)
            else:
                h = z
        return h


# ---------------------------------------------------------------------------
# attention with linear distance bias


def _distance_bias(t_vec: np.ndarray, n_queries: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    """|t_q - t_k| matrix and the additive causal mask for aligned sequences.

    Queries correspond to the trailing `n_queries` key positions; key
    positions after a query's own position are masked out.
    """
    n_keys = len(t_vec)
    offset = n_keys - n_queries
    tq = np.asarray(t_vec, dtype=dtype)[offset:]
    dist = np.abs(tq[:, None] - np.asarray(t_vec, dtype=dtype)[None, :])
    key_pos = np.arange(n_keys)
    query_pos = np.arange(offset, n_keys)
    mask = np.where(key_pos[None, :] > query_pos[:, None], -np.inf, 0.0).astype(dtype)
    return dist, mask


def alibi_attention(Q, K, V, m: float, t_vec) -> np.ndarray:
    """softmax(Q K^T / sqrt(l_k) - m |t_q - t_k| + causal mask) V."""
    Q, K, V = (np.asarray(a) for a in (Q, K, V))
    t_vec = np.asarray(t_vec)
    if m < 0:
        raise InvalidSlopeError(f"bias slope must be non-negative, got {m}")
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise ShapeError("Q, K, V must be 2-D")
    if Q.shape[1] != K.shape[1]:
        raise ShapeError(f"query dim {Q.shape[1]} != key dim {K.shape[1]}")
    if K.shape[0] != V.shape[0]:
        raise ShapeError(f"{K.shape[0]} keys vs {V.shape[0]} value rows")
    if len(t_vec) != K.shape[0]:
        raise ShapeError(f"t_vec length {len(t_vec)} != key count {K.shape[0]}")
    if Q.shape[0] > K.shape[0]:
        raise ShapeError("more queries than keys")
    out = _attention_tape(
        Tensor(Q), Tensor(K), Tensor(V), Tensor(np.asarray(m, dtype=Q.dtype)), t_vec
    )
    return out.data


def _attention_tape(q: Tensor, k: Tensor, v: Tensor, m: Tensor, t_vec: np.ndarray) -> Tensor:
    dist, mask = _distance_bias(t_vec, q.data.shape[0], q.data.dtype)
    scale = 1.0 / math.sqrt(k.data.shape[1])
    logits = ad.mul(ad.matmul(q, ad.transpose(k)), scale)
    logits = ad.sub(logits, ad.mul(m, dist))
    logits = ad.add(logits, mask)
    return ad.matmul(ad.softmax_rows(logits), v)


# ---------------------------------------------------------------------------
# SNAIL building blocks (shared declare/apply helpers so the assembled model
# and the standalone blocks use one implementation)


def tc_dilations(seq_len: int) -> list[int]:
    n = max(1, math.ceil(math.log2(seq_len))) if seq_len > 1 else 1
    return [2 ** i for i in range(n)]


def _declare_tc(net: Net, prefix: str, c_in: int, filters: int, seq_len: int) -> int:
    c = c_in
    for i, _ in enumerate(tc_dilations(seq_len)):
        for branch in ("t", "s"):
            net._declare(f"{prefix}.d{i}.{branch}0", (c, filters), ("fan", 2 * c))
            net._declare(f"{prefix}.d{i}.{branch}1", (c, filters), ("fan", 2 * c))
            net._declare(f"{prefix}.d{i}.{branch}b", (filters,), "zeros")
        c += filters
    return c


def _apply_tc(net: Net, prefix: str, x: Tensor, filters: int, seq_len: int) -> Tensor:
    """Stack of gated dilated causal conv layers with dense connections.

    Each layer computes tanh(conv) * sigmoid(conv) over a kernel of
    (current step, step - dilation) and concatenates the result onto its
    input, so position t never sees positions > t.
    """
    for i, dil in enumerate(tc_dilations(seq_len)):
        shifted = ad.causal_shift(x, dil)

        def conv(branch: str) -> Tensor:
            z = ad.matmul(x, net.p(f"{prefix}.d{i}.{branch}0"))
            z = ad.add(z, ad.matmul(shifted, net.p(f"{prefix}.d{i}.{branch}1")))
            return ad.add(z, net.p(f"{prefix}.d{i}.{branch}b"))

        gate = ad.mul(ad.tanh(conv("t")), ad.sigmoid(conv("s")))
        x = ad.concat([x, gate], axis=1)
    return x


def _declare_attention(net: Net, prefix: str, c_in: int, key_dim: int, value_dim: int) -> int:
    net._declare(f"{prefix}.Wq", (c_in, key_dim), ("fan", c_in))
    net._declare(f"{prefix}.bq", (key_dim,), "zeros")
    net._declare(f"{prefix}.Wk", (c_in, key_dim), ("fan", c_in))
    net._declare(f"{prefix}.bk", (key_dim,), "zeros")
    net._declare(f"{prefix}.Wv", (c_in, value_dim), ("fan", c_in))
    net._declare(f"{prefix}.bv", (value_dim,), "zeros")
    net._declare(f"{prefix}.m", (), 1.0)
    return c_in + value_dim


def _apply_attention(net: Net, prefix: str, x: Tensor, t_vec: np.ndarray) -> Tensor:
    q = ad.add(ad.matmul(x, net.p(f"{prefix}.Wq")), net.p(f"{prefix}.bq"))
    k = ad.add(ad.matmul(x, net.p(f"{prefix}.Wk")), net.p(f"{prefix}.bk"))
    v = ad.add(ad.matmul(x, net.p(f"{prefix}.Wv")), net.p(f"{prefix}.bv"))
    m_eff = ad.relu(net.p(f"{prefix}.m"))  # learnable slope clamped at zero
    read = _attention_tape(q, k, v, m_eff, t_vec)
    return ad.concat([x, read], axis=1)


class TCBlock(Net):
    """Standalone temporal convolution block over (T, C) sequences."""

    def __init__(self, c_in: int, filters: int, seq_len: int,
                 seed: int = 0, dtype=np.float32, trainable: bool = True):
        super().__init__(f"tc:{c_in}:{filters}:{seq_len}", dtype)
        self.filters = filters
        self.seq_len = seq_len
        self.c_out = _declare_tc(self, "tc", c_in, filters, seq_len)
        self._build(seed, trainable)

    @property
    def dilations(self) -> list[int]:
        return tc_dilations(self.seq_len)

    def tape_forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if x.data.ndim != 2:
            raise ShapeError(f"expected (T, C) sequence, got shape {x.data.shape}")
        if x.data.shape[0] == 0:
            raise EmptySequenceError("input sequence is empty")
        if x.data.shape[0] > self.seq_len:
            raise SeqTooLongError(f"sequence {x.data.shape[0]} exceeds L={self.seq_len}")
        return _apply_tc(self, "tc", x, self.filters, self.seq_len)


class AttentionBlock(Net):
    """Standalone single-head attention block with the linear distance bias."""

    def __init__(self, c_in: int, key_dim: int, value_dim: int,
                 seed: int = 0, dtype=np.float32, trainable: bool = True):
        super().__init__(f"attn:{c_in}:{key_dim}:{value_dim}", dtype)
        self.c_out = _declare_attention(self, "at", c_in, key_dim, value_dim)
        self._build(seed, trainable)

    def tape_forward(self, x, t_vec=None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if t_vec is None:
            t_vec = np.arange(1, x.data.shape[0] + 1)
        return _apply_attention(self, "at", x, np.asarray(t_vec))


# ---------------------------------------------------------------------------
# encoders


def _conv2d_steps(net: Net, prefix: str, images: np.ndarray, shapes, strides, dtype,
                  as_tensor: bool):
    """Valid strided 2-D convolutions applied per step via im2col gathers."""
    outs = []
    for s in range(images.shape[0]):
        x = Tensor(np.ascontiguousarray(images[s], dtype=dtype).reshape(-1, images.shape[-1]))
        h_in, w_in = images.shape[1], images.shape[2]
        for li, (kern, stride) in enumerate(zip(shapes, strides)):
            kh, kw, _, _ = kern
            h_out = (h_in - kh) // stride + 1
            w_out = (w_in - kw) // stride + 1
            idx = _im2col_index(h_in, w_in, kh, kw, stride)
            patches = ad.take_rows(x, idx)  # (h_out*w_out, kh*kw, c_in)
            patches = ad.reshape(patches, (h_out * w_out, -1))
            z = ad.add(ad.matmul(patches, net.p(f"{prefix}.K{li}")), net.p(f"{prefix}.kb{li}"))
            x = ad.relu(z)
            h_in, w_in = h_out, w_out
        outs.append(ad.reshape(x, (1, -1)))
    flat = ad.concat(outs, axis=0)
    return flat


def _im2col_index(h: int, w: int, kh: int, kw: int, stride: int) -> np.ndarray:
    h_out = (h - kh) // stride + 1
    w_out = (w - kw) // stride + 1
    r0 = np.repeat(np.arange(h_out) * stride, w_out)
    c0 = np.tile(np.arange(w_out) * stride, h_out)
    base = r0 * w + c0  # (P,)
    dr = np.repeat(np.arange(kh), kw)
    dc = np.tile(np.arange(kw), kh)
    offs = dr * w + dc  # (kh*kw,)
    return base[:, None] + offs[None, :]


# ---------------------------------------------------------------------------
# MimeticSNAIL


@dataclass
class SnailConfig:
    """Shape of the sequence model; defaults mirror the full-size variant."""

    latent_dim: int = 100
    tc_filters: int = 30
    attn_key_dim: int = 16
    attn_value_dim: int = 16
    seq_len: int = 75
    encoder: str = "mlp"  # "mlp" | "conv"
    conv_channels: tuple = (16, 32)
    action_dim: int = 2
    with_tf_head: bool = True
    obs_dim: int = 18
    image_shape: tuple = (30, 40, 3)  # (H, W, C) for the conv encoder
    encoder_hidden: int = 100

    def __post_init__(self):
        for name in ("latent_dim", "tc_filters", "attn_key_dim", "attn_value_dim",
                     "seq_len", "action_dim"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1")

    def describe(self) -> str:
        enc = (f"conv{self.image_shape}{self.conv_channels}" if self.encoder == "conv"
               else f"mlp{self.obs_dim}")
        return (f"snail:{enc}:h{self.encoder_hidden}:l{self.latent_dim}:f{self.tc_filters}:"
                f"k{self.attn_key_dim}:v{self.attn_value_dim}:L{self.seq_len}:"
                f"a{self.action_dim}:tf{int(self.with_tf_head)}")


@dataclass
class SequenceInput:
    """Demonstration prefix plus rollout experience, fed as one sequence.

    The time index vector restarts at 1 for the experience segment, so the
    attention distance bias measures demo steps and rollout steps on their
    own clocks.
    """

    demo_obs: np.ndarray
    demo_actions: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    f_demo: np.ndarray

    def __post_init__(self):
        self.demo_obs = np.asarray(self.demo_obs)
        self.demo_actions = np.asarray(self.demo_actions)
        self.obs = np.asarray(self.obs)
        self.actions = np.asarray(self.actions)
        self.f_demo = np.asarray(self.f_demo)
        if len(self.obs) == 0:
            raise EmptySequenceError("experience segment is empty")
        if len(self.demo_obs) != len(self.demo_actions):
            raise ShapeError("demo obs/action length mismatch")
        if not (len(self.obs) == len(self.actions) == len(self.f_demo)):
            raise ShapeError("experience obs/action/flag length mismatch")

    @property
    def t_demo(self) -> int:
        return len(self.demo_obs)

    @property
    def length(self) -> int:
        return self.t_demo + len(self.obs)

    @property
    def time_index_vector(self) -> np.ndarray:
        return np.concatenate(
            [np.arange(1, self.t_demo + 1), np.arange(1, len(self.obs) + 1)]
        )

    def all_obs(self) -> np.ndarray:
        if self.t_demo == 0:
            return self.obs
        return np.concatenate([self.demo_obs, self.obs], axis=0)

    def all_actions(self) -> np.ndarray:
        if self.t_demo == 0:
            return self.actions
        return np.concatenate([self.demo_actions, self.actions], axis=0)

    def all_fdemo(self) -> np.ndarray:
        return np.concatenate([np.ones(self.t_demo), self.f_demo])

    def prev_actions(self) -> np.ndarray:
        acts = self.all_actions()
        prev = np.zeros_like(acts)
        prev[1:] = acts[:-1]
        return prev

    def prev_fdemo(self) -> np.ndarray:
        f = self.all_fdemo()
        prev = np.zeros_like(f)
        prev[1:] = f[:-1]
        return prev


class MimeticSNAIL(Net):
    """Sequence actor/critic: encoder -> TC block -> biased attention -> TC block.

    Per-step inputs are the encoded observation, the previously executed
    action, and the previous step's demonstration flag; the critic variant
    additionally receives a query action per step. The actor head emits a
    box-squashed action and, optionally, a task-termination probability;
    the critic head emits one value per step.
    """

    def __init__(self, cfg: SnailConfig, role: str, action_low=None, action_high=None,
                 seed: int = 0, dtype=np.float32, trainable: bool = True):
        if role not in ("actor", "critic"):
            raise ValueError(f"unknown role {role!r}")
        super().__init__(f"{cfg.describe()}:{role}", dtype)
        self.cfg = cfg
        self.role = role
        if role == "actor":
            low = np.asarray(action_low, dtype=self.dtype)
            high = np.asarray(action_high, dtype=self.dtype)
            self.action_center = (low + high) / 2.0
            self.action_half = (high - low) / 2.0

        if cfg.encoder == "conv":
            c_prev = cfg.image_shape[2]
            h, w = cfg.image_shape[0], cfg.image_shape[1]
            self._conv_shapes = []
            for ch in cfg.conv_channels:
                self._declare(f"enc.K{len(self._conv_shapes)}", (4 * 4 * c_prev, ch),
                              ("fan", 4 * 4 * c_prev))
                self._declare(f"enc.kb{len(self._conv_shapes)}", (ch,), "zeros")
                self._conv_shapes.append((4, 4, c_prev, ch))
                h, w = (h - 4) // 2 + 1, (w - 4) // 2 + 1
                c_prev = ch
            flat = h * w * c_prev
        else:
            flat = cfg.obs_dim
        self._declare("enc.Wf1", (flat, cfg.encoder_hidden), ("fan", flat))
        self._declare("enc.bf1", (cfg.encoder_hidden,), "zeros")
        self._declare("enc.Wf2", (cfg.encoder_hidden, cfg.latent_dim), ("fan", cfg.encoder_hidden))
        self._declare("enc.bf2", (cfg.latent_dim,), "zeros")

        c = cfg.latent_dim + cfg.action_dim + 1
        if role == "critic":
            c += cfg.action_dim
        c = _declare_tc(self, "tc1", c, cfg.tc_filters, cfg.seq_len)
        c = _declare_attention(self, "at", c, cfg.attn_key_dim, cfg.attn_value_dim)
        c = _declare_tc(self, "tc2", c, cfg.tc_filters, cfg.seq_len)
        out_dim = 1 if role == "critic" else cfg.action_dim + (1 if cfg.with_tf_head else 0)
        self._declare("head.W", (c, out_dim), ("fan", c))
        self._declare("head.b", (out_dim,), "zeros")
        self._build(seed, trainable)

    # -- encoding

    def _encode(self, obs_all: np.ndarray) -> Tensor:
        cfg = self.cfg
        if cfg.encoder == "conv":
            if obs_all.shape[1:] != tuple(cfg.image_shape):
                raise ShapeError(f"expected images {cfg.image_shape}, got {obs_all.shape[1:]}")
            h = _conv2d_steps(self, "enc", obs_all, self._conv_shapes,
                              [2] * len(self._conv_shapes), self.dtype, True)
        else:
            if obs_all.shape[1] != cfg.obs_dim:
                raise ShapeError(f"expected obs dim {cfg.obs_dim}, got {obs_all.shape[1]}")
            h = Tensor(np.asarray(obs_all, dtype=self.dtype))
        h = ad.relu(ad.add(ad.matmul(h, self.p("enc.Wf1")), self.p("enc.bf1")))
        return ad.add(ad.matmul(h, self.p("enc.Wf2")), self.p("enc.bf2"))

    def tape_forward(self, seq: SequenceInput, query_actions=None):
        cfg = self.cfg
        if seq.length > cfg.seq_len:
            raise SeqTooLongError(f"sequence {seq.length} exceeds L={cfg.seq_len}")
        latent = self._encode(seq.all_obs())
        parts = [
            latent,
            Tensor(np.asarray(seq.prev_actions(), dtype=self.dtype)),
            Tensor(np.asarray(seq.prev_fdemo(), dtype=self.dtype).reshape(-1, 1)),
        ]
        if self.role == "critic":
            if query_actions is None:
                raise ShapeError("critic forward requires query actions")
            q = query_actions if isinstance(query_actions, Tensor) else Tensor(
                np.asarray(query_actions, dtype=self.dtype))
            if q.data.shape != (seq.length, cfg.action_dim):
                raise ShapeError(
                    f"query actions must be ({seq.length}, {cfg.action_dim}), got {q.data.shape}")
            parts.append(q)
        x = ad.concat(parts, axis=1)
        x = _apply_tc(self, "tc1", x, cfg.tc_filters, cfg.seq_len)
        x = _apply_attention(self, "at", x, seq.time_index_vector)
        x = _apply_tc(self, "tc2", x, cfg.tc_filters, cfg.seq_len)
        out = ad.add(ad.matmul(x, self.p("head.W")), self.p("head.b"))
        if self.role == "critic":
            return ad.reshape(out, (-1,))
        raw = out[:, : cfg.action_dim]
        action = ad.add(ad.mul(ad.tanh(raw), self.action_half), self.action_center)
        if cfg.with_tf_head:
            f_tf = ad.sigmoid(out[:, cfg.action_dim])
            return action, f_tf
        return (action,)

    def act(self, seq: SequenceInput) -> np.ndarray:
        """Action for the latest experience step (deterministic)."""
        out = self.tape_forward(seq)
        return np.asarray(out[0].data[-1])

    def q_values(self, seq: SequenceInput, query_actions) -> np.ndarray:
        return np.asarray(self.tape_forward(seq, query_actions).data)
