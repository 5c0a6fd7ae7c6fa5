"""GRU/LSTM and convolutional-embedding Transformer classifiers.

Models are functional: parameters live in a ``dict[str, np.ndarray]`` inside
:class:`ModelState` and forward passes wrap them in :class:`Tensor` leaves, so
the same code serves training, inference and gradient checking.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Union

import numpy as np

from . import numerics as nx
from .numerics import ShapeError, Tensor
from .types import NUM_CLASSES, NUM_FEATURES, WINDOW_LEN


@dataclass(frozen=True)
class RnnSpec:
    kind: str = "gru"  # "gru" or "lstm"
    num_layers: int = 3
    hidden_size: int = 40
    dropout_p: float = 0.4
    input_features: int = NUM_FEATURES
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        if self.kind not in ("gru", "lstm"):
            raise ValueError(f"unknown recurrent kind {self.kind!r}")
        if self.num_layers < 1 or self.hidden_size < 1:
            raise ValueError("num_layers and hidden_size must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def family(self) -> str:
        return self.kind

    @property
    def gates(self) -> int:
        return 3 if self.kind == "gru" else 4


@dataclass(frozen=True)
class TransformerSpec:
    d_model: int = 8
    num_heads: int = 1
    dropout_p: float = 0.2
    l2_lambda: float = 0.2
    num_classes: int = NUM_CLASSES
    seq_len: int = WINDOW_LEN
    input_features: int = NUM_FEATURES
    conv_kernel: int = 7
    conv_stride: int = 2
    conv_channels: int = 0  # 0 means d_model
    num_blocks: int = 1
    ff_dim: int = 32
    attention_dropout: bool = True
    embedding_dropout: bool = True

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by num_heads ({self.num_heads})")
        if self.d_model % 2:
            raise ValueError("d_model must be even for the sin/cos position encoding")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.L_embed < 1:
            raise ValueError("convolution leaves no time steps")

    family = "transformer"

    @property
    def channels(self) -> int:
        return self.conv_channels or self.d_model

    @property
    def conv_padding(self) -> int:
        return (self.conv_kernel - 1) // 2

    @property
    def L_embed(self) -> int:
        return (self.seq_len + 2 * self.conv_padding - self.conv_kernel) // self.conv_stride + 1


ModelSpec = Union[RnnSpec, TransformerSpec]


def spec_from_dict(d: dict) -> ModelSpec:
    d = dict(d)
    family = d.pop("family")
    if family in ("gru", "lstm"):
        d["kind"] = family
        return RnnSpec(**{k: v for k, v in d.items() if k in _field_names(RnnSpec)})
    if family == "transformer":
        return TransformerSpec(**{k: v for k, v in d.items() if k in _field_names(TransformerSpec)})
    raise ValueError(f"unknown model family {family!r}")


def spec_to_dict(spec: ModelSpec) -> dict:
    d = asdict(spec)
    d["family"] = spec.family
    return d


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def default_spec(family: str) -> ModelSpec:
    """Hyperparameters of the best model per family."""
    family = family.lower()
    if family == "gru":
        return RnnSpec("gru", num_layers=3, hidden_size=40, dropout_p=0.4)
    if family == "lstm":
        return RnnSpec("lstm", num_layers=2, hidden_size=48, dropout_p=0.4)
    if family == "transformer":
        return TransformerSpec(d_model=8, num_heads=1, dropout_p=0.2, l2_lambda=0.2)
    raise ValueError(f"unknown model family {family!r}")


# -- parameter shapes ------------------------------------------------------------------
def parameter_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    if isinstance(spec, RnnSpec):
        g, h = spec.gates, spec.hidden_size
        for layer in range(spec.num_layers):
            n_in = spec.input_features if layer == 0 else h
            shapes[f"rnn.{layer}.w_ih"] = (n_in, g * h)
            shapes[f"rnn.{layer}.w_hh"] = (h, g * h)
            shapes[f"rnn.{layer}.b_ih"] = (g * h,)
            shapes[f"rnn.{layer}.b_hh"] = (g * h,)
        shapes["head.w"] = (h, spec.num_classes)
        shapes["head.b"] = (spec.num_classes,)
        return shapes
    d, c, L = spec.d_model, spec.channels, spec.L_embed
    shapes["embed.temporal.w"] = (c, 1, spec.conv_kernel)
    shapes["embed.temporal.b"] = (c,)
    shapes["embed.spatial.w"] = (spec.input_features * c, d)
    shapes["embed.spatial.b"] = (d,)
    for blk in range(spec.num_blocks):
        p = f"block.{blk}"
        for name in ("wq", "wk", "wv", "wo"):
            shapes[f"{p}.attn.{name}"] = (d, d)
        shapes[f"{p}.attn.bo"] = (d,)
        shapes[f"{p}.attn.rel"] = (2 * L - 1, spec.num_heads)
        shapes[f"{p}.ln1.gamma"] = (d,)
        shapes[f"{p}.ln1.beta"] = (d,)
        shapes[f"{p}.ff.w1"] = (d, spec.ff_dim)
        shapes[f"{p}.ff.b1"] = (spec.ff_dim,)
        shapes[f"{p}.ff.w2"] = (spec.ff_dim, d)
        shapes[f"{p}.ff.b2"] = (d,)
        shapes[f"{p}.ln2.gamma"] = (d,)
        shapes[f"{p}.ln2.beta"] = (d,)
    shapes["head.w"] = (2 * d, spec.num_classes)
    shapes["head.b"] = (spec.num_classes,)
    return shapes


def _fan_in(name: str, shape: tuple[int, ...]) -> int:
    if name.endswith("temporal.w"):
        return shape[1] * shape[2]
    return shape[0]


def init_parameters(spec: ModelSpec, seed: int) -> dict[str, np.ndarray]:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases, relative weights and LN shifts zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(spec).items():
        leaf = name.rsplit(".", 1)[1]
        if leaf == "gamma":
            params[name] = np.ones(shape)
        elif leaf.startswith("b") or leaf in ("rel", "beta"):
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(_fan_in(name, shape))
            params[name] = rng.uniform(-bound, bound, shape)
    return params


@dataclass
class ModelState:
    spec: ModelSpec
    parameters: dict[str, np.ndarray]
    rng_seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        expected = parameter_shapes(self.spec)
        if set(expected) != set(self.parameters):
            missing = sorted(set(expected) ^ set(self.parameters))
            raise ValueError(f"parameter names do not match the spec: {missing}")
        for name, shape in expected.items():
            arr = np.asarray(self.parameters[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"parameter {name} has shape {arr.shape}, expected {shape}")
            self.parameters[name] = arr

    @classmethod
    def initialize(cls, spec: ModelSpec, seed: int = 0) -> "ModelState":
        return cls(spec, init_parameters(spec, seed), seed)

    @property
    def family(self) -> str:
        return self.spec.family

    def num_parameters(self) -> int:
        return int(sum(a.size for a in self.parameters.values()))

    def copy(self) -> "ModelState":
        return ModelState(self.spec, {k: v.copy() for k, v in self.parameters.items()}, self.rng_seed, dict(self.meta))


# -- recurrent models -----------------------------------------------------------------------
def _check_input(x: Tensor, features: int, seq_len: int | None = None) -> None:
    if x.ndim != 3 or x.shape[2] != features or (seq_len is not None and x.shape[1] != seq_len):
        want = f"(batch, {seq_len if seq_len else 'T'}, {features})"
        raise ShapeError(f"input has shape {x.shape}, expected {want}")


def _gru_layer(x: Tensor, w_ih, w_hh, b_ih, b_hh, h_size: int) -> list[Tensor]:
    batch, steps, _ = x.shape
    gi = x @ w_ih + b_ih  # (B, T, 3H)
    h = Tensor(np.zeros((batch, h_size)))
    outs = []
    for t in range(steps):
        gh = h @ w_hh + b_hh
        gi_t = gi[:, t, :]
        rz = nx.sigmoid(gi_t[:, : 2 * h_size] + gh[:, : 2 * h_size])
        r, z = rz[:, :h_size], rz[:, h_size:]
        n = nx.tanh(gi_t[:, 2 * h_size:] + r * gh[:, 2 * h_size:])
        h = n + z * (h - n)  # (1 - z) * n + z * h
        outs.append(h)
    return outs


def _lstm_layer(x: Tensor, w_ih, w_hh, b_ih, b_hh, h_size: int) -> list[Tensor]:
    batch, steps, _ = x.shape
    gi = x @ w_ih + (b_ih + b_hh)  # (B, T, 4H), gate order i, f, g, o
    h = Tensor(np.zeros((batch, h_size)))
    c = Tensor(np.zeros((batch, h_size)))
    outs = []
    for t in range(steps):
        gates = gi[:, t, :] + h @ w_hh
        ifo = nx.sigmoid(nx.concat([gates[:, : 2 * h_size], gates[:, 3 * h_size:]], axis=1))
        g = nx.tanh(gates[:, 2 * h_size: 3 * h_size])
        i, f, o = ifo[:, :h_size], ifo[:, h_size: 2 * h_size], ifo[:, 2 * h_size:]
        c = f * c + i * g
        h = o * nx.tanh(c)
        outs.append(h)
    return outs


def rnn_logits(params: dict[str, Tensor], spec: RnnSpec, x: Tensor, train: bool = False,
               rng: np.random.Generator | None = None, fused: bool = True) -> Tensor:
    """Stacked recurrent layers; the last layer's final hidden state feeds the linear head.

    ``fused=False`` runs the step-by-step cell composition instead of the fused
    sequence primitive (same maths, slower; used to cross-check).
    """
    _check_input(x, spec.input_features)
    seq = x
    for layer in range(spec.num_layers):
        p = f"rnn.{layer}"
        weights = (params[f"{p}.w_ih"], params[f"{p}.w_hh"], params[f"{p}.b_ih"], params[f"{p}.b_hh"])
        if fused:
            fn = nx.gru_sequence if spec.kind == "gru" else nx.lstm_sequence
            seq = fn(seq, *weights)
        else:
            layer_fn = _gru_layer if spec.kind == "gru" else _lstm_layer
            seq = nx.stack(layer_fn(seq, *weights, spec.hidden_size), axis=1)
        if layer < spec.num_layers - 1:
            seq = nx.dropout(seq, spec.dropout_p, rng, train)
    h_last = seq[:, -1, :]
    return h_last @ params["head.w"] + params["head.b"]


# -- transformer ---------------------------------------------------------------------------
def tape_encoding(length: int, d_model: int) -> np.ndarray:
    """Sin/cos position table with frequencies 10000^(-2k/d) * d / L."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    k = np.arange(d_model // 2)
    omega = np.power(10000.0, -2.0 * k / d_model) * d_model / length
    pos = np.arange(length)[:, None]
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(pos * omega)
    table[:, 1::2] = np.cos(pos * omega)
    return table


def relative_index(length: int) -> np.ndarray:
    """Index into a (2L-1)-row table for offset i - j, shape (L, L)."""
    i = np.arange(length)
    return i[:, None] - i[None, :] + (length - 1)


def erpe_attention(x: Tensor, wq, wk, wv, rel, heads: int, train: bool = False, dropout_p: float = 0.0,
                   rng: np.random.Generator | None = None) -> Tensor:
    """Multi-head attention with a learnable relative scalar added after softmax.

    out_i = sum_j (softmax_j(q_i . k_j / sqrt(d_h)) + w[i - j]) v_j, per head, heads concatenated.
    ``rel`` is ``None`` for plain softmax attention.
    """
    x = nx.as_tensor(x)
    batch, length, d = x.shape
    dh = d // heads
    if rel is not None:
        rel = nx.as_tensor(rel)
        if rel.shape != (2 * length - 1, heads):
            raise ShapeError(
                f"relative table has shape {rel.shape}, expected {(2 * length - 1, heads)} for length {length}"
            )

    def split(t: Tensor) -> Tensor:
        return t.reshape(batch, length, heads, dh).transpose(0, 2, 1, 3)  # (B, h, L, dh)

    q, k, v = split(x @ wq), split(x @ wk), split(x @ wv)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    weights = nx.softmax(scores, axis=-1)
    if train and dropout_p > 0:
        weights = nx.dropout(weights, dropout_p, rng, train)
    if rel is not None:
        table = rel[relative_index(length)]  # (L, L, h)
        weights = weights + table.transpose(2, 0, 1)
    out = weights @ v  # (B, h, L, dh)
    return out.transpose(0, 2, 1, 3).reshape(batch, length, d)


def transformer_embed(params, spec: TransformerSpec, x: Tensor) -> Tensor:
    """Temporal conv per variate, then a spatial conv spanning all variates -> (B, L_embed, d)."""
    batch, steps, nvar = x.shape
    c = spec.channels
    per_var = x.transpose(0, 2, 1).reshape(batch * nvar, 1, steps)
    tconv = nx.conv1d(per_var, params["embed.temporal.w"], params["embed.temporal.b"],
                      stride=spec.conv_stride, padding=spec.conv_padding)
    tconv = nx.relu(tconv)  # (B*V, C, L)
    L = tconv.shape[2]
    feats = tconv.reshape(batch, nvar, c, L).transpose(0, 3, 1, 2).reshape(batch, L, nvar * c)
    return nx.relu(feats @ params["embed.spatial.w"] + params["embed.spatial.b"])


def transformer_logits(params: dict[str, Tensor], spec: TransformerSpec, x: Tensor, train: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
    _check_input(x, spec.input_features, spec.seq_len)
    try:
        emb = transformer_embed(params, spec, x)
    except ShapeError as exc:
        raise ShapeError(f"embedding block: {exc}") from exc
    if emb.shape[1:] != (spec.L_embed, spec.d_model):
        raise ShapeError(f"embedding block produced {emb.shape}, expected (B, {spec.L_embed}, {spec.d_model})")
    h = emb + tape_encoding(spec.L_embed, spec.d_model)
    if spec.embedding_dropout:
        h = nx.dropout(h, spec.dropout_p, rng, train)
    for blk in range(spec.num_blocks):
        p = f"block.{blk}"
        try:
            att = erpe_attention(h, params[f"{p}.attn.wq"], params[f"{p}.attn.wk"], params[f"{p}.attn.wv"],
                                 params[f"{p}.attn.rel"], spec.num_heads, train,
                                 spec.dropout_p if spec.attention_dropout else 0.0, rng)
            att = att @ params[f"{p}.attn.wo"] + params[f"{p}.attn.bo"]
            h = nx.layer_norm(h + att, params[f"{p}.ln1.gamma"], params[f"{p}.ln1.beta"])
            ff = nx.relu(h @ params[f"{p}.ff.w1"] + params[f"{p}.ff.b1"]) @ params[f"{p}.ff.w2"] + params[f"{p}.ff.b2"]
            ff = nx.dropout(ff, spec.dropout_p, rng, train)
            h = nx.layer_norm(h + ff, params[f"{p}.ln2.gamma"], params[f"{p}.ln2.beta"])
        except ShapeError as exc:
            raise ShapeError(f"attention block {blk}: {exc}") from exc
    pooled = nx.concat([h.mean(axis=1), h.max(axis=1)], axis=1)  # (B, 2d)
    return pooled @ params["head.w"] + params["head.b"]


# -- public entry points -------------------------------------------------------------------
def as_param_tensors(state_or_params, requires_grad: bool = False) -> dict[str, Tensor]:
    params = state_or_params.parameters if isinstance(state_or_params, ModelState) else state_or_params
    return {k: v if isinstance(v, Tensor) else Tensor(v, requires_grad=requires_grad) for k, v in params.items()}


def logits(spec: ModelSpec, params: dict[str, Tensor], x, train: bool = False,
           rng: np.random.Generator | None = None) -> Tensor:
    x = nx.as_tensor(x)
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if isinstance(spec, RnnSpec):
        return rnn_logits(params, spec, x, train, rng)
    return transformer_logits(params, spec, x, train, rng)


def rnn_forward(state: ModelState, x, train: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    if not isinstance(state.spec, RnnSpec):
        raise TypeError("rnn_forward needs a GRU or LSTM model")
    with nx.no_grad():
        return nx.softmax(logits(state.spec, as_param_tensors(state), x, train, rng), axis=-1).data


def transformer_forward(state: ModelState, x, train: bool = False,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    if not isinstance(state.spec, TransformerSpec):
        raise TypeError("transformer_forward needs a Transformer model")
    with nx.no_grad():
        return nx.softmax(logits(state.spec, as_param_tensors(state), x, train, rng), axis=-1).data


def predict_proba(state: ModelState, x, batch_size: int = 512) -> np.ndarray:
    """Class probabilities for a (N, 40, 21) or (40, 21) array, evaluation mode."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    params = as_param_tensors(state)
    out = []
    with nx.no_grad():
        for start in range(0, len(x), batch_size):
            z = logits(state.spec, params, x[start:start + batch_size], train=False)
            out.append(nx.softmax(z, axis=-1).data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, state.spec.num_classes))
