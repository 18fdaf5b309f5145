"""Per-node token transformer over hop stacks.

Each node carries its own short sequence of hop tokens; attention runs inside
that sequence only, so nodes never couple at inference and the cost stays
linear in the node count. Layers are pre-LN residual blocks: attention over
normalized tokens plus the skip, then a GELU feed-forward over normalized
tokens plus the skip. A learned-query softmax over the hop axis condenses the
final tokens into one embedding per node, which a linear head maps to two
class logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import FairformerError, ModelError
from .hops import HopStack


@dataclass(frozen=True)
class ModelConfig:
    k: int = 2
    t: int = 5
    d_hidden: int = 128
    layers: int = 1
    heads: int = 1
    dropout: float = 0.1
    readout: str = "attention"  # or "mean"
    ffn_multiplier: int = 4
    gelu_tanh: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.layers < 1:
            raise FairformerError("layers must be >= 1")
        if self.k < 0:
            raise FairformerError("k must be >= 0")
        if self.heads < 1 or self.d_hidden % self.heads != 0:
            raise FairformerError(
                f"d_hidden={self.d_hidden} must be divisible by heads={self.heads}")
        if self.readout not in ("attention", "mean"):
            raise FairformerError("readout must be 'attention' or 'mean'")
        if not 0.0 <= self.dropout < 1.0:
            raise FairformerError("dropout must lie in [0, 1)")

    @property
    def d_ff(self) -> int:
        return self.ffn_multiplier * self.d_hidden


@dataclass
class ModelParams:
    config: ModelConfig
    d_input: int
    tensors: dict = field(default_factory=dict)

    def trainable(self):
        return list(self.tensors.values())

    def state_copy(self) -> dict:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_state(self, state: dict) -> None:
        for name, values in state.items():
            self.tensors[name].data = values.copy()

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]


def init_model(cfg: ModelConfig, d_input: int) -> ModelParams:
    """Seed-controlled initialization: uniform(+-1/sqrt(fan_in)) linear maps."""
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams(config=cfg, d_input=d_input)

    def linear(name, fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        params.tensors[f"{name}.weight"] = ad.Tensor(
            rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True)
        params.tensors[f"{name}.bias"] = ad.Tensor(
            rng.uniform(-bound, bound, fan_out), requires_grad=True)

    def norm(name, dim):
        params.tensors[f"{name}.gain"] = ad.Tensor(np.ones(dim), requires_grad=True)
        params.tensors[f"{name}.bias"] = ad.Tensor(np.zeros(dim), requires_grad=True)

    linear("projection", d_input, cfg.d_hidden)
    for i in range(cfg.layers):
        prefix = f"layer{i}"
        norm(f"{prefix}.norm_attn", cfg.d_hidden)
        linear(f"{prefix}.wq", cfg.d_hidden, cfg.d_hidden)
        linear(f"{prefix}.wk", cfg.d_hidden, cfg.d_hidden)
        linear(f"{prefix}.wv", cfg.d_hidden, cfg.d_hidden)
        linear(f"{prefix}.wo", cfg.d_hidden, cfg.d_hidden)
        norm(f"{prefix}.norm_ffn", cfg.d_hidden)
        linear(f"{prefix}.ffn_in", cfg.d_hidden, cfg.d_ff)
        linear(f"{prefix}.ffn_out", cfg.d_ff, cfg.d_hidden)
    bound = 1.0 / np.sqrt(cfg.d_hidden)
    params.tensors["readout.query"] = ad.Tensor(
        rng.uniform(-bound, bound, (cfg.d_hidden, 1)), requires_grad=True)
    linear("classifier", cfg.d_hidden, 2)
    return params


def _maybe_dropout(t: ad.Tensor, p: float, training: bool, rng) -> ad.Tensor:
    if not training or p <= 0.0:
        return t
    mask = (rng.random(t.data.shape) >= p).astype(np.float64) / (1.0 - p)
    return ad.mul(t, ad.Tensor(mask))


def _linear(t: ad.Tensor, params: ModelParams, name: str) -> ad.Tensor:
    return ad.add(ad.matmul(t, params[f"{name}.weight"]), params[f"{name}.bias"])


def project_tokens(stack: HopStack | ad.Tensor, params: ModelParams) -> ad.Tensor:
    """Linear projection of every hop token into the hidden width."""
    tokens = stack if isinstance(stack, ad.Tensor) else ad.Tensor(stack.tensor)
    if tokens.data.shape[-1] != params.d_input:
        raise FairformerError(
            f"stack width {tokens.data.shape[-1]} does not match projection input {params.d_input}")
    return _linear(tokens, params, "projection")


def _attention(tokens: ad.Tensor, params: ModelParams, prefix: str, cfg: ModelConfig,
               training: bool, rng, collect=None) -> ad.Tensor:
    n, s, dh = tokens.data.shape
    h = cfg.heads
    dk = dh // h

    def split_heads(t):
        t = ad.reshape(t, (n, s, h, dk))
        t = ad.permute(t, (0, 2, 1, 3))
        return ad.reshape(t, (n * h, s, dk))

    q = split_heads(_linear(tokens, params, f"{prefix}.wq"))
    k = split_heads(_linear(tokens, params, f"{prefix}.wk"))
    v = split_heads(_linear(tokens, params, f"{prefix}.wv"))

    scores = ad.scale(ad.matmul(q, ad.transpose_last(k)), 1.0 / np.sqrt(dk))
    attn = ad.softmax_rows(scores)
    if collect is not None:
        collect.append(attn.data.copy())
    attn = _maybe_dropout(attn, cfg.dropout, training, rng)
    context = ad.matmul(attn, v)
    context = ad.reshape(context, (n, h, s, dk))
    context = ad.permute(context, (0, 2, 1, 3))
    context = ad.reshape(context, (n, s, dh))
    return _linear(context, params, f"{prefix}.wo")


def encoder_layer(tokens: ad.Tensor, params: ModelParams, layer_index: int,
                  training: bool = False, rng=None, collect_attention=None) -> ad.Tensor:
    """One pre-LN block: tokens + attention(LN(tokens)), then + FFN(LN(...))."""
    cfg = params.config
    prefix = f"layer{layer_index}"

    normed = ad.layer_norm(tokens, params[f"{prefix}.norm_attn.gain"],
                           params[f"{prefix}.norm_attn.bias"])
    attended = ad.add(_attention(normed, params, prefix, cfg, training, rng,
                                 collect=collect_attention), tokens)

    normed2 = ad.layer_norm(attended, params[f"{prefix}.norm_ffn.gain"],
                            params[f"{prefix}.norm_ffn.bias"])
    hidden = ad.gelu(_linear(normed2, params, f"{prefix}.ffn_in"), tanh_approx=cfg.gelu_tanh)
    hidden = _maybe_dropout(hidden, cfg.dropout, training, rng)
    out = ad.add(_linear(hidden, params, f"{prefix}.ffn_out"), attended)

    if not np.all(np.isfinite(out.data)):
        raise ModelError(f"non-finite activations after encoder layer {layer_index}")
    return out


def readout(tokens: ad.Tensor, params: ModelParams) -> ad.Tensor:
    """Condense the hop axis into one embedding per node.

    Attention mode: softmax over (tokens . query) weights the hop tokens;
    mean mode averages them uniformly.
    """
    cfg = params.config
    n, s, dh = tokens.data.shape
    if cfg.readout == "mean":
        weights = ad.Tensor(np.full((n, 1, s), 1.0 / s))
        pooled = ad.matmul(weights, tokens)
        return ad.reshape(pooled, (n, dh))
    scores = ad.matmul(tokens, params["readout.query"])  # (n, s, 1)
    weights = ad.softmax_rows(ad.reshape(scores, (n, s)))
    pooled = ad.matmul(ad.reshape(weights, (n, 1, s)), tokens)
    return ad.reshape(pooled, (n, dh))


def forward(params: ModelParams, stack: HopStack, training: bool = False,
            rng=None, collect_attention=None) -> ad.Tensor:
    """Hop stack -> per-node logits (n, 2). Deterministic when training=False."""
    if training and params.config.dropout > 0.0 and rng is None:
        raise FairformerError("training forward with dropout needs an rng")
    tokens = project_tokens(stack, params)
    for i in range(params.config.layers):
        tokens = encoder_layer(tokens, params, i, training=training, rng=rng,
                               collect_attention=collect_attention)
    embedding = readout(tokens, params)
    return _linear(embedding, params, "classifier")


def cross_entropy(logits: ad.Tensor, labels, node_indices) -> ad.Tensor:
    """Mean negative log-likelihood of the true class over the given nodes."""
    idx = np.asarray(node_indices, dtype=np.intp)
    if idx.size == 0:
        raise FairformerError("cross_entropy: empty node set")
    lab = np.asarray(labels)[idx]
    log_probs = ad.log_softmax_rows(logits)
    picked = ad.pick(log_probs, idx, lab)
    return ad.scale(ad.sum_all(picked), -1.0 / idx.size)


_MODEL_MAGIC = b"FFMD"
_MODEL_VERSION = 1


def save_model(path, params: ModelParams) -> None:
    """Checkpoint: config header (key=value text) followed by the parameter block."""
    import json
    import struct

    header = json.dumps({"d_input": params.d_input, **params.config.__dict__},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<B", _MODEL_VERSION))
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        ad.write_param_block(fh, params.tensors)


def load_model(path) -> ModelParams:
    import json
    import struct

    with open(path, "rb") as fh:
        if fh.read(4) != _MODEL_MAGIC:
            raise FairformerError(f"{path}: not a model checkpoint")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != _MODEL_VERSION:
            raise FairformerError(f"{path}: unsupported model checkpoint version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        tensors = ad.read_param_block(fh)
    d_input = header.pop("d_input")
    cfg = ModelConfig(**header)
    params = ModelParams(config=cfg, d_input=d_input)
    params.tensors = tensors
    return params
