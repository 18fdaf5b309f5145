"""Independently coded dense reference for the token transformer forward pass.

Everything here is plain numpy evaluated node by node, sharing no code with
fairformer.model; the attention core comes from the brute-force oracle module.
"""

import numpy as np
from scipy.special import erf

from fairformer.oracles import attention_direct


def layer_norm_direct(x, gain, bias, eps=1e-5):
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * gain + bias


def gelu_direct(x):
    return x * 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


def softmax_direct(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def forward_direct(params, stack_tensor):
    """Per-node forward pass; only supports heads=1 and attention readout."""
    cfg = params.config
    assert cfg.heads == 1
    p = {name: t.data for name, t in params.tensors.items()}
    logits = np.zeros((stack_tensor.shape[0], 2))
    for node in range(stack_tensor.shape[0]):
        x = stack_tensor[node] @ p["projection.weight"] + p["projection.bias"]
        for i in range(cfg.layers):
            pre = f"layer{i}"
            normed = layer_norm_direct(x, p[f"{pre}.norm_attn.gain"], p[f"{pre}.norm_attn.bias"])
            attended = attention_direct(
                normed,
                p[f"{pre}.wq.weight"], p[f"{pre}.wk.weight"], p[f"{pre}.wv.weight"],
                p[f"{pre}.wq.bias"], p[f"{pre}.wk.bias"], p[f"{pre}.wv.bias"])
            x = attended @ p[f"{pre}.wo.weight"] + p[f"{pre}.wo.bias"] + x
            normed2 = layer_norm_direct(x, p[f"{pre}.norm_ffn.gain"], p[f"{pre}.norm_ffn.bias"])
            hidden = gelu_direct(normed2 @ p[f"{pre}.ffn_in.weight"] + p[f"{pre}.ffn_in.bias"])
            x = hidden @ p[f"{pre}.ffn_out.weight"] + p[f"{pre}.ffn_out.bias"] + x
        weights = softmax_direct(x @ p["readout.query"].ravel())
        embedding = weights @ x
        logits[node] = embedding @ p["classifier.weight"] + p["classifier.bias"]
    return logits
