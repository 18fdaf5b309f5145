import numpy as np
import pytest

import fairformer.autodiff as ad
from fairformer.errors import FairformerError, ModelError
from fairformer.hops import HopStack
from fairformer.metrics import predict_labels, statistical_parity
from fairformer.model import (ModelConfig, cross_entropy, encoder_layer, forward, init_model,
                              project_tokens, readout)
from fairformer.oracles import fd_gradient
from model_oracle import forward_direct


def make_stack(n=5, k=2, d=6, seed=0):
    rng = np.random.default_rng(seed)
    return HopStack(tensor=rng.standard_normal((n, k + 1, d)), k=k, normalization="raw")


def small_params(d_input=6, **kw):
    cfg = ModelConfig(**{"k": 2, "t": 0, "d_hidden": 8, "layers": 1, "heads": 1,
                         "dropout": 0.0, "seed": 3, **kw})
    return init_model(cfg, d_input)


def test_projection_identity_passthrough():
    stack = make_stack(n=3, k=1, d=8)
    params = small_params(d_input=8, d_hidden=8)
    params.tensors["projection.weight"].data = np.eye(8)
    params.tensors["projection.bias"].data = np.zeros(8)
    tokens = project_tokens(stack, params)
    assert np.allclose(tokens.data, stack.tensor, atol=1e-15)


def test_projection_matches_matmul_oracle():
    stack = make_stack(n=4, k=3, d=5, seed=2)
    params = small_params(d_input=5)
    tokens = project_tokens(stack, params)
    w = params["projection.weight"].data
    b = params["projection.bias"].data
    for v in range(4):
        want = stack.tensor[v] @ w + b
        assert np.allclose(tokens.data[v], want, atol=1e-12)


def test_projection_k_zero_single_token():
    stack = make_stack(n=3, k=0, d=6)
    tokens = project_tokens(stack, small_params())
    assert tokens.data.shape == (3, 1, 8)


def test_projection_width_mismatch():
    with pytest.raises(FairformerError):
        project_tokens(make_stack(d=4), small_params(d_input=6))


def test_encoder_singleton_attention_weight_is_one():
    stack = make_stack(n=2, k=0, d=6, seed=5)
    params = small_params()
    tokens = project_tokens(stack, params)
    collected = []
    encoder_layer(tokens, params, 0, collect_attention=collected)
    assert np.allclose(collected[0], 1.0)


def test_encoder_identical_tokens_attend_uniformly():
    rng = np.random.default_rng(7)
    token = rng.standard_normal(6)
    stack = HopStack(tensor=np.tile(token, (3, 2, 1)), k=1, normalization="raw")
    params = small_params()
    tokens = project_tokens(stack, params)
    collected = []
    encoder_layer(tokens, params, 0, collect_attention=collected)
    assert np.allclose(collected[0], 0.5, atol=1e-12)


def test_attention_rows_sum_to_one_every_layer():
    stack = make_stack(n=4, k=3, d=6, seed=8)
    params = small_params(layers=3)
    collected = []
    forward(params, stack, collect_attention=collected)
    assert len(collected) == 3
    for attn in collected:
        assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-9)


def test_encoder_matches_direct_oracle():
    stack = make_stack(n=6, k=3, d=7, seed=9)
    params = small_params(d_input=7, d_hidden=8)
    logits = forward(params, stack)
    want = forward_direct(params, stack.tensor)
    assert np.max(np.abs(logits.data - want)) <= 1e-9


def test_multihead_reduces_to_single_head_for_one_head():
    stack = make_stack(n=3, k=2, d=6, seed=10)
    params = small_params(heads=1)
    logits = forward(params, stack)
    want = forward_direct(params, stack.tensor)
    assert np.max(np.abs(logits.data - want)) <= 1e-12


def test_two_heads_run_and_differ_from_one_head():
    stack = make_stack(n=3, k=2, d=6, seed=11)
    one = forward(small_params(heads=1), stack)
    two = forward(small_params(heads=2), stack)
    assert one.data.shape == two.data.shape == (3, 2)
    assert not np.allclose(one.data, two.data)


def test_readout_uniform_when_tokens_equal():
    rng = np.random.default_rng(12)
    token = rng.standard_normal(8)
    tokens = ad.Tensor(np.tile(token, (2, 4, 1)))
    params = small_params()
    pooled = readout(tokens, params)
    assert np.allclose(pooled.data, token, atol=1e-12)


def test_readout_zero_query_is_uniform_mean():
    tokens = ad.Tensor(np.random.default_rng(13).standard_normal((3, 4, 8)))
    params = small_params()
    params.tensors["readout.query"].data = np.zeros((8, 1))
    pooled = readout(tokens, params)
    assert np.allclose(pooled.data, tokens.data.mean(axis=1), atol=1e-12)


def test_readout_mean_mode():
    tokens = ad.Tensor(np.random.default_rng(14).standard_normal((3, 4, 8)))
    params = small_params(readout="mean")
    pooled = readout(tokens, params)
    assert np.allclose(pooled.data, tokens.data.mean(axis=1), atol=1e-12)


def test_constant_classifier_is_parity_fair():
    stack = make_stack(n=10, k=1, d=6, seed=15)
    params = small_params(k=1)
    params.tensors["classifier.weight"].data = np.zeros((8, 2))
    params.tensors["classifier.bias"].data = np.zeros(2)
    logits = forward(params, stack)
    pred = predict_labels(logits.data)
    assert np.all(pred == 0)
    sens = np.array([0, 1] * 5)
    assert statistical_parity(pred, sens).delta == 0.0


def test_forward_is_permutation_equivariant():
    stack = make_stack(n=7, k=2, d=6, seed=16)
    params = small_params()
    logits = forward(params, stack).data
    perm = np.random.default_rng(17).permutation(7)
    permuted = HopStack(tensor=stack.tensor[perm], k=2, normalization="raw")
    logits_perm = forward(params, permuted).data
    assert np.allclose(logits_perm, logits[perm], atol=1e-12)


def test_forward_nan_reports_layer():
    stack = make_stack(n=2, k=1, d=6, seed=18)
    params = small_params(layers=2)
    params.tensors["layer1.ffn_out.weight"].data[0, 0] = np.inf
    with pytest.raises(ModelError, match="layer 1"):
        forward(params, stack)


def test_dropout_training_vs_eval():
    stack = make_stack(n=4, k=2, d=6, seed=19)
    params = small_params(dropout=0.5)
    eval_a = forward(params, stack).data
    eval_b = forward(params, stack).data
    assert np.array_equal(eval_a, eval_b)
    rng = np.random.default_rng(0)
    train_out = forward(params, stack, training=True, rng=rng).data
    assert not np.allclose(train_out, eval_a)
    with pytest.raises(FairformerError):
        forward(params, stack, training=True)


def test_cross_entropy_uniform_logits():
    logits = ad.Tensor(np.zeros((4, 2)))
    loss = cross_entropy(logits, [0, 1, 0, 1], np.arange(4))
    assert abs(float(loss.data) - np.log(2.0)) < 1e-12


def test_end_to_end_gradients_match_finite_differences():
    stack = make_stack(n=5, k=2, d=6, seed=20)
    params = small_params()
    labels = np.array([0, 1, 1, 0, 1])
    idx = np.arange(5)

    names = ["projection.weight", "layer0.wq.weight", "readout.query"]

    logits = forward(params, stack)
    loss = cross_entropy(logits, labels, idx)
    ad.backward(loss)
    got = {name: params[name].grad.copy() for name in names}

    def loss_at(arrays):
        saved = [params[name].data.copy() for name in names]
        for name, arr in zip(names, arrays):
            params.tensors[name].data = arr.copy()
        out = float(cross_entropy(forward(params, stack), labels, idx).data)
        for name, arr in zip(names, saved):
            params.tensors[name].data = arr
        return out

    fd = fd_gradient(loss_at, [params[name].data.copy() for name in names])
    for name, want in zip(names, fd):
        denom = max(np.max(np.abs(want)), 1e-8)
        assert np.max(np.abs(got[name] - want)) / denom <= 1e-4


def test_model_checkpoint_roundtrip(tmp_path):
    from fairformer.model import load_model, save_model
    stack = make_stack(n=3, k=2, d=6, seed=21)
    params = small_params()
    path = tmp_path / "model.bin"
    save_model(path, params)
    loaded = load_model(path)
    assert loaded.config == params.config
    assert loaded.d_input == params.d_input
    out_a = forward(params, stack).data
    out_b = forward(loaded, stack).data
    assert np.array_equal(out_a, out_b)
