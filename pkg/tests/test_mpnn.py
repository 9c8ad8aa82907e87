import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

import loop_oracle
from conftest import permuted, random_pair
from dgnn.core import autodiff as ad
from dgnn.core.checkpoint import load_checkpoint, save_checkpoint
from dgnn.core.dataset import ReactionSample
from dgnn.core.molgraph import join
from dgnn.core.mpnn import (
    GraphBatch,
    MpnnModel,
    embed_initial,
    forward,
    gru_params,
    init_params,
    message_step,
    predict,
    prepare,
    readout_concat,
    readout_gated_sum,
    readout_global_node,
)
from dgnn.core.settings import ModelConfig
from dgnn.errors import CheckpointError, ConfigError, GraphIndexError, ShapeError
from dgnn.utils.gradcheck import numeric_gradient

COMBOS = [("DG", "gated_sum"), ("FC", "gated_sum"), ("GN", "gated_sum"), ("GN", "GR"), ("GN", "CR"), ("DG", "CR")]


def small_config(strategy="GN", readout="gated_sum", seed=11, **kw):
    return ModelConfig(hidden=3, steps=2, net_width=4, strategy=strategy, readout=readout, seed=seed, **kw)


def random_state(rng, n, d):
    return ad.as_tensor(rng.normal(size=(n, d)))


def zero_out(params, *names):
    for name in names:
        params[name].data = np.zeros_like(params[name].data)


def test_config_requires_global_node_for_gr():
    with pytest.raises(ValueError):
        ModelConfig(strategy="DG", readout="GR")
    assert ModelConfig(readout="gr").readout == "GR"


def test_embed_initial_shapes_and_bias(tiny_config):
    params = init_params(tiny_config)
    out = embed_initial(ad.as_tensor(np.zeros((5, 13))), params)
    assert out.shape == (5, tiny_config.hidden)
    assert_array_equal(out.data, np.tile(params["embed.b"].data, (5, 1)))


def test_embed_initial_gradient(tiny_config):
    params = init_params(tiny_config)
    x = np.random.default_rng(0).normal(size=(4, 13))
    W = params["embed.W"]
    grads = ad.backward(ad.sum_all(ad.tanh(embed_initial(x, params))))
    numeric = numeric_gradient(lambda: ad.sum_all(ad.tanh(embed_initial(x, params))).item(), W.data)
    assert_allclose(grads[W], numeric, rtol=1e-4, atol=1e-8)


def test_message_step_zero_edge_net(tiny_config):
    params = init_params(tiny_config)
    zero_out(params, "edge.W2", "edge.b2")
    rng = np.random.default_rng(1)
    h = random_state(rng, 3, tiny_config.hidden)
    edges = (np.array([0, 1, 1, 2]), np.array([1, 0, 2, 1]))
    out = message_step(h, edges, rng.normal(size=(4, 8)), params)
    ref = ad.gru_cell(h, ad.as_tensor(np.zeros((3, tiny_config.hidden))), gru_params(params))
    assert_allclose(out.data, ref.data)


def test_message_step_identity_edge(tiny_config):
    params = init_params(tiny_config)
    d = tiny_config.hidden
    rng = np.random.default_rng(2)
    h = random_state(rng, 3, d)
    eye = ad.as_tensor(np.eye(d)[None, :, :])
    out = message_step(h, (np.array([2]), np.array([0])), np.zeros((1, 8)), params, edge_mats=eye)
    m = np.zeros((3, d))
    m[0] = h.data[2]
    ref = ad.gru_cell(h, ad.as_tensor(m), gru_params(params))
    assert_allclose(out.data, ref.data)


def test_message_step_bad_index(tiny_config):
    params = init_params(tiny_config)
    h = random_state(np.random.default_rng(0), 2, tiny_config.hidden)
    with pytest.raises(GraphIndexError):
        message_step(h, (np.array([0]), np.array([5])), np.zeros((1, 8)), params)


def test_message_step_matches_loop_on_path_graph(tiny_config):
    params = init_params(tiny_config.model_copy(update={"seed": 11}))
    rng = np.random.default_rng(11)
    h = rng.normal(size=(3, tiny_config.hidden))
    senders, receivers = np.array([0, 1, 1, 2]), np.array([1, 0, 2, 1])
    edge_attr = rng.normal(size=(4, 8))
    out = message_step(ad.as_tensor(h), (senders, receivers), edge_attr, params)
    ref = loop_oracle.message_step(h, senders, receivers, edge_attr, loop_oracle.arrays(params))
    assert_allclose(out.data, ref, rtol=0, atol=1e-10)


def test_gated_sum_empty_graph(tiny_config):
    params = init_params(tiny_config)
    empty = ad.as_tensor(np.zeros((0, tiny_config.hidden)))
    out = readout_gated_sum(empty, empty, params)
    assert out.shape == (1, tiny_config.out_width)
    assert_array_equal(out.data, 0.0)


def test_gated_sum_with_zero_gate(tiny_config):
    params = init_params(tiny_config)
    zero_out(params, "readout.i.W2", "readout.i.b2")
    rng = np.random.default_rng(3)
    hT, h0 = random_state(rng, 2, tiny_config.hidden), random_state(rng, 2, tiny_config.hidden)
    j = loop_oracle.arrays(params)
    expected = 0.5 * sum(loop_oracle.mlp3(hT.data[v], j, "readout.j") for v in range(2))
    assert_allclose(readout_gated_sum(hT, h0, params).data[0], expected, atol=1e-12)


def test_gated_sum_matches_loop(tiny_config):
    params = init_params(tiny_config.model_copy(update={"seed": 3}))
    rng = np.random.default_rng(3)
    hT, h0 = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))
    out = readout_gated_sum(ad.as_tensor(hT), ad.as_tensor(h0), params)
    ref = loop_oracle.gated_sum(hT, h0, loop_oracle.arrays(params), [0, 1])
    assert_allclose(out.data[0], ref, atol=1e-10)


def test_global_readout_equals_gated_sum_on_single_node(tiny_config):
    params = init_params(tiny_config.model_copy(update={"strategy": "GN", "readout": "GR"}))
    rng = np.random.default_rng(4)
    hT, h0 = random_state(rng, 1, 4), random_state(rng, 1, 4)
    assert_allclose(readout_global_node(hT, h0, 0, params).data, readout_gated_sum(hT, h0, params).data)


def test_global_readout_zero_gate_and_missing_node(tiny_config):
    params = init_params(tiny_config)
    zero_out(params, "readout.i.W2", "readout.i.b2")
    rng = np.random.default_rng(5)
    hT, h0 = random_state(rng, 3, 4), random_state(rng, 3, 4)
    expected = 0.5 * loop_oracle.mlp3(hT.data[2], loop_oracle.arrays(params), "readout.j")
    assert_allclose(readout_global_node(hT, h0, 2, params).data[0], expected, atol=1e-12)
    with pytest.raises(GraphIndexError):
        readout_global_node(hT, h0, None, params)


def test_concat_readout_without_message_steps(tiny_config):
    params = init_params(tiny_config.model_copy(update={"readout": "CR"}))
    rng = np.random.default_rng(6)
    # with only h0 retained the gate net sees width d
    params["readout.i.W0"] = ad.glorot(rng, 4, tiny_config.net_width, name="readout.i.W0")
    h0 = rng.normal(size=(3, 4))
    out = readout_concat([ad.as_tensor(h0)], params)
    P = loop_oracle.arrays(params)
    ref = sum(
        1.0 / (1.0 + np.exp(-loop_oracle.mlp3(h0[v], P, "readout.i"))) * loop_oracle.mlp3(h0[v], P, "readout.j")
        for v in range(3)
    )
    assert_allclose(out.data[0], ref, atol=1e-10)


def test_concat_readout_zero_gate_and_loop(tiny_config):
    config = tiny_config.model_copy(update={"readout": "CR"})
    params = init_params(config)
    rng = np.random.default_rng(7)
    hs = [rng.normal(size=(3, 4)) for _ in range(config.steps + 1)]
    out = readout_concat([ad.as_tensor(h) for h in hs], params)
    assert_allclose(out.data[0], loop_oracle.concat_readout(hs, loop_oracle.arrays(params), range(3)), atol=1e-10)

    zero_out(params, "readout.i.W2", "readout.i.b2")
    out = readout_concat([ad.as_tensor(h) for h in hs], params)
    P = loop_oracle.arrays(params)
    assert_allclose(out.data[0], 0.5 * sum(loop_oracle.mlp3(hs[-1][v], P, "readout.j") for v in range(3)), atol=1e-12)


@pytest.mark.parametrize("strategy,readout", COMBOS)
@pytest.mark.parametrize("seed", range(20))
def test_batched_prediction_matches_loop(strategy, readout, seed):
    config = small_config(strategy, readout, seed=seed)
    params = init_params(config)
    sample = random_pair(seed)
    assert predict(sample, config, params) == pytest.approx(loop_oracle.predict(sample, config, params), abs=1e-10)


@pytest.mark.parametrize("strategy,readout", COMBOS)
def test_batch_equals_single_predictions(strategy, readout):
    config = small_config(strategy, readout)
    params = init_params(config)
    samples = [random_pair(s) for s in range(5)]
    batch = GraphBatch.collate([prepare(s, strategy) for s in samples])
    batched = forward(batch, config, params).data.reshape(-1)
    single = [predict(s, config, params) for s in samples]
    assert_allclose(batched, single, atol=1e-12)


@pytest.mark.parametrize("strategy", ["DG", "FC", "GN"])
def test_permutation_invariance(sample, strategy):
    config = small_config(strategy)
    params = init_params(config)
    ref = predict(sample, config, params)
    rng = np.random.default_rng(0)
    for _ in range(50):
        assert abs(predict(permuted(sample, rng), config, params) - ref) < 1e-6


def test_dg_role_order_matters(sample):
    config = small_config("DG")
    params = init_params(config)
    swapped = ReactionSample(sample.id, sample.acyl_halide, sample.alcohol)
    assert predict(sample, config, params) != predict(swapped, config, params)


def test_prediction_is_deterministic(sample):
    config = ModelConfig(hidden=8, steps=3, net_width=16, seed=0)
    a = predict(sample, config, init_params(config))
    b = predict(sample, config, init_params(config))
    assert a == b


@pytest.mark.parametrize("strategy,readout", COMBOS)
def test_end_to_end_gradients(sample, strategy, readout):
    config = small_config(strategy, readout)
    params = init_params(config)
    # zero biases put hidden units exactly on the ReLU kink
    rng = np.random.default_rng(0)
    for p in params.values():
        if p.data.ndim == 1:
            p.data[...] = rng.normal(scale=0.3, size=p.data.shape)
    prepared = [prepare(sample, strategy)]

    def build():
        return ad.sum_all(forward(GraphBatch.collate(prepared), config, params))

    grads = ad.backward(build())
    for name, p in params.items():
        numeric = numeric_gradient(lambda: build().item(), p.data)
        assert_allclose(grads.get(p, np.zeros_like(p.data)), numeric, rtol=1e-4, atol=1e-7, err_msg=name)


def _states_after_steps(config, params, x, batch):
    h = embed_initial(ad.as_tensor(x), params)
    for _ in range(config.steps):
        h = message_step(h, (batch.senders, batch.receivers), batch.edge_attr, params)
    return h.data


@pytest.mark.parametrize("strategy,reaches", [("GN", True), ("DG", False)])
def test_information_crosses_molecules_only_with_global_node(sample, strategy, reaches):
    config = small_config(strategy)
    params = init_params(config)
    batch = GraphBatch.collate([prepare(sample, strategy)])
    a = sample.alcohol.num_atoms
    x = batch.x.copy()
    before = _states_after_steps(config, params, x, batch)
    x[a] += 0.5  # first atom of the acyl halide
    after = _states_after_steps(config, params, x, batch)
    changed = not np.allclose(before[:a], after[:a], rtol=0, atol=1e-14)
    assert changed == reaches


def test_wrong_param_shapes_rejected(tmp_path, sample):
    config = small_config("GN")
    model = MpnnModel(config)
    save_checkpoint(tmp_path / "ok.json", model)
    text = (tmp_path / "ok.json").read_text().replace('"hidden": 3', '"hidden": 5')
    (tmp_path / "bad.json").write_text(text)
    with pytest.raises(ShapeError):
        load_checkpoint(tmp_path / "bad.json")
    (tmp_path / "junk.json").write_text('{"format": "other"}')
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.json")


def test_checkpoint_round_trip_is_bit_exact(tmp_path, sample):
    config = small_config("GN", "CR", norm_columns=True, norm_rows=True)
    model = MpnnModel(config, label_mean=-7.25, label_std=3.5)
    model.fit_normalizer([sample])
    save_checkpoint(tmp_path / "m.json", model)
    loaded = load_checkpoint(tmp_path / "m.json")
    assert loaded.config == config
    assert loaded.label_mean == -7.25 and loaded.label_std == 3.5
    assert loaded.predict(sample) == model.predict(sample)


def test_forward_rejects_gr_without_global_node(sample):
    config = small_config("GN", "GR")
    params = init_params(config)
    bad = config.model_construct(**dict(config.model_dump(), strategy="FC"))
    with pytest.raises(ConfigError):
        forward(GraphBatch.collate([prepare(sample, "FC")]), bad, params)


def test_join_feeds_prepare(sample):
    jg = join(sample, "GN")
    prepared = prepare(sample, "GN")
    assert_array_equal(prepared.x, jg.x)
    assert prepared.global_node_index == jg.global_node_index


@pytest.mark.parametrize("corrupt", [
    lambda p: p.update(config={"hidden": "many"}),
    lambda p: p.update(config=None),
    lambda p: p.pop("params"),
    lambda p: p.pop("label_mean"),
    lambda p: p.update(normalizer={"columns": True}),
])
def test_malformed_checkpoint_is_a_checkpoint_error(tmp_path, sample, corrupt):
    model = MpnnModel(small_config("GN", norm_columns=True, norm_rows=True))
    model.fit_normalizer([sample])
    save_checkpoint(tmp_path / "ok.json", model)
    payload = json.loads((tmp_path / "ok.json").read_text())
    corrupt(payload)
    (tmp_path / "bad.json").write_text(json.dumps(payload))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.json")
