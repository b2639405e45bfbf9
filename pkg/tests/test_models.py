"""Forecaster forward passes, structure accounting and the output bound."""

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_rnn, unrolled_rnn
from sparsets.autodiff import check_gradient
from sparsets.errors import ShapeError
from sparsets.models import (
    KIND_V,
    Network,
    NetworkSpec,
    count_hidden_links,
    expected_param_count,
    lemma_output_bound,
    load_checkpoint,
    mlp_forward,
    prune_dead_units,
    rnn_forward,
    save_checkpoint,
    selected_input_lags,
)


def test_zero_params_zero_outputs():
    spec = NetworkSpec("rnn", (3, 4, 2), ("tanh",), warmup=1)
    net = Network(spec)
    out, usable = rnn_forward(spec, np.zeros(net.n_params), np.ones(net.n_params), np.ones((4, 3)))
    assert np.all(out == 0.0)
    assert list(usable) == [False, True, True, True]


def test_identity_mask_equals_unmasked(rng):
    spec, params, _ = random_rnn(rng)
    net = Network(spec)
    w = rng.normal(size=(5, spec.warmup + 2, spec.layer_widths[0]))
    assert np.array_equal(net.forward(params, None, w, "all"), net.forward(params, np.ones(net.n_params), w, "all"))


def test_matches_unrolled_oracle(rng):
    for _ in range(20):
        spec, params, mask = random_rnn(rng)
        window = rng.uniform(-1, 1, size=(spec.warmup + 3, spec.layer_widths[0]))
        out, _ = rnn_forward(spec, params, mask, window)
        np.testing.assert_allclose(out, unrolled_rnn(spec, params, mask, window), atol=1e-12, rtol=0)


def test_param_count_and_layout():
    spec = NetworkSpec("rnn", (3, 4, 5, 2), ("tanh", "relu"))
    assert expected_param_count(spec) == 4 * 3 + 16 + 4 + 5 * 4 + 25 + 5 + 2 * 5 + 2
    net = Network(spec)
    assert net.n_params == expected_param_count(spec)
    assert net.layout.entry(0) == (1, "w", 0, 0)
    mlp = NetworkSpec("mlp", (3, 4, 2), ("relu",))
    assert Network(mlp).n_params == 12 + 4 + 8 + 2


def test_spec_rejects_unbounded_first_rnn_activation():
    with pytest.raises(ValueError):
        NetworkSpec("rnn", (2, 3, 1), ("relu",))
    NetworkSpec("mlp", (2, 3, 1), ("relu",))


def test_window_too_short():
    spec = NetworkSpec("rnn", (1, 3, 1), ("tanh",), warmup=3)
    net = Network(spec)
    with pytest.raises(ShapeError):
        net.predict(np.zeros(net.n_params), None, np.zeros((2, 3, 1)))
    with pytest.raises(ShapeError):
        net.predict(np.zeros(net.n_params - 1), None, np.zeros((2, 4, 1)))


def test_mlp_hand_computation():
    # ReLU with positive pre-activations acts as the identity
    spec = NetworkSpec("mlp", (2, 2, 1), ("relu",))
    net = Network(spec)
    P = {"w1": np.array([[1.0, 2.0], [0.5, 1.0]]), "b1": np.array([1.0, 0.0]), "w2": np.array([[3.0, -1.0]]), "b2": np.array([0.5])}
    x = np.array([1.0, 2.0])
    h = np.array([1 + 4 + 1, 0.5 + 2])
    expect = 3 * h[0] - h[1] + 0.5
    assert mlp_forward(spec, net.layout.join(P), np.ones(net.n_params), x)[0] == pytest.approx(expect, abs=1e-14)
    assert mlp_forward(spec, np.zeros(net.n_params), np.ones(net.n_params), x)[0] == 0.0


def test_masking_neuron_equals_deleting(rng):
    spec = NetworkSpec("mlp", (3, 4, 1), ("tanh",))
    small = NetworkSpec("mlp", (3, 3, 1), ("tanh",))
    net, snet = Network(spec), Network(small)
    params = rng.normal(size=net.n_params)
    P = net.layout.split(params.copy())
    mask = np.ones(net.n_params)
    M = net.layout.split(mask)
    M["w1"][2] = 0
    M["b1"][2] = 0
    M["w2"][:, 2] = 0
    keep = [0, 1, 3]
    sp = snet.layout.join({"w1": P["w1"][keep], "b1": P["b1"][keep], "w2": P["w2"][:, keep], "b2": P["b2"]})
    x = rng.normal(size=(6, 1, 3))
    np.testing.assert_allclose(net.predict(params, mask, x), snet.predict(sp, None, x), atol=1e-14)


def test_hidden_links_counts(rng):
    spec = NetworkSpec("rnn", (2, 6, 1), ("tanh",))
    net = Network(spec)
    assert count_hidden_links(np.zeros(net.n_params), spec) == 0
    assert count_hidden_links(np.ones(net.n_params), spec) == 36
    mask = (rng.random(net.n_params) < 0.5).astype(float)
    brute = sum(1 for i in range(net.n_params) if net.layout.entry(i)[1] == "v" and mask[i])
    assert count_hidden_links(mask, spec) == brute
    with pytest.raises(ValueError):
        count_hidden_links(np.ones(12 + 2 + 1 + 1 + 1), NetworkSpec("mlp", (2, 4, 1), ("tanh",)))


def test_selected_lags(rng):
    spec = NetworkSpec("rnn", (5, 4, 1), ("tanh",))
    net = Network(spec)
    assert selected_input_lags(np.zeros(net.n_params), spec) == set()
    mask = np.zeros(net.n_params)
    net.layout.split(mask)["w1"][1, 2] = 1
    assert selected_input_lags(mask, spec) == {3}
    for _ in range(10):
        mask = (rng.random(net.n_params) < 0.2).astype(float)
        brute = {net.layout.entry(i)[3] + 1 for i in range(net.n_params)
                 if mask[i] and net.layout.entry(i)[:2] == (1, "w")}
        assert selected_input_lags(mask, spec) == brute


def test_exogenous_columns_do_not_count_as_lags():
    spec = NetworkSpec("mlp", (4, 3, 1), ("tanh",), n_exog=2)
    net = Network(spec)
    mask = np.zeros(net.n_params)
    net.layout.split(mask)["w1"][:, 3] = 1
    assert selected_input_lags(mask, spec) == set()


def test_prune_dead_units_preserves_function(rng):
    for _ in range(20):
        spec, params, mask = random_rnn(rng, density=0.4)
        pruned = prune_dead_units(mask, spec)
        assert np.all(pruned <= mask)
        x = rng.uniform(-1, 1, size=(4, spec.warmup + 2, spec.layer_widths[0]))
        net = Network(spec)
        np.testing.assert_allclose(net.forward(params, mask, x, "all"), net.forward(params, pruned, x, "all"), atol=1e-13)


def test_prune_removes_unread_unit():
    spec = NetworkSpec("rnn", (2, 3, 1), ("tanh",))
    net = Network(spec)
    mask = np.ones(net.n_params)
    M = net.layout.split(mask)
    M["w2"][0, 1] = 0
    M["v1"][:, 1] = 0
    M["v1"][1, 1] = 1  # a self-loop alone does not keep a unit alive
    out = net.layout.split(prune_dead_units(mask, spec))
    assert np.all(out["w1"][1] == 0) and out["b1"][1] == 0 and np.all(out["v1"][1] == 0)
    assert np.all(out["w1"][[0, 2]] == 1)


def test_output_gradients_match_fd(rng):
    spec, params, mask = random_rnn(rng)
    net = Network(spec)
    x = rng.uniform(-1, 1, size=(2, spec.warmup + 2, spec.layer_widths[0]))
    J = net.output_gradients(params, mask, x)
    h = 1e-6
    for k in rng.choice(net.n_params, size=6, replace=False):
        e = np.zeros(net.n_params)
        e[k] = h
        fd = (net.predict(params + e, mask, x) - net.predict(params - e, mask, x)) / (2 * h)
        np.testing.assert_allclose(J[:, :, k], fd * mask[k], atol=1e-7)


def test_tape_gradient_of_network_loss(rng):
    spec, params, mask = random_rnn(rng)
    net = Network(spec)
    x = rng.uniform(-1, 1, size=(3, spec.warmup + 2, spec.layer_widths[0]))
    tr = net.build(x)
    tape = tr.tape
    tape.sum(tape.square(tr.outputs[-1]))
    assert check_gradient(tape, net.bindings(params, mask)).max_error < 1e-5


def test_bound_single_step_single_layer():
    spec = NetworkSpec("rnn", (2, 3, 1), ("tanh",))
    net = Network(spec)
    params = np.full(net.n_params, 1.5)
    mask = np.ones(net.n_params)
    obs, bound = lemma_output_bound(spec, params, mask, np.full((1, 2), 0.5), t=1)
    r_w1 = 3 * 2 + 3  # weights plus biases feeding layer 1
    assert bound[0] == pytest.approx(1.5 * r_w1)
    assert np.all(obs <= bound)
    obs0, _ = lemma_output_bound(spec, np.zeros(net.n_params), mask, np.full((1, 2), 0.5), t=1)
    assert np.all(obs0 == 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_mask_idempotent(seed):
    rng = np.random.default_rng(seed)
    spec, params, mask = random_rnn(rng)
    net = Network(spec)
    x = rng.normal(size=(3, spec.warmup + 1, spec.layer_widths[0]))
    once = net.forward(params * mask, mask, x, "all")
    twice = net.forward(params, mask * mask, x, "all")
    assert np.array_equal(once, twice)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_hidden_permutation_symmetry(seed):
    rng = np.random.default_rng(seed)
    spec, params, mask = random_rnn(rng, max_depth=1)
    net = Network(spec)
    P, M = net.layout.split(params.copy()), net.layout.split(mask.copy())
    perm = rng.permutation(spec.layer_widths[1])

    def permute(D):
        return net.layout.join({"w1": D["w1"][perm], "v1": D["v1"][perm][:, perm], "b1": D["b1"][perm],
                                "w2": D["w2"][:, perm], "b2": D["b2"]})

    x = rng.normal(size=(3, spec.warmup + 2, spec.layer_widths[0]))
    np.testing.assert_allclose(net.forward(params, mask, x, "all"), net.forward(permute(P), permute(M), x, "all"),
                               atol=1e-12, rtol=0)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), steps=st.integers(1, 6))
def test_one_usable_output_per_window(seed, steps):
    rng = np.random.default_rng(seed)
    spec = NetworkSpec("rnn", (2, 3, 1), ("tanh",), warmup=steps - 1)
    net = Network(spec)
    _, usable = rnn_forward(spec, rng.normal(size=net.n_params), None, rng.normal(size=(steps, 2)))
    assert usable.sum() == 1 and usable[-1]


def test_checkpoint_round_trip(tmp_path, rng):
    spec, params, mask = random_rnn(rng)
    save_checkpoint(tmp_path / "c.json", spec, params, mask, {"note": 1})
    s2, p2, m2, meta = load_checkpoint(tmp_path / "c.json")
    assert s2 == spec and np.array_equal(p2, params) and np.array_equal(m2, mask) and meta == {"note": 1}
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["params"] = doc["params"][:-1]
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(ShapeError):
        load_checkpoint(tmp_path / "c.json")
