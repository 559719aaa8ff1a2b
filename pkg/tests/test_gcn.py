"""Network forward/backward: attention, loss, gradients, training, files."""

import json
import math

import numpy as np
import pytest

from mippred import bnb, gcn, labeler, trigraph
from mippred.core import BINARY, Constraint, MipInstance, Variable
from mippred.gcn import GcnHyper, bce_loss, forward, init_params, train
from mippred.generators import GenSpec, generate
from mippred.labeler import STABLE0, STABLE1, UNSTABLE, LabelSet
from mippred.trigraph import TriGraph, apply_scaler, build_trigraph, fit_scaler

HYPER = GcnHyper(hidden_dim=4, transitions=2, output_hidden=5, seed=0)


def toy_graph():
    """Scaled graph of a 3-variable, 2-row instance."""
    inst = MipInstance(
        "toy", "min",
        [Variable(f"x{j}", BINARY, 0.0, 1.0) for j in range(3)],
        [Constraint("cap", {0: 2.0, 1: 1.0, 2: 3.0}, -math.inf, 3.0),
         Constraint("cov", {0: 1.0, 1: 1.0, 2: 1.0}, 1.0, math.inf)],
        {0: -3.0, 1: -2.0, 2: -1.0})
    g = build_trigraph(inst, bnb.collect_root_info(inst))
    return apply_scaler(g, fit_scaler([g]))


def toy_labels(graph):
    return LabelSet(instance=graph.name, var_names=list(graph.var_names),
                    labels=[STABLE1, UNSTABLE, STABLE0],
                    delta_used=0.1, iterations=3)


def generic_params(hyper, seed=11):
    """Initialized parameters nudged off the zero-bias point.

    Fresh biases are exactly zero, which parks relu pre-activations on
    the kink where finite differences and the analytic gradient may
    legitimately disagree; a small random offset moves every coordinate
    to a generic point.
    """
    rng = np.random.default_rng(seed)
    params = init_params(hyper)
    for name in params:
        params[name] = params[name] + rng.uniform(-0.3, 0.3,
                                                  size=params[name].shape)
    return params


def fd_gradient_gap(graph, labels, hyper, params, step=1e-4):
    """Worst relative gap between analytic and central-difference grads."""
    _, grads = gcn.loss_and_gradients(graph, params, hyper, labels)
    worst = 0.0
    for name, arr in params.items():
        flat = arr.ravel()
        ana = grads[name].ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = bce_loss(forward(graph, params, hyper), labels)
            flat[k] = orig - step
            dn = bce_loss(forward(graph, params, hyper), labels)
            flat[k] = orig
            fd = (up - dn) / (2.0 * step)
            denom = max(abs(fd), abs(ana[k]), 1.0)
            worst = max(worst, abs(fd - ana[k]) / denom)
    return worst


# ---------------------------------------------------------------------------
# Initialization


def test_init_same_seed_identical():
    a = init_params(HYPER, seed=3)
    b = init_params(HYPER, seed=3)
    assert set(a) == set(b)
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])


def test_init_minimal_network():
    hyper = GcnHyper(hidden_dim=1, transitions=1, output_hidden=1)
    params = init_params(hyper)
    g = toy_graph()
    z = forward(g, params, hyper)
    assert z.shape == (3,)


def test_init_biases_zero_weights_bounded():
    params = init_params(HYPER, seed=0)
    shapes = gcn.param_shapes(HYPER)
    for name, arr in params.items():
        assert arr.shape == shapes[name]
        if name.endswith("_b") or name in ("out_b1", "out_b2"):
            np.testing.assert_array_equal(arr, 0.0)
        else:
            if arr.ndim == 1:
                fan_in, fan_out = arr.shape[0], 1
            else:
                fan_out, fan_in = arr.shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            assert limit > 0.0
            assert np.all(np.abs(arr) <= limit)
            assert np.any(arr != 0.0)


def test_hyper_validation():
    for bad in (GcnHyper(hidden_dim=0), GcnHyper(transitions=0),
                GcnHyper(output_hidden=0)):
        with pytest.raises(ValueError):
            bad.validate()


# ---------------------------------------------------------------------------
# Attention


def test_single_neighbor_gets_full_attention():
    rng = np.random.default_rng(0)
    att = rng.normal(size=10)
    h = rng.normal(size=4)
    alpha = gcn.attention_softmax(h, rng.normal(size=(1, 4)),
                                  rng.normal(size=(1, 2)), att)
    np.testing.assert_allclose(alpha, [1.0])


def test_identical_neighbors_split_attention_evenly():
    rng = np.random.default_rng(1)
    att = rng.normal(size=10)
    h = rng.normal(size=4)
    nb = rng.normal(size=4)
    edge = rng.normal(size=2)
    alpha = gcn.attention_softmax(h, np.stack([nb, nb]),
                                  np.stack([edge, edge]), att)
    np.testing.assert_allclose(alpha, [0.5, 0.5])


def test_attention_sums_to_one():
    rng = np.random.default_rng(2)
    for trial in range(20):
        n = rng.integers(1, 7)
        alpha = gcn.attention_softmax(
            rng.normal(size=4), rng.normal(size=(n, 4)),
            rng.normal(size=(n, 2)), rng.normal(size=10))
        assert alpha.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(alpha > 0.0)


def test_disabled_attention_is_uniform():
    rng = np.random.default_rng(3)
    _, alpha = gcn._global_attention(
        rng.normal(size=4), rng.normal(size=(5, 4)),
        rng.normal(size=(5, 2)), rng.normal(size=10), enabled=False)
    np.testing.assert_allclose(alpha, 0.2)


# ---------------------------------------------------------------------------
# Forward pass


def test_predictions_strictly_inside_unit_interval():
    g = toy_graph()
    for seed in range(5):
        params = generic_params(HYPER, seed=seed)
        z = forward(g, params, HYPER)
        assert np.all(z > 0.0)
        assert np.all(z < 1.0)


def test_forward_on_generated_instance():
    inst = generate(GenSpec("sc", "tiny", seed=0))
    g = build_trigraph(inst, bnb.collect_root_info(inst))
    g = apply_scaler(g, fit_scaler([g]))
    z = forward(g, init_params(HYPER), HYPER)
    assert z.shape == (g.n_vars,)
    assert np.all((z > 0.0) & (z < 1.0))


def test_forward_handles_graph_without_rows():
    inst = MipInstance(
        "free", "min",
        [Variable("x1", BINARY, 0.0, 1.0), Variable("x2", BINARY, 0.0, 1.0)],
        [], {0: -1.0, 1: 1.0})
    g = build_trigraph(inst, bnb.collect_root_info(inst))
    g = apply_scaler(g, fit_scaler([g]))
    z = forward(g, generic_params(HYPER), HYPER)
    assert np.all((z > 0.0) & (z < 1.0))


def test_forward_is_pure():
    g = toy_graph()
    params = generic_params(HYPER)
    z1 = forward(g, params, HYPER)
    z2 = forward(g, params, HYPER)
    np.testing.assert_array_equal(z1, z2)


def test_permuting_variable_nodes_permutes_predictions():
    g = toy_graph()
    params = generic_params(HYPER)
    rng = np.random.default_rng(5)
    for _ in range(5):
        perm = rng.permutation(g.n_vars)
        inv = np.argsort(perm)
        shuffled = TriGraph(
            name=g.name,
            var_names=[g.var_names[p] for p in perm],
            cons_names=list(g.cons_names),
            var_feats=g.var_feats[perm],
            cons_feats=g.cons_feats.copy(),
            obj_feats=g.obj_feats.copy(),
            vc_var=inv[g.vc_var],
            vc_cons=g.vc_cons.copy(),
            vc_feats=g.vc_feats.copy(),
            vo_feats=g.vo_feats[perm],
            co_feats=g.co_feats.copy(),
        )
        z = forward(g, params, HYPER)
        zs = forward(shuffled, params, HYPER)
        np.testing.assert_allclose(zs, z[perm], atol=1e-9)


def test_forward_rejects_wrong_shapes():
    g = toy_graph()
    params = init_params(HYPER)
    params["out_w1"] = params["out_w1"][:, :-1]
    with pytest.raises(ValueError, match="shape"):
        forward(g, params, HYPER)
    params = init_params(HYPER)
    del params["emb_var_w"]
    with pytest.raises(ValueError, match="missing"):
        forward(g, params, HYPER)


def test_literal_loop_mode_runs():
    g = toy_graph()
    hyper = GcnHyper(hidden_dim=4, transitions=2, output_hidden=5,
                     literal_loops=True)
    z = forward(g, generic_params(hyper), hyper)
    assert np.all((z > 0.0) & (z < 1.0))


# ---------------------------------------------------------------------------
# Loss


def test_loss_at_half_with_balanced_labels():
    labels = LabelSet(instance="t", var_names=list("abcd"),
                      labels=[STABLE1, STABLE1, STABLE0, STABLE0],
                      delta_used=0.0, iterations=1)
    z = np.full(4, 0.5)
    assert bce_loss(z, labels) == pytest.approx(math.log(2.0), abs=1e-12)


def test_loss_near_zero_for_confident_correct_predictions():
    labels = LabelSet(instance="t", var_names=list("ab"),
                      labels=[STABLE1, STABLE0], delta_used=0.0, iterations=1)
    z = np.array([1.0 - 1e-9, 1e-9])
    assert bce_loss(z, labels) <= 1e-6


def test_loss_ignores_unstable_entries():
    labels = LabelSet(instance="t", var_names=list("abc"),
                      labels=[STABLE1, UNSTABLE, STABLE0],
                      delta_used=0.0, iterations=1)
    za = np.array([0.8, 0.01, 0.2])
    zb = np.array([0.8, 0.99, 0.2])
    assert bce_loss(za, labels) == pytest.approx(bce_loss(zb, labels))


def test_loss_requires_a_stable_label():
    labels = LabelSet(instance="t", var_names=list("ab"),
                      labels=[UNSTABLE, UNSTABLE], delta_used=0.0,
                      iterations=1)
    with pytest.raises(ValueError, match="stable"):
        bce_loss(np.array([0.5, 0.5]), labels)


def test_loss_rejects_length_mismatch():
    labels = LabelSet(instance="t", var_names=list("ab"),
                      labels=[STABLE1, STABLE0], delta_used=0.0, iterations=1)
    with pytest.raises(ValueError, match="length"):
        bce_loss(np.array([0.5]), labels)


# ---------------------------------------------------------------------------
# Gradients


def test_gradients_match_finite_differences():
    g = toy_graph()
    labels = toy_labels(g)
    gap = fd_gradient_gap(g, labels, HYPER, generic_params(HYPER))
    assert gap <= 1e-4


def test_gradients_match_finite_differences_without_attention():
    g = toy_graph()
    labels = toy_labels(g)
    hyper = GcnHyper(hidden_dim=4, transitions=2, output_hidden=5,
                     attention=False)
    gap = fd_gradient_gap(g, labels, hyper, generic_params(hyper))
    assert gap <= 1e-4


def test_gradients_match_finite_differences_literal_loops():
    g = toy_graph()
    labels = toy_labels(g)
    hyper = GcnHyper(hidden_dim=4, transitions=2, output_hidden=5,
                     literal_loops=True)
    gap = fd_gradient_gap(g, labels, hyper, generic_params(hyper))
    assert gap <= 1e-4


def test_every_parameter_receives_gradient():
    # Scaling a lone graph zeroes its objective features (single row per
    # column), which would starve the objective embedding of gradient;
    # fitting the scaler over two different instances keeps every input
    # generic.
    insts = [generate(GenSpec("sc", "tiny", seed=0)),
             generate(GenSpec("mk", "tiny", seed=0))]
    graphs = [build_trigraph(i, bnb.collect_root_info(i)) for i in insts]
    scaler = fit_scaler(graphs)
    g = apply_scaler(graphs[0], scaler)
    assert np.any(g.obj_feats != 0.0)
    labels = labeler.generate_labels(insts[0])
    # A rectifier stage can go dark for one particular draw, so sum
    # magnitudes over a few parameter seeds; only a structurally
    # disconnected parameter stays at zero across all of them.
    total = None
    for seed in range(5):
        grads = gcn.gradients(g, generic_params(HYPER, seed=seed), HYPER,
                              labels)
        if total is None:
            total = {name: np.abs(arr) for name, arr in grads.items()}
        else:
            for name, arr in grads.items():
                total[name] += np.abs(arr)
    for name, arr in total.items():
        assert np.any(arr != 0.0), f"all-zero gradient for {name}"


def test_gradients_add_over_repeated_graphs():
    g = toy_graph()
    labels = toy_labels(g)
    params = generic_params(HYPER)
    single = gcn.gradients(g, params, HYPER, labels)
    total = {name: np.zeros_like(arr) for name, arr in single.items()}
    for _ in range(2):
        for name, arr in gcn.gradients(g, params, HYPER, labels).items():
            total[name] += arr
    for name in single:
        np.testing.assert_allclose(total[name], 2.0 * single[name],
                                   rtol=1e-12)


# ---------------------------------------------------------------------------
# Training


def sc_dataset(n=10):
    insts = [generate(GenSpec("sc", "tiny", seed=s)) for s in range(n)]
    graphs = [build_trigraph(i, bnb.collect_root_info(i)) for i in insts]
    scaler = fit_scaler(graphs)
    graphs = [apply_scaler(g, scaler) for g in graphs]
    labels = [labeler.generate_labels(i) for i in insts]
    return list(zip(graphs, labels))


def test_training_reduces_loss():
    data = sc_dataset(10)
    hyper = GcnHyper(hidden_dim=8, transitions=2, output_hidden=8,
                     epochs=50, seed=0)
    _, history = train(data, hyper)
    assert len(history) == 50
    assert history[-1] < history[0]


def test_zero_learning_rate_changes_nothing():
    data = sc_dataset(2)
    hyper = GcnHyper(hidden_dim=4, transitions=1, output_hidden=4,
                     epochs=3, learning_rate=0.0, seed=1)
    params, _ = train(data, hyper)
    fresh = init_params(hyper)
    for name in fresh:
        np.testing.assert_array_equal(params[name], fresh[name])


def test_training_is_deterministic():
    data = sc_dataset(3)
    hyper = GcnHyper(hidden_dim=4, transitions=1, output_hidden=4,
                     epochs=8, seed=2)
    p1, h1 = train(data, hyper)
    p2, h2 = train(data, hyper)
    assert h1 == h2
    for name in p1:
        np.testing.assert_array_equal(p1[name], p2[name])


def test_training_rejects_empty_or_unstable_sets():
    with pytest.raises(ValueError, match="empty"):
        train([], HYPER)
    g = toy_graph()
    labels = LabelSet(instance=g.name, var_names=list(g.var_names),
                      labels=[UNSTABLE] * 3, delta_used=0.0, iterations=2)
    with pytest.raises(ValueError, match="stable"):
        train([(g, labels)], HYPER)


def test_targets_align_by_name():
    g = toy_graph()
    labels = LabelSet(instance=g.name,
                      var_names=[g.var_names[2], g.var_names[0],
                                 g.var_names[1]],
                      labels=[STABLE0, STABLE1, UNSTABLE],
                      delta_used=0.0, iterations=2)
    y, mask = gcn.targets_for(g, labels)
    np.testing.assert_array_equal(y, [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(mask, [True, False, True])


def test_targets_require_every_graph_variable():
    g = toy_graph()
    labels = LabelSet(instance=g.name, var_names=[g.var_names[0]],
                      labels=[STABLE1], delta_used=0.0, iterations=1)
    with pytest.raises(KeyError, match="label"):
        gcn.targets_for(g, labels)


# ---------------------------------------------------------------------------
# Model files


def test_model_file_round_trip_is_bitwise(tmp_path):
    g = toy_graph()
    params = generic_params(HYPER)
    path = tmp_path / "model.json"
    gcn.save_params(path, params, HYPER)
    loaded, hyper = gcn.load_params(path)
    assert hyper == HYPER
    np.testing.assert_array_equal(forward(g, loaded, hyper),
                                  forward(g, params, HYPER))


def test_model_file_rejects_wrong_width(tmp_path):
    path = tmp_path / "model.json"
    gcn.save_params(path, init_params(HYPER), HYPER)
    blob = json.loads(path.read_text())
    blob["hyper"]["hidden_dim"] = 8
    path.write_text(json.dumps(blob))
    with pytest.raises(ValueError, match="expected"):
        gcn.load_params(path)


def test_model_file_rejects_truncation(tmp_path):
    path = tmp_path / "model.json"
    gcn.save_params(path, init_params(HYPER), HYPER)
    text = path.read_text()
    path.write_text(text[:len(text) // 2])
    with pytest.raises(ValueError, match="JSON"):
        gcn.load_params(path)


def test_model_file_rejects_unknown_version(tmp_path):
    path = tmp_path / "model.json"
    gcn.save_params(path, init_params(HYPER), HYPER)
    blob = json.loads(path.read_text())
    blob["format_version"] = 99
    path.write_text(json.dumps(blob))
    with pytest.raises(ValueError, match="version"):
        gcn.load_params(path)
