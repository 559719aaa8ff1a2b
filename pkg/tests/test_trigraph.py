"""Graph extraction: node/edge layout, feature values, scaling, files."""

import math

import numpy as np
import pytest

from mippred import bnb, trigraph
from mippred.core import (BINARY, CONTINUOUS, Constraint, MipInstance,
                          Variable)
from mippred.generators import GenSpec, generate
from mippred.trigraph import (N_CONS_FEATURES, N_VAR_FEATURES, apply_scaler,
                              build_trigraph, constraint_features, fit_scaler,
                              variable_features)


def graph_of(inst):
    return build_trigraph(inst, bnb.collect_root_info(inst))


def pair_instance():
    """Two binaries sharing one capacity row."""
    return MipInstance(
        "pair", "min",
        [Variable("x1", BINARY, 0.0, 1.0), Variable("x2", BINARY, 0.0, 1.0)],
        [Constraint("cap", {0: 1.0, 1: 1.0}, -math.inf, 1.0)],
        {0: -5.0, 1: -4.0})


# ---------------------------------------------------------------------------
# Graph shape


def test_two_vars_one_row_gives_five_edges():
    g = graph_of(pair_instance())
    assert g.n_vars == 2
    assert g.n_cons == 1
    assert len(g.vc_var) == 2
    assert g.vo_feats.shape == (2, 2)
    assert g.co_feats.shape == (1, 2)
    assert len(trigraph.trigraph_to_dict(g)["edges"]) == 5


def test_zero_coefficient_variable_keeps_objective_edge_only():
    inst = MipInstance(
        "loner", "min",
        [Variable("x1", BINARY, 0.0, 1.0), Variable("x2", BINARY, 0.0, 1.0)],
        [Constraint("cap", {0: 1.0}, -math.inf, 1.0)],
        {0: -1.0, 1: -1.0})
    g = graph_of(inst)
    t = g.var_names.index("x2")
    assert g.cons_of_var(t).size == 0
    assert g.vo_feats.shape[0] == 2  # the v-o edge is still there


def test_continuous_variables_get_no_nodes():
    inst = generate(GenSpec("fcnf", "tiny", seed=0))
    root = bnb.collect_root_info(inst)
    g = build_trigraph(inst, root)
    n_bin = len(root.instance.binary_indices())
    assert g.n_vars == n_bin
    assert n_bin < root.instance.n_vars


def test_node_counts_match_presolved_instance():
    for seed in range(3):
        inst = generate(GenSpec("sc", "tiny", seed=seed))
        root = bnb.collect_root_info(inst)
        g = build_trigraph(inst, root)
        red = root.instance
        assert g.n_vars == len(red.binary_indices())
        assert g.n_cons == len(red.constraints)
        pairs = sum(1 for con in red.constraints
                    for j in con.coeffs if red.variables[j].vtype == BINARY)
        assert len(g.vc_var) == pairs


def test_build_requires_solved_relaxation():
    inst = MipInstance(
        "clash", "min",
        [Variable("x", BINARY, 0.0, 1.0)],
        [Constraint("hi", {0: 1.0}, 0.75, math.inf),
         Constraint("lo", {0: 1.0}, -math.inf, 0.25)],
        {0: 1.0})
    root = bnb.collect_root_info(inst)
    with pytest.raises(ValueError, match="relaxation"):
        build_trigraph(inst, root)


def test_build_rejects_foreign_root_info():
    root = bnb.collect_root_info(pair_instance())
    other = generate(GenSpec("sc", "tiny", seed=0))
    with pytest.raises(ValueError, match="belong"):
        build_trigraph(other, root)


# ---------------------------------------------------------------------------
# Variable features


def test_variable_feature_dimension():
    inst = pair_instance()
    root = bnb.collect_root_info(inst)
    vec = variable_features(root.instance, root, 0)
    assert vec.shape == (N_VAR_FEATURES,) == (57,)


def test_fractional_relaxation_value_triple():
    # min -x with 10x <= 3 puts the root LP at x = 0.3.
    inst = MipInstance(
        "frac", "min",
        [Variable("x", BINARY, 0.0, 1.0)],
        [Constraint("cap", {0: 10.0}, -math.inf, 3.0)],
        {0: -1.0})
    root = bnb.collect_root_info(inst)
    vec = variable_features(root.instance, root, 0)
    assert vec[8] == pytest.approx(0.3)
    assert vec[9] == pytest.approx(0.3)
    assert vec[10] == pytest.approx(0.7)
    assert vec[11] == 1.0


def test_integral_relaxation_value_not_fractional():
    inst = pair_instance()
    root = bnb.collect_root_info(inst)
    t = root.instance.binary_indices()[0]
    vec = variable_features(root.instance, root, t)
    assert vec[11] == 0.0


def test_objective_coefficient_split():
    inst = pair_instance()
    root = bnb.collect_root_info(inst)
    vec = variable_features(root.instance, root, 0)
    assert vec[2] == -5.0
    assert vec[3] == 0.0
    assert vec[4] == 5.0


def test_isolated_variable_has_zero_structure_block():
    inst = MipInstance(
        "iso", "min",
        [Variable("x1", BINARY, 0.0, 1.0), Variable("x2", BINARY, 0.0, 1.0)],
        [Constraint("cap", {0: 1.0}, -math.inf, 1.0)],
        {0: -1.0, 1: -1.0})
    root = bnb.collect_root_info(inst)
    j = next(t for t, v in enumerate(root.instance.variables)
             if v.name == "x2")
    vec = variable_features(root.instance, root, j)
    assert vec[5] == 0.0  # row count
    np.testing.assert_allclose(vec[20:57], 0.0)


def test_lock_counts_in_features():
    # coefficient +10 in a <=-row: moving up can violate it, down cannot
    inst = MipInstance(
        "locks", "min",
        [Variable("x", BINARY, 0.0, 1.0)],
        [Constraint("cap", {0: 10.0}, -math.inf, 3.0)],
        {0: -1.0})
    root = bnb.collect_root_info(inst)
    vec = variable_features(root.instance, root, 0)
    assert vec[6] == 1.0
    assert vec[7] == 0.0


def test_variable_features_reject_continuous():
    inst = MipInstance(
        "mixed", "min",
        [Variable("x", BINARY, 0.0, 1.0),
         Variable("f", CONTINUOUS, 0.0, 2.0)],
        [Constraint("link", {0: 1.0, 1: 1.0}, -math.inf, 2.0)],
        {0: -1.0, 1: 1.0})
    root = bnb.collect_root_info(inst)
    j = next(t for t, v in enumerate(root.instance.variables)
             if v.name == "f")
    with pytest.raises(ValueError, match="binary"):
        variable_features(root.instance, root, j)


# ---------------------------------------------------------------------------
# Constraint features


def test_constraint_feature_dimension():
    inst = pair_instance()
    root = bnb.collect_root_info(inst)
    vec = constraint_features(root.instance, root, 0)
    assert vec.shape == (N_CONS_FEATURES,) == (26,)


def test_set_covering_row_is_logicor():
    inst = MipInstance(
        "cover", "min",
        [Variable(f"x{j}", BINARY, 0.0, 1.0) for j in range(3)],
        [Constraint("cov", {0: 1.0, 1: 1.0, 2: 1.0}, 1.0, math.inf)],
        {j: 1.0 for j in range(3)})
    root = bnb.collect_root_info(inst)
    vec = constraint_features(root.instance, root, 0)
    onehot = vec[:12]
    assert onehot[trigraph.CONS_TYPES.index("logicor")] == 1.0
    assert onehot.sum() == 1.0


def test_mixed_sign_row_counts_and_norms():
    inst = MipInstance(
        "signs", "min",
        [Variable("x1", BINARY, 0.0, 1.0), Variable("x2", BINARY, 0.0, 1.0)],
        [Constraint("row", {0: 2.0, 1: -3.0}, -math.inf, 1.0)],
        {0: 1.0, 1: 1.0})
    root = bnb.collect_root_info(inst)
    vec = constraint_features(root.instance, root, 0)
    assert (vec[14], vec[15], vec[16]) == (2.0, 1.0, 1.0)
    assert (vec[19], vec[20], vec[21]) == (5.0, 2.0, 3.0)


def test_infinite_side_clipped_to_sentinel():
    inst = pair_instance()  # lhs is -inf
    root = bnb.collect_root_info(inst)
    vec = constraint_features(root.instance, root, 0)
    assert vec[12] == -trigraph.INF_SENTINEL
    assert vec[13] == 1.0


def test_singleton_row_type():
    inst = MipInstance(
        "single", "min",
        [Variable("x", BINARY, 0.0, 1.0)],
        [Constraint("only", {0: 2.0}, -math.inf, 1.0)],
        {0: -1.0})
    root = bnb.collect_root_info(inst)
    vec = constraint_features(root.instance, root, 0)
    assert vec[trigraph.CONS_TYPES.index("singleton")] == 1.0


def test_knapsack_row_type():
    inst = MipInstance(
        "knap", "max",
        [Variable("x1", BINARY, 0.0, 1.0), Variable("x2", BINARY, 0.0, 1.0)],
        [Constraint("cap", {0: 3.0, 1: 4.0}, -math.inf, 5.0)],
        {0: 1.0, 1: 1.0})
    root = bnb.collect_root_info(inst)
    vec = constraint_features(root.instance, root, 0)
    assert vec[trigraph.CONS_TYPES.index("knapsack")] == 1.0


# ---------------------------------------------------------------------------
# Edge features


def test_edge_coefficient_normalized_by_row_max():
    inst = MipInstance(
        "norm", "min",
        [Variable("x1", BINARY, 0.0, 1.0), Variable("x2", BINARY, 0.0, 1.0)],
        [Constraint("row", {0: 2.0, 1: 4.0}, -math.inf, 4.0)],
        {0: -1.0, 1: -1.0})
    g = graph_of(inst)
    e = next(t for t in range(len(g.vc_var))
             if g.var_names[g.vc_var[t]] == "x1")
    np.testing.assert_allclose(g.vc_feats[e], [2.0, 0.5])


def test_zero_objective_coefficient_edge():
    inst = MipInstance(
        "zeroc", "min",
        [Variable("x1", BINARY, 0.0, 1.0), Variable("x2", BINARY, 0.0, 1.0)],
        [Constraint("cap", {0: 1.0, 1: 1.0}, -math.inf, 1.0)],
        {0: -1.0})
    g = graph_of(inst)
    t = g.var_names.index("x2")
    np.testing.assert_allclose(g.vo_feats[t], [0.0, 0.0])


def test_all_equal_coefficients_normalize_to_unit():
    inst = MipInstance(
        "equal", "min",
        [Variable("x1", BINARY, 0.0, 1.0), Variable("x2", BINARY, 0.0, 1.0)],
        [Constraint("row", {0: 2.0, 1: 2.0}, -math.inf, 2.0)],
        {0: -3.0, 1: -3.0})
    g = graph_of(inst)
    np.testing.assert_allclose(g.vc_feats[:, 1], 1.0)
    np.testing.assert_allclose(g.vo_feats[:, 1], -1.0)
    np.testing.assert_allclose(g.co_feats[0], [2.0, 1.0])


def test_objective_edge_on_geq_row_uses_lhs():
    inst = MipInstance(
        "geq", "min",
        [Variable("x1", BINARY, 0.0, 1.0), Variable("x2", BINARY, 0.0, 1.0)],
        [Constraint("cov", {0: 1.0, 1: 1.0}, 1.0, math.inf)],
        {0: 1.0, 1: 2.0})
    g = graph_of(inst)
    np.testing.assert_allclose(g.co_feats[0], [1.0, 1.0])


def test_objective_node_features():
    g = graph_of(pair_instance())
    np.testing.assert_allclose(g.obj_feats, [9.0, 2.0])


def test_all_features_finite_on_generated_instances():
    for problem in ("sc", "fcnf", "mk"):
        inst = generate(GenSpec(problem, "tiny", seed=1))
        g = graph_of(inst)
        for arr in (g.var_feats, g.cons_feats, g.obj_feats,
                    g.vc_feats, g.vo_feats, g.co_feats):
            assert np.all(np.isfinite(arr))


def test_variable_permutation_permutes_feature_rows():
    base = MipInstance(
        "perm", "min",
        [Variable(f"x{j}", BINARY, 0.0, 1.0) for j in range(3)],
        [Constraint("cap", {0: 1.0, 1: 2.0, 2: 3.0}, -math.inf, 3.0),
         Constraint("cov", {0: 1.0, 1: 1.0, 2: 1.0}, 1.0, math.inf)],
        {0: -3.0, 1: -2.0, 2: -1.0})
    order = [2, 0, 1]
    inv = {old: new for new, old in enumerate(order)}
    shuffled = MipInstance(
        "perm", "min",
        [base.variables[j] for j in order],
        [Constraint(c.name, {inv[j]: a for j, a in c.coeffs.items()},
                    c.lhs, c.rhs) for c in base.constraints],
        {inv[j]: a for j, a in base.objective.items()})
    ga, gb = graph_of(base), graph_of(shuffled)
    rows_a = dict(zip(ga.var_names, ga.var_feats))
    rows_b = dict(zip(gb.var_names, gb.var_feats))
    assert set(rows_a) == set(rows_b)
    for name in rows_a:
        np.testing.assert_allclose(rows_a[name], rows_b[name], atol=1e-12)


# ---------------------------------------------------------------------------
# Scaling


def test_scaler_leaves_constant_columns_unchanged():
    graphs = [graph_of(generate(GenSpec("sc", "tiny", seed=s)))
              for s in range(3)]
    scaler = fit_scaler(graphs)
    scaled = apply_scaler(graphs[0], scaler)
    col = graphs[0].var_feats[:, 0]  # is-binary flag, constant 1
    stacked = np.vstack([g.var_feats[:, 0] for g in graphs])
    assert np.ptp(stacked) == 0.0
    np.testing.assert_allclose(scaled.var_feats[:, 0], col - col.mean())
    assert scaler.scale["var"][0] == 1.0


def test_scaled_training_set_has_zero_means():
    graphs = [graph_of(generate(GenSpec("mk", "tiny", seed=s)))
              for s in range(3)]
    scaler = fit_scaler(graphs)
    scaled = [apply_scaler(g, scaler) for g in graphs]
    allvar = np.vstack([g.var_feats for g in scaled])
    allcons = np.vstack([g.cons_feats for g in scaled])
    assert np.max(np.abs(allvar.mean(axis=0))) <= 1e-9
    assert np.max(np.abs(allcons.mean(axis=0))) <= 1e-9


def test_scaler_transfers_across_sizes():
    train = [graph_of(generate(GenSpec("sc", "tiny", seed=0)))]
    other = graph_of(generate(GenSpec("sc", "small", seed=9)))
    scaler = fit_scaler(train)
    scaled = apply_scaler(other, scaler)
    assert scaled.var_feats.shape == other.var_feats.shape
    assert np.all(np.isfinite(scaled.var_feats))


def test_apply_scaler_is_pure():
    g = graph_of(pair_instance())
    before = g.var_feats.copy()
    scaler = fit_scaler([g])
    apply_scaler(g, scaler)
    np.testing.assert_array_equal(g.var_feats, before)


def test_fit_scaler_needs_graphs():
    with pytest.raises(ValueError, match="at least one"):
        fit_scaler([])


# ---------------------------------------------------------------------------
# Files


def test_graph_file_round_trip(tmp_path):
    g = graph_of(generate(GenSpec("mk", "tiny", seed=2)))
    path = tmp_path / "g.json"
    trigraph.write_trigraph(path, g)
    back = trigraph.read_trigraph(path)
    assert back.name == g.name
    assert back.var_names == g.var_names
    assert back.cons_names == g.cons_names
    np.testing.assert_array_equal(back.var_feats, g.var_feats)
    np.testing.assert_array_equal(back.cons_feats, g.cons_feats)
    np.testing.assert_array_equal(back.obj_feats, g.obj_feats)
    np.testing.assert_array_equal(back.vc_var, g.vc_var)
    np.testing.assert_array_equal(back.vc_cons, g.vc_cons)
    np.testing.assert_array_equal(back.vc_feats, g.vc_feats)
    np.testing.assert_array_equal(back.vo_feats, g.vo_feats)
    np.testing.assert_array_equal(back.co_feats, g.co_feats)


def test_graph_file_write_is_deterministic(tmp_path):
    g = graph_of(generate(GenSpec("sc", "tiny", seed=4)))
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    trigraph.write_trigraph(a, g)
    trigraph.write_trigraph(b, g)
    assert a.read_bytes() == b.read_bytes()


def test_graph_file_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"name": "g", "var_nodes": [], "cons_nodes": [], '
                    '"obj_features": [0, 0], "edges": [], "bogus": 1}\n')
    with pytest.raises(ValueError, match="unknown"):
        trigraph.read_trigraph(path)


def test_graph_file_rejects_bad_edge_type(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(
        '{"name": "g", '
        '"var_nodes": [{"name": "x", "features": ' +
        str([0.0] * 57) + '}], '
        '"cons_nodes": [], "obj_features": [0, 0], '
        '"edges": [{"type": "vv", "from": "x", "to": "x", '
        '"features": [0, 0]}]}\n')
    with pytest.raises(ValueError, match="edge type"):
        trigraph.read_trigraph(path)


def test_scaler_file_round_trip(tmp_path):
    g = graph_of(generate(GenSpec("sc", "tiny", seed=0)))
    scaler = fit_scaler([g])
    path = tmp_path / "scaler.json"
    trigraph.write_scaler(path, scaler)
    back = trigraph.read_scaler(path)
    for fam in trigraph._FAMILIES:
        np.testing.assert_array_equal(back.shift[fam], scaler.shift[fam])
        np.testing.assert_array_equal(back.scale[fam], scaler.scale[fam])


def test_scaler_file_rejects_nonpositive_scale(tmp_path):
    g = graph_of(pair_instance())
    data = trigraph.scaler_to_dict(fit_scaler([g]))
    data["var"]["scale"][0] = 0.0
    path = tmp_path / "bad.json"
    import json
    path.write_text(json.dumps(data))
    with pytest.raises(ValueError, match="nonpositive"):
        trigraph.read_scaler(path)
