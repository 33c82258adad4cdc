import itertools

import numpy as np
import pytest

from causalabs.abstraction import (
    AbstractionCandidate,
    DeterministicMap,
    MissingIntervention,
    NotSurjective,
    PreconditionError,
    alpha_from_tau,
    check_equivalence,
    check_intervention_consistency,
    check_naturality,
    group_channel,
    identity_map,
    pushforward,
    synthesize_abstraction,
)
from causalabs.core import (
    CausalModel,
    Dag,
    Distribution,
    StochasticChannel,
    VariableSpec,
    apply_intervention,
    joint_tensor,
    point_mass,
    uniform,
)
from causalabs.generate import GeneratorConfig, generate, random_channel
from causalabs.syntax import GraphHom

from conftest import (
    binary,
    brute_force_joint,
    heart_hom,
    heart_maps,
    heart_micro,
    matmul_loops,
)

HD_EQUAL = [[0.35, 0.35, 0.35, 0.9], [0.65, 0.65, 0.65, 0.1]]


def identity_pair(m: CausalModel):
    hom = GraphHom(m.dag, m.dag, {v: v for v in m.vertices})
    return hom, alpha_from_tau(hom, {v: identity_map(m.variables[v]) for v in m.vertices}, m)


# -- alpha from maps ----------------------------------------------------------

def test_bijective_map_gives_permutation():
    tau = DeterministicMap((3,), VariableSpec("X'", "abc"), [2, 0, 1])
    assert tau.channel().is_permutation()
    np.testing.assert_array_equal(tau.channel().entries, [[0, 1, 0], [0, 0, 1], [1, 0, 0]])


def test_cholesterol_map_channel():
    tau = heart_maps()["TC"]
    np.testing.assert_array_equal(tau.channel().entries.T, [[1, 0], [1, 0], [1, 0], [0, 1]])
    assert tau.cells() == [(0, 1, 2), (3,)]


def test_constant_map_onto_point():
    tau = DeterministicMap((4,), VariableSpec("U", ("*",)), [0, 0, 0, 0])
    np.testing.assert_array_equal(tau.channel().entries, [[1, 1, 1, 1]])


def test_alpha_from_tau_rejects_non_surjective():
    m = heart_micro(HD_EQUAL)
    maps = heart_maps()
    maps["TC"] = DeterministicMap((2, 2), binary("TC"), [0, 0, 0, 0])
    with pytest.raises(NotSurjective):
        alpha_from_tau(heart_hom(), maps, m)


def test_alpha_from_tau_rejects_domain_mismatch():
    maps = heart_maps()
    maps["TC"] = DeterministicMap((4,), binary("TC"), [0, 0, 0, 1])
    with pytest.raises(ValueError):
        alpha_from_tau(heart_hom(), maps, heart_micro(HD_EQUAL))


def test_alpha_component_sends_point_masses_to_point_masses():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        k = int(rng.integers(1, n + 1))
        table = rng.permutation(np.concatenate([np.arange(k), rng.integers(0, k, n - k)]))
        tau = DeterministicMap((n,), VariableSpec.with_arity("T", k), table)
        c = tau.channel()
        assert np.all((c.entries != 0).sum(axis=0) == 1)
        for v in range(n):
            np.testing.assert_array_equal(c.entries @ point_mass(n, v).weights, point_mass(k, tau(v)).weights)


# -- group channel ----------------------------------------------------------

def test_singleton_group_is_mechanism(chain):
    hom, _ = identity_pair(chain)
    assert group_channel(chain, hom, "Y") == chain.mechanisms["Y"]


def test_cholesterol_group_channel():
    m = heart_micro(HD_EQUAL)
    k = group_channel(m, heart_hom(), "TC")
    assert k.entries.shape == (4, 2)
    ldl, hdl = m.mechanisms["LDL"].entries, m.mechanisms["HDL"].entries
    for d in range(2):
        for l, h in itertools.product(range(2), repeat=2):
            assert k.entries[2 * l + h, d] == pytest.approx(ldl[l, d] * hdl[h, d])


def test_group_channel_ignores_non_parent_inputs():
    g = Dag.from_edges("ABY", [("A", "Y")])
    h = Dag.from_edges("MN", [("M", "N")])
    hom = GraphHom(g, h, {"A": "M", "B": "M", "Y": "N"})
    m = CausalModel(g, {"A": binary("A"), "B": VariableSpec("B", "xyz"), "Y": binary("Y")}, {
        "A": StochasticChannel([[0.5], [0.5]]),
        "B": StochasticChannel([[0.2], [0.3], [0.5]]),
        "Y": StochasticChannel([[0.1, 0.8], [0.9, 0.2]]),
    })
    k = group_channel(m, hom, "N").entries.reshape(2, 2, 3)
    for a in range(2):
        for b in range(3):
            np.testing.assert_array_equal(k[:, a, b], m.mechanisms["Y"].entries[:, a])


# -- naturality -------------------------------------------------------------

def test_identity_abstraction_is_natural(fork):
    hom, alpha = identity_pair(fork)
    rep = check_naturality(fork, fork, alpha)
    assert rep.passed and rep.max_deviation == 0.0
    rep = check_naturality(fork, fork, alpha, mode="edgewise")
    assert rep.passed and rep.max_deviation == 0.0


def test_merged_fork_edgewise_three_equalities(merged_fork):
    micro, macro, hom, comps = merged_fork
    alpha = AbstractionCandidate(hom, {"X'": comps["X"]}, comps)
    rep = check_naturality(micro, macro, alpha, mode="edgewise")
    assert [c.label for c in rep.checks] == ["X", "Y(X)", "Z(X)"]
    assert rep.passed
    # alpha_Y f = alpha_Z g = h alpha_X, all by explicit loops
    y = matmul_loops(comps["Y"].entries, micro.mechanisms["Y"].entries)
    z = matmul_loops(comps["Z"].entries, micro.mechanisms["Z"].entries)
    w = matmul_loops(macro.mechanisms["W"].entries, comps["X"].entries)
    np.testing.assert_allclose(y, w, atol=1e-15)
    np.testing.assert_allclose(z, w, atol=1e-15)
    np.testing.assert_allclose(rep.checks[2].left.entries, z, atol=1e-15)


def test_merged_fork_edgewise_detects_broken_arm(merged_fork):
    micro, macro, hom, comps = merged_fork
    bad = dict(comps, Z=StochasticChannel([[1, 0, 0], [0, 1, 1]]))
    rep = check_naturality(micro, macro, AbstractionCandidate(hom, {"X'": comps["X"]}, bad), mode="edgewise")
    assert not rep.passed
    assert [c.label for c in rep.failing()] == ["Z(X)"]


def test_edgewise_needs_per_micro_components(merged_fork):
    micro, macro, hom, comps = merged_fork
    alpha = AbstractionCandidate(hom, {"X'": comps["X"], "W": StochasticChannel(np.ones((2, 6)) / 2)})
    with pytest.raises(PreconditionError) as exc:
        check_naturality(micro, macro, alpha, mode="edgewise")
    assert exc.value.vertex == "Y"


def test_edgewise_rejects_extra_macro_parents():
    g = Dag.from_edges("XYZ", [("X", "Y")])
    h = Dag.from_edges("ABC", [("A", "B"), ("C", "B")])
    hom = GraphHom(g, h, {"X": "A", "Y": "B", "Z": "C"})
    m = CausalModel(g, {v: binary(v) for v in "XYZ"}, {
        "X": StochasticChannel([[0.5], [0.5]]), "Y": StochasticChannel(np.eye(2)),
        "Z": StochasticChannel([[0.5], [0.5]])})
    mac = CausalModel(h, {v: binary(v) for v in "ABC"}, {
        "A": StochasticChannel([[0.5], [0.5]]), "B": StochasticChannel(np.ones((2, 4)) / 2),
        "C": StochasticChannel([[0.5], [0.5]])})
    alpha = AbstractionCandidate(hom, {v: StochasticChannel(np.eye(2)) for v in "ABC"})
    with pytest.raises(PreconditionError) as exc:
        check_naturality(m, mac, alpha, mode="edgewise")
    assert exc.value.vertex == "Y"
    # grouped mode handles the extra parent C through its component
    assert check_naturality(m, mac, alpha, mode="grouped").max_deviation > 0


def _lumped_pair():
    """Micro X (3 values) -> Y (2); macro X' (2) -> Y'; X cells {x1, x2}, {x3}."""
    f = [[0.3, 0.3, 0.6], [0.7, 0.7, 0.4]]
    g = [[0.3, 0.6], [0.7, 0.4]]
    gx, gy = VariableSpec("X", ("x1", "x2", "x3")), binary("Y")
    micro = CausalModel(Dag.from_edges("XY", [("X", "Y")]), {"X": gx, "Y": gy}, {
        "X": StochasticChannel([[0.2], [0.3], [0.5]]), "Y": StochasticChannel(f)})
    h = Dag.from_edges(["X'", "Y'"], [("X'", "Y'")])
    macro = CausalModel(h, {"X'": binary("X'"), "Y'": binary("Y'")}, {
        "X'": StochasticChannel([[0.5], [0.5]]), "Y'": StochasticChannel(g)})
    hom = GraphHom(micro.dag, h, {"X": "X'", "Y": "Y'"})
    maps = {"X'": DeterministicMap((3,), binary("X'"), [0, 0, 1]), "Y'": identity_map(binary("Y'"))}
    return micro, macro, alpha_from_tau(hom, maps, micro)


def test_lumped_square_passes():
    micro, macro, alpha = _lumped_pair()
    ax, ay = alpha.components["X'"].entries, alpha.components["Y'"].entries
    left = matmul_loops(ay, micro.mechanisms["Y"].entries)
    right = matmul_loops(macro.mechanisms["Y'"].entries, ax)
    np.testing.assert_allclose(left, right, atol=1e-15)
    for mode in ("grouped", "edgewise"):
        rep = check_naturality(micro, macro, alpha, mode=mode)
        assert rep.passed, mode
        assert rep.max_deviation <= 1e-15


def test_grouped_mismatch_reports_vertex():
    micro, macro, alpha = _lumped_pair()
    worse = CausalModel(macro.dag, macro.variables, dict(macro.mechanisms, **{"Y'": StochasticChannel(np.eye(2))}))
    rep = check_naturality(micro, worse, alpha)
    assert not rep.passed
    assert [c.label for c in rep.failing()] == ["Y'"]


def test_wrong_component_shape_raises():
    micro, macro, alpha = _lumped_pair()
    with pytest.raises(ValueError):
        check_naturality(micro, macro, alpha.replace("X'", StochasticChannel(np.eye(2))))


# -- equivalence ------------------------------------------------------------

def test_identity_is_equivalence(fork):
    _, alpha = identity_pair(fork)
    assert check_equivalence(fork, fork, alpha).equivalent


def test_value_swap_with_conjugated_macro(chain):
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    px, f = chain.mechanisms["X"].entries, chain.mechanisms["Y"].entries
    # conjugation: Y' | X' = id . f . swap^-1, X' prior = swap . p
    macro = CausalModel(chain.dag, chain.variables, {
        "X": StochasticChannel(matmul_loops(swap, px)),
        "Y": StochasticChannel(matmul_loops(f, np.linalg.inv(swap))),
    })
    hom = GraphHom(chain.dag, chain.dag, {"X": "X", "Y": "Y"})
    alpha = AbstractionCandidate(hom, {"X": StochasticChannel(swap), "Y": StochasticChannel(np.eye(2))})
    rep = check_equivalence(chain, macro, alpha)
    assert rep.equivalent
    # the unconjugated macro is not natural under the swap
    assert not check_equivalence(chain, chain, alpha).equivalent


def test_half_entry_component_is_not_equivalence(chain):
    hom = GraphHom(chain.dag, chain.dag, {"X": "X", "Y": "Y"})
    alpha = AbstractionCandidate(hom, {"X": StochasticChannel([[0.5, 0.5], [0.5, 0.5]]),
                                       "Y": StochasticChannel(np.eye(2))})
    rep = check_equivalence(chain, chain, alpha)
    assert not rep.equivalent
    assert rep.non_permutations == ("X",)


def test_permutations_are_the_invertible_stochastic_matrices():
    rng = np.random.default_rng(4)
    cases = [StochasticChannel(np.eye(n)[rng.permutation(n)]) for n in range(1, 6) for _ in range(5)]
    cases += [random_channel(rng, n, n) for n in range(2, 6) for _ in range(10)]
    cases += [StochasticChannel(np.eye(3)[[0, 0, 2]].T)]
    for c in cases:
        e = c.entries
        if abs(np.linalg.det(e)) > 1e-12:
            inv = np.linalg.inv(e)
            oracle = bool(np.all(inv >= -1e-9) and np.allclose(inv.sum(axis=0), 1))
        else:
            oracle = False
        assert c.is_permutation() == oracle


# -- interventions ----------------------------------------------------------

def _pushforward_oracle(micro, macro, hom, maps, joint_flat):
    """Add each micro state's mass to the macro state given by the maps."""
    out = np.zeros(macro.arities())
    for k, state in enumerate(itertools.product(*(range(a) for a in micro.arities()))):
        val = dict(zip(micro.vertices, state))
        target = []
        for m in macro.vertices:
            pre = hom.preimage(m)
            idx = 0
            for v in pre:
                idx = idx * micro.arity(v) + val[v]
            target.append(maps[m](idx))
        out[tuple(target)] += joint_flat[k]
    return out


def test_heart_interventions_all_cuts():
    micro = heart_micro(HD_EQUAL)
    hom, maps = heart_hom(), heart_maps()
    macro, alpha = synthesize_abstraction(micro, hom, maps)
    ints = {"Diet": Distribution([0.1, 0.9]), "LDL": point_mass(2, 1),
            "HDL": Distribution([0.3, 0.7]), "HD": uniform(2)}
    rep = check_intervention_consistency(micro, macro, alpha, ints)
    assert rep.passed
    assert len(rep.outcomes) == 8
    tc = next(o for o in rep.outcomes if o.macro_cut == ("TC",))
    assert tc.micro_cut == ("LDL", "HDL")
    # independent route for the {TC} cut: brute-force joint + explicit lumping
    lo = apply_intervention(micro, {"LDL": ints["LDL"], "HDL": ints["HDL"]})
    left = _pushforward_oracle(micro, macro, hom, maps, brute_force_joint(lo))
    # TC's intervened state: lump P(LDL) x P(HDL) through the map by hand
    p_t1 = 1 - 1.0 * 0.7
    hi = apply_intervention(macro, {"TC": Distribution([p_t1, 1 - p_t1])})
    np.testing.assert_allclose(left.reshape(-1), brute_force_joint(hi), atol=1e-14)


def test_empty_and_full_cut(fork):
    hom, alpha = identity_pair(fork)
    ints = {"X": Distribution([0.3, 0.7]), "Y": point_mass(2, 0), "Z": uniform(2)}
    rep = check_intervention_consistency(fork, fork, alpha, ints)
    assert rep.outcomes[0].macro_cut == () and rep.outcomes[0].passed
    full = next(o for o in rep.outcomes if len(o.macro_cut) == 3)
    assert full.passed
    lo = apply_intervention(fork, ints)
    expect = np.kron(np.kron([0.3, 0.7], [1, 0]), [0.5, 0.5])
    np.testing.assert_allclose(joint_tensor(lo).reshape(-1), expect, atol=1e-15)


def test_singletons_only_and_missing():
    micro = heart_micro(HD_EQUAL)
    macro, alpha = synthesize_abstraction(micro, heart_hom(), heart_maps())
    ints = {v: uniform(2) for v in micro.vertices}
    rep = check_intervention_consistency(micro, macro, alpha, ints, singletons_only=True)
    assert [o.macro_cut for o in rep.outcomes] == [(), ("Diet'",), ("TC",), ("HD'",)]
    del ints["HDL"]
    with pytest.raises(MissingIntervention):
        check_intervention_consistency(micro, macro, alpha, ints)


def test_pushforward_matches_oracle_on_generated_pairs():
    for seed in range(10):
        inst = generate(GeneratorConfig("homogeneous-pair", seed, (2, 6), (2, 3)))
        j = joint_tensor(inst.micro)
        fast = pushforward(j, inst.micro, inst.alpha)
        slow = _pushforward_oracle(inst.micro, inst.macro, inst.hom, inst.maps, j.reshape(-1))
        np.testing.assert_allclose(fast, slow, atol=1e-14)
        np.testing.assert_allclose(fast, joint_tensor(inst.macro), atol=1e-12)
        assert abs(fast.sum() - 1) <= 1e-9 * j.size


def test_stochastic_components_natural_but_not_consistent():
    # naturality of squares does not pin down joints once alpha mixes values
    d = Dag.from_edges("XY", [("X", "Y")])
    v = {n: VariableSpec.with_arity(n, 2) for n in "XY"}
    micro = CausalModel(d, v, {"X": StochasticChannel([[0.3], [0.7]]),
                               "Y": StochasticChannel([[0.4, 0.4], [0.6, 0.6]])})
    macro = CausalModel(d, v, {"X": StochasticChannel([[0.5], [0.5]]),
                               "Y": StochasticChannel([[0.2, 0.6], [0.8, 0.4]])})
    alpha = AbstractionCandidate(GraphHom(d, d, {"X": "X", "Y": "Y"}), {
        "X": StochasticChannel(np.full((2, 2), 0.5)), "Y": StochasticChannel(np.eye(2))})
    assert check_naturality(micro, macro, alpha).passed
    rep = check_intervention_consistency(micro, macro, alpha, {"X": uniform(2), "Y": uniform(2)})
    assert rep.outcomes[0].macro_cut == ()
    assert rep.outcomes[0].deviation == pytest.approx(0.1)
