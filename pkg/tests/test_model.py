import itertools
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import tiny_instance
from vsnalloc.model import (
    BINARY,
    CONTINUOUS,
    ObjectivePolicy,
    PriorState,
    StateCorruption,
    StructuralInfeasibility,
    build_model,
    parse_var_name,
    var_name,
)
from vsnalloc.scenario import Application, GeneratorConfig, Scenario, SensorNode, coverage_set, generate_instance
from vsnalloc.solver import SolverConfig, solve

BUILTIN = SolverConfig(backend="builtin")


def line(n_apps=1, tps=((5.0, 0.0),), lifetime=100.0, **kw):
    """Node 0 at the origin, sink 1 at 30 m; each app senses ``tps``."""
    nodes = (SensorNode(0, (0.0, 0.0)), SensorNode(1, (30.0, 0.0), is_sink=True))
    apps = tuple(Application(j, 0.0, lifetime, tuple(range(j * len(tps), (j + 1) * len(tps))))
                 for j in range(n_apps))
    kw.setdefault("sensing_range", 10.0)
    return Scenario(nodes=nodes, test_points=tuple(tps) * n_apps, applications=apps,
                    width=30.0, height=10.0, **kw)


def prior_for(sc, live):
    return PriorState.idle(sc, {j: sc.applications[j].lifetime for j in live})


def rows(model, family):
    return [r for r in model.constraints if r.family == family]


# -- linearization ---------------------------------------------------------------

@pytest.mark.parametrize("x, X", list(itertools.product((0, 1), repeat=2)))
def test_linearization_identity(x, X):
    assert (x - X) * x == (1 - X) * x


@pytest.mark.parametrize("x, X", list(itertools.product((0, 1), repeat=2)))
def test_energy_row_charges_match_bilinear_form(x, X):
    sc = line()
    prior = PriorState(frozenset({0}) if X else frozenset(), frozenset(), (500.0, 0.0), {0: 100.0})
    m = build_model(sc, [0], prior, "total")
    (row,) = rows(m, "energy")
    coef = dict(row.terms).get(m.by_key[("x", 0)], 0.0)
    assert coef * x == sc.activation_cost * (x - X) * x


# -- toy instances ---------------------------------------------------------------

def test_forced_toy_solution():
    sc = line()
    m = build_model(sc, [0], prior_for(sc, [0]), "total")
    r = solve(m, BUILTIN)
    a = r.assignment
    assert r.optimal
    assert a["y_0_0_0"] == 1 and a["x_0"] == 1 and a["b_0_1"] == 1
    assert a["f_0_1_0"] == pytest.approx(12e3)


def test_empty_live_set_is_trivially_feasible():
    sc = line()
    m = build_model(sc, [], PriorState.idle(sc), "maxmin")
    assert not any(v.key[0] == "y" for v in m.variables)
    r = solve(m, BUILTIN)
    assert r.optimal and r.objective == pytest.approx(sc.nodes[0].initial_energy)


def test_toy_row_counts():
    m = build_model(line(), [0], prior_for(line(), [0]), "total")
    assert m.family_counts() == {
        "coverage": 1, "n_max": 1, "memory": 1, "cpu": 1, "flow_aggregate": 1,
        "flow_conservation": 1, "sink_balance": 1, "activation": 2, "link": 1,
        "single_route": 1, "route_flow": 1, "airtime": 1, "energy": 1,
    }


def test_uncovered_test_point_is_structural():
    sc = line(tps=((5.0, 9.9), (29.9, 9.9)), sensing_range=5.0)
    with pytest.raises(StructuralInfeasibility) as err:
        build_model(sc, [0], prior_for(sc, [0]), "total")
    assert (err.value.app, err.value.test_point) == (0, 0)


def test_prior_state_invariants():
    sc = line()
    with pytest.raises(StateCorruption):
        PriorState(frozenset(), frozenset({(0, 0, 0)}), (1.0, 1.0), {0: 1.0})
    with pytest.raises(StateCorruption):
        PriorState(frozenset(), frozenset(), (1.0, 1.0), {0: 0.0})
    with pytest.raises(StateCorruption):
        build_model(sc, [0], PriorState(frozenset(), frozenset(), (-1.0, 0.0), {0: 100.0}), "total")


# -- variable counts -------------------------------------------------------------

def expected_variables(sc, live, policy):
    """Count from the declaration rules: y only inside coverage sets, flows
    and routes only out of non-sinks, one slack per non-sink."""
    n, ns = len(sc.nodes), len(sc.non_sinks)
    ys = sum(len(coverage_set(sc, j, k)) for j in live for k in sc.applications[j].test_points)
    out_pairs = ns * (n - 1)
    aux = 1 if policy in ("maxmin", "mixed") else 0
    return ys + n + out_pairs * (2 + len(live)) + ns + aux


@pytest.mark.parametrize("policy", [p.value for p in ObjectivePolicy])
def test_variable_count_reference_snapshot(policy):
    sc = generate_instance(GeneratorConfig(n_apps=5), 2)
    live = list(range(5))
    m = build_model(sc, live, prior_for(sc, live), policy)
    assert len(m.variables) == expected_variables(sc, live, policy)
    kinds = {v.key[0]: v.kind for v in m.variables}
    assert kinds == {"y": BINARY, "x": BINARY, "b": BINARY, "f": CONTINUOUS, "lam": CONTINUOUS}
    assert all(v.lower == 0 for v in m.variables)


def test_variables_sorted_by_key():
    sc = generate_instance(GeneratorConfig(n_nodes=9, width_m=60.0, height_m=60.0, n_apps=2), 1)
    m = build_model(sc, [0, 1], prior_for(sc, [0, 1]), "mixed")
    keys = [v.key for v in m.variables]
    assert keys == sorted(keys)


@given(st.tuples(st.sampled_from(["y", "x", "f", "b", "lam"]),
                 st.lists(st.integers(0, 10**6), max_size=3)))
def test_var_name_is_bijective(parts):
    key = (parts[0], *parts[1])
    assert parse_var_name(var_name(key)) == key


# -- coverage and budgets ----------------------------------------------------------

def test_coverage_row_shape():
    nodes = tuple(SensorNode(i, (10.0 * i, 0.0), is_sink=(i == 3)) for i in range(4))
    app = Application(0, 0.0, 10.0, (0, 1, 2))
    sc = Scenario(nodes=nodes, test_points=((10.0, 0.0), (0.0, 0.0), (30.0, 0.0)), applications=(app,),
                  width=30.0, height=1.0, sensing_range=10.0)
    m = build_model(sc, [0], prior_for(sc, [0]), "total")
    cov = {r.key: r for r in rows(m, "coverage")}
    assert len(cov[0, 0].terms) == 3 and cov[0, 0].rhs == 1 and cov[0, 0].sense == "="
    nmax = rows(m, "n_max")
    assert len(nmax) == 4 and all(r.rhs == 1 for r in nmax)
    assert not any(v.key[:2] == ("y", 3) and v.key[3] == 1 for v in m.variables if v.key[0] == "y")


def test_budget_arithmetic():
    m = build_model(line(), [0], prior_for(line(), [0]), "total")
    (mem,) = [r for r in rows(m, "memory") if r.key == (0,)]
    (cpu,) = [r for r in rows(m, "cpu") if r.key == (0,)]
    assert int(mem.rhs // mem.terms[0][1]) == 304
    assert int(cpu.rhs // cpu.terms[0][1]) == 10


@pytest.mark.parametrize("n_apps, feasible", [(10, True), (11, False)])
def test_cpu_budget_caps_tasks(n_apps, feasible):
    sc = line(n_apps=n_apps, lifetime=10.0, sensing_range=5.0)
    live = list(range(n_apps))
    r = solve(build_model(sc, live, prior_for(sc, live), "only-restrictions"), BUILTIN)
    assert r.optimal is feasible


# -- flows and routing -----------------------------------------------------------

def test_sink_balance_rhs():
    sc = line(tps=((1.0, 0.0), (2.0, 0.0), (3.0, 0.0)))
    m = build_model(sc, [0], prior_for(sc, [0]), "total")
    (row,) = rows(m, "sink_balance")
    assert row.rhs == pytest.approx(36e3)


def test_two_sinks_share_balance_row():
    nodes = (SensorNode(0, (15.0, 0.0)), SensorNode(1, (0.0, 0.0), is_sink=True),
             SensorNode(2, (30.0, 0.0), is_sink=True))
    sc = Scenario(nodes=nodes, test_points=((15.0, 0.0),), applications=(Application(0, 0.0, 10.0, (0,)),),
                  width=30.0, height=1.0, sensing_range=1.0)
    m = build_model(sc, [0], prior_for(sc, [0]), "total")
    (row,) = rows(m, "sink_balance")
    idx = {m.variables[i].name for i, _ in row.terms}
    assert {"f_0_1", "f_0_2"} <= idx


def test_nonviable_link_forced_closed():
    nodes = (SensorNode(0, (0.0, 0.0)), SensorNode(1, (40.0, 0.0), is_sink=True))
    sc = Scenario(nodes=nodes, test_points=(), applications=(), width=40.0, height=1.0)
    m = build_model(sc, [], PriorState.idle(sc), "total")
    (link,) = rows(m, "link")
    assert link.rhs == 0.0


def test_idle_node_may_stay_off():
    sc = Scenario(nodes=line().nodes + (SensorNode(2, (15.0, 5.0)),), test_points=((5.0, 0.0),),
                  applications=(Application(0, 0.0, 100.0, (0,)),), width=30.0, height=10.0,
                  sensing_range=6.0)
    r = solve(build_model(sc, [0], prior_for(sc, [0]), "total"), BUILTIN)
    assert r.assignment["x_2"] == 0


# -- interference ------------------------------------------------------------------

def test_adjacent_links_share_airtime():
    nodes = (SensorNode(0, (0.0, 0.0)), SensorNode(1, (30.0, 0.0)), SensorNode(2, (60.0, 0.0), is_sink=True))
    sc = Scenario(nodes=nodes, test_points=(), applications=(), width=60.0, height=1.0)
    m = build_model(sc, [], PriorState.idle(sc), "total")
    row = {r.key: r for r in rows(m, "airtime")}[0, 1]
    coefs = {m.variables[i].name: c for i, c in row.terms}
    assert coefs["f_0_1"] == coefs["f_1_2"] == pytest.approx(1 / 250e3)


def test_distant_links_do_not_interfere():
    xs = [0.0, 30.0, 130.0, 160.0]
    nodes = tuple(SensorNode(i, (x, 0.0), is_sink=(i in (1, 3))) for i, x in enumerate(xs))
    sc = Scenario(nodes=nodes, test_points=(), applications=(), width=160.0, height=1.0)
    m = build_model(sc, [], PriorState.idle(sc), "total")
    for r in rows(m, "airtime"):
        names = {m.variables[i].name for i, _ in r.terms}
        assert names == {"f_0_1"} or names == {"f_2_3"}


# -- energy ------------------------------------------------------------------------

def test_fresh_node_fixed_charge():
    sc = line()
    m = build_model(sc, [0], prior_for(sc, [0]), "total")
    (row,) = rows(m, "energy")
    coef = {m.variables[i].name: c for i, c in row.terms}
    assert coef["x_0"] == 10.0
    assert coef["y_0_0_0"] == pytest.approx(10.0 + 0.2 * 100.0)
    assert coef["f_0_1_0"] == pytest.approx(100.0 * (50e-9 + 0.0013e-12 * 30.0**4))
    assert coef["lam_0"] == 1.0 and row.rhs == sc.nodes[0].initial_energy


def test_kept_assignment_pays_no_fixed_charge():
    sc = line()
    prior = PriorState(frozenset({0}), frozenset({(0, 0, 0)}), (500.0, 0.0), {0: 50.0})
    m = build_model(sc, [0], prior, "total")
    (row,) = rows(m, "energy")
    coef = {m.variables[i].name: c for i, c in row.terms}
    assert "x_0" not in coef
    assert coef["y_0_0_0"] == pytest.approx(0.2 * 50.0)


def test_energy_budget_rejects_expensive_app():
    # 0.2 W for 100 s plus 20 J fixed charges needs about 40 J.
    sc = line()
    for energy, ok in ((45.0, True), (35.0, False)):
        prior = PriorState(frozenset(), frozenset(), (energy, 0.0), {0: 100.0})
        assert solve(build_model(sc, [0], prior, "total"), BUILTIN).optimal is ok


# -- objectives ----------------------------------------------------------------------

@pytest.mark.parametrize("policy, factor", [("total", 3.0), ("maxmin", 1.0), ("mixed", 2.0),
                                            ("only-restrictions", 0.0)])
def test_objective_algebra(policy, factor):
    nodes = tuple(SensorNode(i, (10.0 * i, 0.0), is_sink=(i == 3)) for i in range(4))
    sc = Scenario(nodes=nodes, test_points=(), applications=(), width=30.0, height=1.0)
    m = build_model(sc, [], PriorState.idle(sc), policy)
    v = 123.5
    values = np.array([v if var.key[0] == "lam" else 0.0 for var in m.variables])
    assert m.objective_value(values) == pytest.approx(factor * v)
    if policy in ("maxmin", "mixed"):
        assert ("lam",) in m.by_key and len(rows(m, "maxmin")) == 3
    else:
        assert ("lam",) not in m.by_key and not rows(m, "maxmin")


def test_policy_parse_errors_list_choices():
    with pytest.raises(ValueError, match="total, maxmin, mixed, only-restrictions"):
        ObjectivePolicy.parse("totl")
    assert ObjectivePolicy.parse("Only_Restrictions") is ObjectivePolicy.ONLY_RESTRICTIONS


# -- units and symmetry --------------------------------------------------------------

UNSCALED = ("coverage", "n_max", "memory", "cpu", "link", "single_route", "maxmin")


def _rate_scaled(sc, factor):
    apps = tuple(Application(a.id, a.arrival_time, a.lifetime, a.test_points, a.source_rate * factor,
                             a.memory, a.cpu_load, a.proc_power) for a in sc.applications)
    return Scenario(sc.nodes, sc.test_points, apps, sc.width, sc.height, sc.sensing_range, sc.n_max,
                    sc.activation_cost, sc.movement_cost, sc.radio, None, sc.interference_power)


def test_unit_audit_rate_scaling():
    sc = generate_instance(GeneratorConfig(n_nodes=9, width_m=60.0, height_m=60.0, n_apps=2), 4)
    live = [0, 1]
    a = build_model(sc, live, prior_for(sc, live), "total")
    big = _rate_scaled(sc, 1000.0)
    b = build_model(big, live, prior_for(big, live), "total")
    assert [v.key for v in a.variables] == [v.key for v in b.variables]
    for ra, rb in zip(a.constraints, b.constraints):
        assert (ra.family, ra.key) == (rb.family, rb.key)
        if ra.family in UNSCALED or ra.family in ("energy", "airtime", "flow_aggregate"):
            # Energy coefficients are per bit and airtime per bit/s; neither depends on c.
            assert ra.terms == rb.terms and ra.rhs == rb.rhs
        elif ra.family == "sink_balance":
            assert rb.rhs == pytest.approx(1000 * ra.rhs)
    for family in ("flow_conservation", "activation", "sink_balance"):
        for ra, rb in zip(rows(a, family), rows(b, family)):
            ya = {i: c for i, c in ra.terms if a.variables[i].key[0] == "y"}
            yb = {i: c for i, c in rb.terms if b.variables[i].key[0] == "y"}
            assert {i: 1000 * c for i, c in ya.items()} == pytest.approx(yb)
    assert b.constraints and a.family_counts() == b.family_counts()


def _permuted(sc, prior, perm):
    """Relabel node i as perm[i]."""
    inv = {p: i for i, p in enumerate(perm)}
    nodes = tuple(
        SensorNode(new, sc.nodes[inv[new]].position, sc.nodes[inv[new]].bandwidth, sc.nodes[inv[new]].memory,
                   sc.nodes[inv[new]].cpu, sc.nodes[inv[new]].initial_energy, sc.nodes[inv[new]].is_sink)
        for new in range(len(perm))
    )
    new_sc = Scenario(nodes, sc.test_points, sc.applications, sc.width, sc.height, sc.sensing_range,
                      sc.n_max, sc.activation_cost, sc.movement_cost, sc.radio, sc.big_k,
                      sc.interference_power)
    new_prior = PriorState(
        frozenset(perm[i] for i in prior.active),
        frozenset((perm[i], j, k) for i, j, k in prior.assignments),
        tuple(prior.residual_energy[inv[new]] for new in range(len(perm))),
        prior.remaining_lifetime,
    )
    return new_sc, new_prior


@pytest.mark.parametrize("seed", range(6))
def test_permutation_symmetry(seed):
    rng = random.Random(seed)
    sc, live, prior = tiny_instance(rng, max_nodes=4)
    policy = ["total", "maxmin", "mixed"][seed % 3]
    perm = list(range(len(sc.nodes)))
    rng.shuffle(perm)
    psc, pprior = _permuted(sc, prior, perm)
    try:
        a = build_model(sc, live, prior, policy)
    except StructuralInfeasibility:
        with pytest.raises(StructuralInfeasibility):
            build_model(psc, live, pprior, policy)
        return
    b = build_model(psc, live, pprior, policy)
    assert len(a.variables) == len(b.variables)
    assert a.family_counts() == b.family_counts()
    ra, rb = solve(a, SolverConfig(backend="highs")), solve(b, SolverConfig(backend="highs"))
    assert ra.status == rb.status
    if ra.optimal:
        assert rb.objective == pytest.approx(ra.objective, rel=1e-6, abs=1e-6)
