import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as o
from decompart.errors import PathSetTooLarge, PathSyntaxError, UnreachableOutput, ZeroThroughflow
from decompart.integrator import IntegratorConfig, integrate
from decompart.io import load_model, read_document
from decompart.model import make_model, snapshot
from decompart.pathflow import (
    SubflowPath,
    cumulative,
    cycling_inflow,
    exhaustiveness,
    natural_decomposition,
    parse_path,
    path_records,
    static_transient,
    visit_tree,
)
from decompart.static import StaticSystem

SIRS_NAMES = ("S", "I", "R")


def run_paths(model, paths, t_end=10.0, m=101):
    traj = integrate(model, IntegratorConfig(t_end, sample_grid=np.linspace(0, t_end, m)), paths=paths)
    return traj, path_records(traj)


# ---------------------------------------------------------------- text form


def test_parse_labelled_path():
    p = parse_path("1: S -> I -> R -> S -> I -> 0:disease", SIRS_NAMES)
    assert p == SubflowPath(1, (1, 2, 3, 1, 2), None, True, "disease", 1, 0.0)
    assert p.links == [(1, 2), (2, 3), (3, 1), (1, 2), (2, 0)]
    assert not p.closed


def test_parse_options():
    p = parse_path("0: src=2 1 -> 2 -> 1 cycles=3 from=1.5")
    assert (p.subsystem, p.source, p.nodes, p.cycles, p.t1) == (0, 2, (1, 2, 1), 3, 1.5)
    assert p.closed
    assert p.chain() == (1, 2, 1, 2, 1, 2, 1)
    assert parse_path("1: src=in 1 -> 0").source is None


@pytest.mark.parametrize(
    "text",
    ["S -> I", "1: S ->", "1: -> S", "1: Q -> S", "1: 1 -> 2 cycles=x", "1: 1 -> 2 from=?", "1: 1 -> 2 -> 1 cycles=0"],
)
def test_path_syntax_errors(text):
    with pytest.raises(PathSyntaxError):
        parse_path(text, SIRS_NAMES)


def test_channel_needs_exit():
    with pytest.raises(PathSyntaxError):
        SubflowPath(1, (1,), None, False, "disease")


@st.composite
def paths(draw):
    nodes = tuple(draw(st.lists(st.integers(1, 5), min_size=1, max_size=6)))
    exits = draw(st.booleans())
    channel = draw(st.sampled_from([None, "a", "death"])) if exits else None
    p = SubflowPath(draw(st.integers(0, 5)), nodes, draw(st.sampled_from([None, 1, 3])), exits, channel,
                    draw(st.integers(1, 9)), draw(st.sampled_from([0.0, 0.5, 12.25])))
    return p if p.closed else SubflowPath(p.subsystem, nodes, p.source, exits, channel, 1, p.t1)


@settings(max_examples=200, deadline=None)
@given(paths())
def test_text_round_trip(p):
    assert parse_path(p.to_text()) == p


def test_text_round_trip_with_labels():
    p = parse_path("1: S -> I -> R -> S cycles=4", SIRS_NAMES)
    assert parse_path(p.to_text(SIRS_NAMES), SIRS_NAMES) == p


# ---------------------------------------------------------------- dynamics against closed forms


def test_single_link_transient_closed_form():
    traj, (rec,) = run_paths(load_model("hippe"), [parse_path("1: 1 -> 0")])
    t = rec.times
    expected = 0.6 * (1 - np.exp(-5 * t / 3))
    assert np.abs(rec.storage[:, 0] - expected).max() < 1e-8
    assert np.abs(rec.inflow[:, 0] - 1.0).max() < 1e-12
    assert np.abs(rec.output - expected / 3).max() < 1e-8


def test_delayed_start():
    traj, (rec,) = run_paths(load_model("hippe"), [parse_path("1: 1 -> 0 from=2")])
    t = rec.times
    expected = np.where(t < 2, 0.0, 0.6 * (1 - np.exp(-5 * (t - 2) / 3)))
    assert np.abs(rec.storage[:, 0] - expected).max() < 1e-8
    assert np.all(rec.inflow[t < 2] == 0)


def test_two_link_chain_against_rk4():
    traj, (rec,) = run_paths(load_model("hippe"), [parse_path("1: 1 -> 2 -> 0")], t_end=4.0, m=5)

    def f(t, v):
        return np.array([1 - 5 / 3 * v[0], 4 / 3 * v[0] - 7 / 3 * v[1]])

    for r, t in enumerate(rec.times):
        ref = o.rk4(f, [0.0, 0.0], 0.0, t, 4000) if t > 0 else np.zeros(2)
        assert np.abs(rec.storage[r] - ref).max() < 1e-9
    # exit through compartment 2's output at 5/3 per unit storage
    assert np.allclose(rec.output, 5 / 3 * rec.storage[:, 1], atol=1e-12)


def test_shared_prefixes_are_one_block():
    paths = [parse_path("1: 1 -> 0"), parse_path("1: 1 -> 2 -> 0")]
    traj, recs = run_paths(load_model("hippe"), paths)
    assert traj.paths.size == 2
    assert np.array_equal(recs[0].storage[:, 0], recs[1].storage[:, 0])


def test_closed_path_cumulative_and_cycling():
    traj, (rec,) = run_paths(load_model("hippe"), [parse_path("1: 1 -> 2 -> 1 cycles=3")], t_end=30.0)
    st_, inf, _ = cumulative(rec, 1)
    cyc_in, _ = cycling_inflow(rec, 1)
    assert np.allclose(inf, rec.inflow[:, [0, 2, 4, 6]].sum(axis=1))
    assert np.allclose(cyc_in, inf - rec.inflow[:, 0])
    # near steady state the inflow at 1 tends to the truncated geometric series
    r = (4 / 5) * (2 / 7)
    assert inf[-1] == pytest.approx(sum(r**j for j in range(4)), rel=1e-6)


def test_initial_subsystem_path_is_seeded_with_stock():
    traj, (rec,) = run_paths(load_model("hippe"), [parse_path("0: 1 -> 0")], t_end=3.0)
    assert rec.storage[0, 0] == 3.0
    assert np.abs(rec.storage[:, 0] - 3 * np.exp(-5 * rec.times / 3)).max() < 1e-8


# ---------------------------------------------------------------- path sets


def test_natural_decomposition_of_hippe():
    ps = natural_decomposition(load_model("hippe"), 1, cycles=8)
    assert [(p.nodes, p.exits, p.cycles) for p in ps] == [((1,), True, 1), ((1, 2), True, 1), ((1, 2, 1), False, 8)]


@pytest.mark.parametrize("k", [1, 2])
def test_hippe_exhaustiveness(k):
    m = load_model("hippe")
    traj = integrate(m, IntegratorConfig(10.0), paths=natural_decomposition(m, k, cycles=10))
    assert exhaustiveness(traj, k).max_error < 1e-5


def test_sirs_exhaustiveness_with_channels():
    m = load_model("sirs")
    notes = []
    ps = natural_decomposition(m, 1, cycles=8, notes=notes)
    assert {p.channel for p in ps if p.exits and p.nodes[-1] == 2} == {"disease", "natural"}
    assert notes
    traj = integrate(m, IntegratorConfig(50.0), paths=ps)
    assert exhaustiveness(traj, 1).max_error < 1e-4


def test_visit_tree_shape():
    m = load_model("hippe")
    assert [p.nodes for p in visit_tree(m, 1, cycles=1)] == [(1, 2, 1, 2)]
    assert [p.nodes for p in visit_tree(m, 2, cycles=2)] == [(2, 1, 2, 1, 2, 1)]
    with pytest.raises(PathSetTooLarge):
        visit_tree(load_model("sirs"), 1, cycles=30, max_visits=50)
    with pytest.raises(ValueError):
        visit_tree(m, 0)


def test_unreachable_output_warns():
    m = make_model(["a", "b"], {(2, 1): "x1"}, ["1", "1"], ["x1", "x2"], [1.0, 1.0])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        natural_decomposition(m, 2)
    assert any(issubclass(w.category, UnreachableOutput) for w in caught)


def test_sirs_paths_are_proportional_channels():
    doc = read_document("sirs")
    traj, recs = run_paths(doc.model, doc.paths, t_end=100.0)
    a, b = (r.output for r in recs)
    live = b > 0
    assert np.allclose(a[live] / b[live], 10.0, rtol=1e-12)


def test_dynamic_path_tends_to_static_transient():
    doc = read_document("sirs")
    traj, recs = run_paths(doc.model, doc.paths, t_end=2000.0, m=11)
    snap = snapshot(doc.model, 2000.0, traj.x[-1])
    s = StaticSystem.from_snapshot(snap)
    for p, rec in zip(doc.paths, recs):
        if p.channel == "disease":
            # static transient uses the total output; scale to the channel share
            share = 0.06 / 0.066
            ref = static_transient(s, SubflowPath(p.subsystem, p.nodes, p.source, True, None, 1)).outflow[-1] * share
            assert rec.output[-1] == pytest.approx(ref, rel=1e-6)


# ---------------------------------------------------------------- static


def hippe_static():
    return StaticSystem(np.array([[0, 2 / 3], [4 / 3, 0]]), [1, 1], [1 / 3, 5 / 3], x=[1, 1])


def test_static_single_link():
    tr = static_transient(hippe_static(), parse_path("1: 1 -> 0"))
    assert tr.inflow[0] == pytest.approx(1.0)
    assert tr.outflow[0] == pytest.approx(0.2)
    assert tr.storage[0] == pytest.approx(0.6)


def test_static_cycle_geometric_series():
    tr = static_transient(hippe_static(), parse_path("1: 1 -> 2 -> 1 cycles=200"))
    _, inflow, _ = tr.cumulative(1)
    assert inflow == pytest.approx(35 / 27, rel=1e-9)
    assert not tr.truncated
    tr2 = static_transient(hippe_static(), parse_path("1: 1 -> 2 -> 1 cycles=2"))
    assert tr2.truncated


def test_static_zero_throughflow():
    s = StaticSystem(np.zeros((2, 2)), [1, 0], [1, 0])
    with pytest.raises(ZeroThroughflow):
        static_transient(s, parse_path("1: 1 -> 2 -> 0"))
