import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as o
from decompart.integrator import IntegratorConfig, integrate
from decompart.io import load_model, load_static
from decompart.model import snapshot
from decompart.static import (
    StaticSystem,
    indirect_support,
    residence_times,
    static_decompose,
    static_diact,
    static_distribution,
)


def hippe_static():
    return StaticSystem(np.array([[0, 2 / 3], [4 / 3, 0]]), [1, 1], [1 / 3, 5 / 3], x=[1, 1])


def test_hippe_static_decomposition():
    X, T = static_decompose(hippe_static())
    assert np.abs(X - o.HIPPE_STEADY_X).max() < 1e-15
    assert np.abs(T - o.HIPPE_STEADY_X * np.array([5 / 3, 7 / 3])[:, None]).max() < 1e-14


def test_hippe_static_from_long_run():
    m = load_model("hippe")
    traj = integrate(m, IntegratorConfig(40.0))
    X, _ = static_decompose(StaticSystem.from_snapshot(snapshot(m, 40.0, traj.x[-1])))
    assert np.abs(X - o.HIPPE_STEADY_X).max() < 1e-8
    assert np.abs(traj.X[-1] - o.HIPPE_STEADY_X).max() < 1e-8


@st.composite
def balanced_systems(draw):
    n = draw(st.integers(1, 5))
    A = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j and draw(st.booleans()):
                A[i, j] = draw(st.floats(0.05, 3.0))
    out = np.array([draw(st.floats(0.05, 2.0)) for _ in range(n)])
    A -= np.diag(A.sum(axis=0) + out)
    z = np.array([draw(st.sampled_from([0.0, 0.5, 2.0, 10.0])) for _ in range(n)])
    z[draw(st.integers(0, n - 1))] += 1.0
    x = np.linalg.solve(A, -z)
    F = A * x[None, :]
    np.fill_diagonal(F, 0.0)
    return StaticSystem(F, z, out * x, x=x)


@settings(max_examples=150, deadline=None)
@given(balanced_systems())
def test_throughflow_matrix_matches_power_series(s):
    assert s.balanced
    N = s.throughflow_matrix()
    ref = o.throughflow_neumann(s.F, s.tau, terms=3000)
    assert np.allclose(N, ref, rtol=1e-8, atol=1e-10)


@settings(max_examples=150, deadline=None)
@given(balanced_systems())
def test_static_distribution_properties(s):
    N, _ = static_distribution(s)
    assert np.abs(N["d"] + N["i"] - N["t"]).max() <= 1e-10
    assert np.abs(N["a"] + N["c"] - N["t"]).max() <= 1e-10
    for kind in ("d", "i", "c", "t"):
        assert N[kind].min() >= -1e-12
    assert not N["i"][~indirect_support(s.F)].any()
    X, T = static_decompose(s)
    assert np.allclose(X.sum(axis=1), s.x, rtol=1e-10)
    assert np.allclose(T.sum(axis=1), s.tau, rtol=1e-10)


def test_indirect_support_by_hand():
    # chain 1 -> 2 -> 3 plus a return 3 -> 2
    F = np.zeros((3, 3))
    F[1, 0] = F[2, 1] = F[1, 2] = 1.0
    sup = indirect_support(F)
    expected = np.zeros((3, 3), dtype=bool)
    expected[2, 0] = True  # 1 -> 2 -> 3
    expected[1, 0] = True  # 1 -> 2 -> 3 -> 2
    expected[1, 1] = True  # 2 -> 3 -> 2
    expected[2, 2] = True  # 3 -> 2 -> 3
    assert np.array_equal(sup, expected)


def test_cone_spring_zero_structure_and_balance():
    s = load_static("cone_spring")
    assert s.balanced
    sd = static_diact(s)
    Ti = sd.T["i"]
    assert not Ti[0].any() and Ti[2, 1] == 0.0 and Ti[4, 3] == 0.0
    # compartments 3..5 get no external input, so their simple flows vanish
    for kind in ("d", "i", "a", "c", "t"):
        assert not sd.Ttilde[kind][:, 2:].any()
    assert any("no external input" in f for f in sd.flags)


def test_cone_spring_throughflow_against_power_series():
    s = load_static("cone_spring")
    assert np.allclose(s.throughflow_matrix(), o.throughflow_neumann(o.CONE_F, s.tau), rtol=1e-10)
    assert np.allclose(s.tau, [11184, 11483, 5205, 2384, 370], rtol=0, atol=1e-9)


def test_residence_times():
    s = load_static("cone_spring")
    rep = residence_times(s)
    assert rep.r == pytest.approx(s.x / s.tau)
    assert list(rep.order) == list(np.argsort(rep.r) + 1)
    with pytest.raises(ValueError):
        residence_times(StaticSystem(o.CONE_F, o.CONE_Z, o.CONE_Y))


def test_storages_from_residence_times():
    s = StaticSystem(np.array([[0, 2 / 3], [4 / 3, 0]]), [1, 1], [1 / 3, 5 / 3], R=[3 / 5, 3 / 7])
    assert np.allclose(s.x, [1.0, 1.0])
    assert any("R * tau" in n for n in s.notes)


def test_unbalanced_system_is_detected():
    s = StaticSystem(np.array([[0, 1.0], [1.0, 0]]), [1, 0], [0.5, 0])
    assert not s.balanced
    assert s.balance_residual() > 0.1


def test_static_without_storages():
    sd = static_diact(StaticSystem(o.CONE_F, o.CONE_Z, o.CONE_Y))
    assert sd.X is None and sd.S is None
    assert any("no storages" in f for f in sd.flags)
