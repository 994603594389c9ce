import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strategies import random_models

from decompart.errors import ModelError, NegativeFlow
from decompart.io import load_model
from decompart.model import check_conservative, guarded_div, make_model, rhs_original, snapshot


def sirs():
    return load_model("sirs")


def test_sirs_snapshot_at_t0_by_hand():
    snap = snapshot(sirs(), 0.0, [10.0, 10.0, 1.0])
    F = np.array([[0, 0, 0.021], [0.56, 0, 0], [0, 0.4, 0]])
    assert np.allclose(snap.F, F, rtol=0, atol=1e-15)
    assert np.allclose(snap.z, [0.33, 0, 0], rtol=0, atol=1e-15)
    assert np.allclose(snap.y, [0.06, 0.66, 0.006], rtol=0, atol=1e-15)
    assert np.allclose(snap.tau_out, [0.62, 1.06, 0.027], rtol=0, atol=1e-15)
    assert np.allclose(snap.tau_in, [0.351, 0.56, 0.4], rtol=0, atol=1e-15)
    A = np.array([[-0.062, 0, 0.021], [0.056, -0.106, 0], [0, 0.04, -0.027]])
    assert np.allclose(snap.A, A, rtol=0, atol=1e-15)
    assert np.allclose(np.diag(snap.R), [10 / 0.62, 10 / 1.06, 1 / 0.027], rtol=1e-15)


def test_sirs_rhs_by_hand():
    assert np.allclose(rhs_original(sirs(), 0.0, [10.0, 10.0, 1.0]), [-0.269, -0.5, 0.373], rtol=0, atol=1e-15)


def test_output_channels_sum_to_output():
    m = sirs()
    x = [10.0, 10.0, 1.0]
    assert m.channel_rate(1, "disease", 0.0, x) == pytest.approx(0.6)
    assert m.channel_rate(1, "natural", 0.0, x) == pytest.approx(0.06)
    _, _, y = m.evaluate(0.0, x)
    assert y[1] == pytest.approx(0.66)
    with pytest.raises(ModelError):
        m.channel_rate(1, "nope", 0.0, x)


def test_guarded_div():
    num = np.array([1.0, 1.0, 1.0, 2.0])
    den = np.array([0.0, 1e-13, 1e-12, 4.0])
    assert np.array_equal(guarded_div(num, den), [0.0, 0.0, 0.0, 0.5])
    assert guarded_div(1.0, 1e-11) == pytest.approx(1e11)


def test_negative_flow_is_rejected():
    m = make_model(["a", "b"], {(2, 1): "x1 - 5"}, ["0", "0"], ["0", "0"], [1.0, 1.0])
    with pytest.raises(NegativeFlow) as info:
        snapshot(m, 0.0, [1.0, 1.0])
    assert info.value.index == (2, 1) and info.value.value == -4.0


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(names=["a", "a"]),
        dict(x0=[-1.0, 0.0]),
        dict(x0=[1.0]),
        dict(flows={(2, 1): "x3"}),
        dict(names=[]),
    ],
)
def test_model_validation(kwargs):
    base = dict(names=["a", "b"], flows={(2, 1): "x1"}, inputs=["1", "0"], outputs=["0", "x2"], x0=[1.0, 1.0])
    base.update(kwargs)
    if not base["names"]:
        base.update(inputs=[], outputs=[], x0=[], flows={})
    with pytest.raises(ModelError):
        make_model(**base)


@settings(max_examples=60, deadline=None)
@given(random_models(), st.floats(0.0, 5.0))
def test_closed_system_conserves_mass(m, t):
    assert check_conservative(m, [(t, m.x0)]).passed


@settings(max_examples=60, deadline=None)
@given(random_models())
def test_leaky_rhs_is_caught(m):
    F, _, _ = m.evaluate(0.0, m.x0)
    if not F.any():
        return

    def leaky(model, t, x):
        F, z, y = model.evaluate(t, x)
        return z + F.sum(axis=1) - y  # forgets the internal outflows

    assert not check_conservative(m, [(0.0, m.x0)], rhs=leaky).passed


@settings(max_examples=60, deadline=None)
@given(random_models())
def test_intensity_matrix_reproduces_rhs(m):
    snap = snapshot(m, 0.0, m.x0)
    assert np.allclose(snap.z + snap.A @ snap.x, rhs_original(m, 0.0, m.x0), rtol=1e-12, atol=1e-12)
    # columns of A sum to minus the output intensity
    assert np.allclose(snap.A.sum(axis=0), -snap.y / snap.x, rtol=1e-12, atol=1e-12)


def test_linearity_of_bundled_models():
    assert load_model("hippe").linearity()["linear"]
    assert not sirs().linearity()["linear"]


def test_closed_model_has_no_boundary():
    c = sirs().closed()
    _, z, y = c.evaluate(0.0, [1.0, 2.0, 3.0])
    assert not z.any() and not y.any()
