import numpy as np
import pytest
from hypothesis import given, settings

import oracles as o
from strategies import random_models

from decompart.errors import OutOfRange, StepSizeUnderflow
from decompart.integrator import IntegratorConfig, integrate, resample
from decompart.io import load_model
from decompart.model import make_model


def test_hippe_closed_form_on_dense_grid():
    traj = integrate(load_model("hippe"), IntegratorConfig(8.0, sample_grid=np.linspace(0, 8, 161)))
    for r, t in enumerate(traj.times):
        assert np.abs(traj.X[r] - o.hippe_X(t)).max() < 1e-8
        assert np.abs(traj.Xinit[r] - o.hippe_Xinit(t)).max() < 1e-8
        assert np.abs(traj.x[r] - o.hippe_x(t)).max() < 1e-8


def test_sirs_against_reference_rk4():
    traj = integrate(load_model("sirs"), IntegratorConfig(50.0))
    ref = o.rk4(o.sirs_rhs, o.SIRS_X0, 0.0, 50.0, 20000)
    assert np.abs(traj.x[-1] - ref).max() < 1e-7


def test_sirs_reaches_endemic_equilibrium():
    traj = integrate(load_model("sirs"), IntegratorConfig(2000.0), mode="original")
    assert np.abs(traj.x[-1] - o.sirs_equilibrium()).max() < 1e-6
    assert traj.X is None


def test_original_and_decomposed_modes_agree():
    m = load_model("sirs")
    cfg = IntegratorConfig(100.0)
    a = integrate(m, cfg, mode="original")
    b = integrate(m, cfg)
    assert np.abs(a.x - b.x).max() < 1e-6
    assert np.abs(b.X.sum(axis=2) + b.Xinit.sum(axis=2) - b.x).max() < 1e-6


@settings(max_examples=25, deadline=None)
@given(random_models())
def test_reconstruction_on_random_models(m):
    traj = integrate(m, IntegratorConfig(3.0, sample_grid=np.linspace(0, 3, 7)))
    rec = traj.X.sum(axis=2) + traj.Xinit.sum(axis=2)
    assert np.abs(rec - traj.x).max() <= 1e-6 * max(1.0, np.abs(traj.x).max())
    assert traj.X.min() > -1e-8 and traj.Xinit.min() > -1e-8


def test_dense_output_and_resampling():
    traj = integrate(load_model("hippe"), IntegratorConfig(5.0, sample_grid=[0, 1, 2, 5]))
    ds = traj.state_at(1.5)
    assert np.abs(ds.X - o.hippe_X(1.5)).max() < 1e-7
    re = resample(traj, [0.0, 1.0, 2.5, 5.0])
    assert np.array_equal(re.X[1], traj.X[1])
    assert np.abs(re.X[2] - o.hippe_X(2.5)).max() < 1e-7
    with pytest.raises(OutOfRange):
        traj.state_at(6.0)
    with pytest.raises(OutOfRange):
        resample(traj, [0.0, 7.0])


def test_empty_sample_grid():
    traj = integrate(load_model("hippe"), IntegratorConfig(1.0, sample_grid=[]))
    assert traj.x.shape == (0, 2) and traj.X.shape == (0, 2, 2)
    assert np.abs(traj.terminal.X - o.hippe_X(1.0)).max() < 1e-8


@pytest.mark.parametrize(
    "kwargs",
    [dict(t_end=0.0), dict(t_end=1.0, rtol=0.0), dict(t_end=1.0, atol=-1.0)],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        IntegratorConfig(**kwargs)


def test_grid_outside_interval():
    with pytest.raises(ValueError):
        IntegratorConfig(1.0, sample_grid=[0.0, 2.0]).grid()


def test_blow_up_raises_step_size_underflow():
    # x' = x^2 with x(0) = 1 escapes at t = 1
    m = make_model(["a"], {}, ["x1^2"], ["0"], [1.0])
    with pytest.raises(StepSizeUnderflow) as info:
        integrate(m, IntegratorConfig(2.0), mode="original")
    assert 0.9 < info.value.t < 1.0 + 1e-6
