import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgfm.errors import AuxLookupError, ConfigError
from cgfm.pathkit import (
    PredictionTarget,
    SourceMode,
    conditional_velocity,
    draw_coupling,
    draw_source,
    smooth,
    target_g,
)
from cgfm.rng import stream
from cgfm.scheduler import Scheduler, interpolate

ALL = [Scheduler("condot"), Scheduler("poly", 3), Scheduler("vp"), Scheduler("cosine")]


def test_smooth_sigma_zero_is_identity(rng):
    x0 = rng.standard_normal((3, 4))
    out = smooth(x0, 0.0, rng)
    assert np.array_equal(out, x0) and out is not x0


def test_smooth_unit_noise_statistics():
    draws = smooth(np.zeros(100_000), 1.0, stream(1, "t"))
    assert abs(draws.mean()) < 0.02
    assert 0.99 <= draws.std() <= 1.01


def test_smooth_sigma_two_variance():
    draws = smooth(np.full(100_000, 5.0), 2.0, stream(2, "t"))
    assert 3.9 <= draws.var() <= 4.1


def test_smooth_has_no_repeats():
    draws = smooth(np.zeros(100_000), 0.3, stream(3, "t"))
    assert len(np.unique(draws)) == draws.size


def test_noise_mode_reproducible():
    a = draw_source(SourceMode("noise"), (2, 5), stream(9, "x"))
    b = draw_source(SourceMode("noise"), (2, 5), stream(9, "x"))
    assert np.array_equal(a, b)


def test_aux_sigma_zero_returns_aux():
    A = np.arange(6.0).reshape(2, 3)
    x0 = draw_source(SourceMode("aux", 0.0), (2, 3), stream(0), {4: A}, 4)
    assert np.array_equal(x0, A)


def test_aux_sigma_tail_bound():
    rng = stream(0, "tail")
    aux = {i: np.full((2, 3), float(i)) for i in range(1000)}
    x0 = draw_source(SourceMode("aux", 0.1), (1000, 2, 3), rng, aux, np.arange(1000))
    base = np.stack([aux[i] for i in range(1000)])
    assert np.max(np.abs(x0 - base)) <= 0.6


def test_aux_missing_window():
    with pytest.raises(AuxLookupError):
        draw_source(SourceMode("aux", 0.1), (2, 3), stream(0), {0: np.zeros((2, 3))}, 5)
    with pytest.raises(AuxLookupError):
        draw_source(SourceMode("aux", 0.1), (2, 3), stream(0), None, 0)


def test_coupling_keeps_x1_and_independent_noise():
    x1 = np.full((1, 1), 2.5)
    rng = stream(5, "coupling")
    draws = np.array([draw_coupling(np.zeros((1, 4)), x1, SourceMode("noise"), rng).x0[0, 0] for _ in range(10_000)])
    assert abs(draws.mean()) < 0.05
    assert 0.95 <= draws.std() <= 1.05
    c = draw_coupling(np.zeros((1, 4)), x1, SourceMode("noise"), rng)
    assert np.array_equal(c.x1, x1)
    c2 = c.at(Scheduler(), 0.25)
    assert np.allclose(c2.xt, 0.25 * x1 + 0.75 * c.x0)


def test_source_mode_validation():
    with pytest.raises(ConfigError):
        SourceMode("aux", -1.0)
    with pytest.raises(ConfigError):
        SourceMode("gauss")


def test_target_examples():
    s = Scheduler("condot")
    x0, x1 = np.full(1, 1.0), np.full(1, 3.0)
    assert target_g(PredictionTarget.X1, s, 0.3, x0, np.full(1, 7.0))[0] == 7.0
    assert target_g(PredictionTarget.UT, s, 0.3, x0, x1)[0] == 2.0
    assert target_g(PredictionTarget.X0, s, 0.3, np.full(1, -4.0), x1)[0] == -4.0


def test_velocity_examples(rng):
    s = Scheduler("condot")
    for t in rng.uniform(0, 1, 10):
        assert conditional_velocity(s, t, np.zeros(1), np.ones(1))[0] == 1.0
    x0, x1 = rng.standard_normal((2, 3))
    assert np.array_equal(conditional_velocity(Scheduler("poly", 3), 0.0, x0, x1), np.zeros(3))
    c = np.full(3, 1.7)
    assert np.array_equal(conditional_velocity(s, 0.4, c, c), np.zeros(3))


@pytest.mark.parametrize("s", ALL, ids=str)
def test_velocity_is_path_derivative(s, rng):
    h = 1e-6
    for _ in range(100):
        t = rng.uniform(h, 0.99)
        x0, x1 = rng.standard_normal((2, 3, 4))
        fd = (interpolate(s, t + h, x0, x1) - interpolate(s, t - h, x0, x1)) / (2 * h)
        assert np.max(np.abs(conditional_velocity(s, t, x0, x1) - fd)) < 1e-5


@pytest.mark.parametrize("text,expected", [("u", PredictionTarget.UT), ("X1", PredictionTarget.X1), ("x0", PredictionTarget.X0)])
def test_target_parse(text, expected):
    assert PredictionTarget.parse(text) is expected


def test_target_parse_rejects():
    with pytest.raises(ConfigError):
        PredictionTarget.parse("eps")


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(ALL), st.floats(0.0, 0.99), st.floats(-10, 10), st.floats(-10, 10))
def test_ut_target_equals_velocity(s, t, a, b):
    x0, x1 = np.array([a]), np.array([b])
    assert np.array_equal(target_g(PredictionTarget.UT, s, t, x0, x1), conditional_velocity(s, t, x0, x1))
