import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
import hypothesis.extra.numpy as hnp
import hypothesis.strategies as st

from wlde import growth
from wlde.errors import ArtifactIOError, ClippingWarning, DomainError, ResourceError
from wlde.lattice import (
    DispersalSetting,
    LatticeConfig,
    LatticeField,
    ProfileShape,
    ReleaseProfile,
    cost,
    init_field,
    simulate,
    step,
    trajectory_from_bytes,
    trajectory_to_bytes,
    trajectory_to_csv,
)


def test_config_defaults_and_coercion():
    config = LatticeConfig(extent=100)
    assert config.shape == (100,)
    assert config.center == (50,)
    assert config.spacing == 1.0
    assert config.boundary.value == "periodic"


@pytest.mark.parametrize(
    "kwargs",
    [{"extent": 4}, {"dimension": 3, "extent": (8, 8, 8)}, {"dimension": 2, "extent": (16,)}, {"spacing": 0.0}],
)
def test_config_invariants(kwargs):
    with pytest.raises(ValueError):
        LatticeConfig(**kwargs)


def test_field_rejects_out_of_range():
    with pytest.raises(DomainError):
        LatticeField(values=np.array([0.5, 1.2]))
    field = LatticeField(values=np.array([-1e-13, 1.0]))
    assert field.values[0] == 0.0
    assert not field.values.flags.writeable


def test_pulse_is_strict_and_costs_2aL(lattice):
    profile = ReleaseProfile(shape=ProfileShape.PULSE, amplitude=0.2, half_width=0.5)
    field = init_field(lattice, profile)
    assert np.count_nonzero(field.values) == 1
    assert field.values[lattice.center] == pytest.approx(0.2)
    assert cost(profile) == pytest.approx(0.2)


def test_profile_shapes(lattice):
    center = lattice.center[0]
    tri = init_field(lattice, ReleaseProfile(shape=ProfileShape.TRIANGULAR, amplitude=0.8, half_width=4.0)).values
    quad = init_field(lattice, ReleaseProfile(shape=ProfileShape.QUADRATIC, amplitude=0.8, half_width=4.0)).values
    assert tri[center + 2] == pytest.approx(0.4)
    assert quad[center + 2] == pytest.approx(0.6)
    assert tri[center + 4] == 0.0 and quad[center + 4] == 0.0


@pytest.mark.parametrize(
    "shape,expected", [(ProfileShape.PULSE, 2.0), (ProfileShape.TRIANGULAR, 1.0), (ProfileShape.QUADRATIC, 4.0 / 3.0)]
)
def test_cost_formulas(shape, expected):
    assert cost(ReleaseProfile(shape=shape, amplitude=0.5, half_width=2.0)) == pytest.approx(expected)


def test_profile_beyond_lattice(lattice):
    with pytest.raises(DomainError):
        init_field(lattice, ReleaseProfile(amplitude=0.5, half_width=40.0))


def test_profile_validation():
    with pytest.raises(ValueError):
        ReleaseProfile(amplitude=0.0, half_width=1.0)
    with pytest.raises(ValueError):
        ReleaseProfile(amplitude=0.5, half_width=-1.0)


def test_homogeneous_state_only_grows(params, gaussian_kernel):
    field = LatticeField(values=np.full(64, 0.6))
    nxt = step(field, params, DispersalSetting(delta=0.5), gaussian_kernel)
    np.testing.assert_allclose(nxt.values, growth.evaluate(params, 0.6), atol=1e-12)
    assert nxt.generation == 1


def test_uniform_delta_array_matches_constant(params, gaussian_kernel):
    rng = np.random.default_rng(3)
    field = LatticeField(values=rng.uniform(size=64))
    scalar = step(field, params, DispersalSetting(delta=0.3), gaussian_kernel)
    array = step(field, params, DispersalSetting(delta=np.full(64, 0.3)), gaussian_kernel)
    np.testing.assert_allclose(scalar.values, array.values, atol=1e-12)


def test_heterogeneous_delta_may_clip(params, gaussian_kernel):
    delta = np.zeros(64)
    delta[30:34] = 1.0
    values = np.ones(64)
    with pytest.warns(ClippingWarning):
        step(LatticeField(values=values), params, DispersalSetting(delta=delta), gaussian_kernel)


def test_delta_range():
    with pytest.raises(DomainError):
        DispersalSetting(delta=0.0)
    with pytest.raises(DomainError):
        DispersalSetting(delta=np.array([0.5, 1.5]))
    with pytest.raises(DomainError):
        DispersalSetting(delta=np.array([0.5, 0.5])).require_constant()


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(values=hnp.arrays(np.float64, 64, elements=st.floats(min_value=0.0, max_value=1.0)))
def test_step_stays_in_unit_interval(values, params, gaussian_kernel):
    field = LatticeField(values=values)
    for _ in range(3):
        field = step(field, params, DispersalSetting(delta=0.4), gaussian_kernel)
        assert field.values.min() >= 0.0 and field.values.max() <= 1.0


@pytest.mark.parametrize("shift", [1, 7, -20])
def test_step_commutes_with_translation(params, gaussian_kernel, shift):
    rng = np.random.default_rng(11)
    values = rng.uniform(size=64)
    dispersal = DispersalSetting(delta=0.4)
    moved_then_stepped = step(LatticeField(values=np.roll(values, shift)), params, dispersal, gaussian_kernel)
    stepped_then_moved = np.roll(step(LatticeField(values=values), params, dispersal, gaussian_kernel).values, shift)
    np.testing.assert_allclose(moved_then_stepped.values, stepped_then_moved, atol=1e-12)


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    lower=hnp.arrays(np.float64, 64, elements=st.floats(min_value=0.0, max_value=1.0)),
    gap=hnp.arrays(np.float64, 64, elements=st.floats(min_value=0.0, max_value=1.0)),
)
def test_step_preserves_order(lower, gap, params, gaussian_kernel):
    upper = np.minimum(lower + gap, 1.0)
    dispersal = DispersalSetting(delta=0.7)
    low = step(LatticeField(values=lower), params, dispersal, gaussian_kernel)
    high = step(LatticeField(values=upper), params, dispersal, gaussian_kernel)
    assert np.all(low.values <= high.values + 1e-12)


def test_simulate_zero_generations(lattice, params, gaussian_kernel):
    profile = ReleaseProfile(amplitude=0.5, half_width=3.0)
    traj = simulate(lattice, profile, params, DispersalSetting(delta=0.2), gaussian_kernel, 0)
    assert len(traj) == 1
    np.testing.assert_array_equal(traj.final.values, init_field(lattice, profile).values)


def test_simulate_stride_keeps_final(lattice, params, gaussian_kernel):
    profile = ReleaseProfile(amplitude=0.5, half_width=3.0)
    dense = simulate(lattice, profile, params, DispersalSetting(delta=0.2), gaussian_kernel, 10)
    strided = simulate(lattice, profile, params, DispersalSetting(delta=0.2), gaussian_kernel, 10, stride=3)
    assert list(strided.generations) == [0, 3, 6, 9, 10]
    assert dense.is_dense and not strided.is_dense
    np.testing.assert_array_equal(strided.final.values, dense.final.values)
    with pytest.raises(DomainError):
        strided.require_dense()


def test_memory_guard(lattice, params, gaussian_kernel):
    with pytest.raises(ResourceError):
        simulate(
            lattice, ReleaseProfile(amplitude=0.5, half_width=3.0), params, DispersalSetting(delta=0.2),
            gaussian_kernel, 100, memory_budget=1024,
        )


def test_subthreshold_release_dies(lattice, params, gaussian_kernel):
    traj = simulate(
        lattice, ReleaseProfile(amplitude=0.2, half_width=3.0), params, DispersalSetting(delta=0.2),
        gaussian_kernel, 100,
    )
    assert traj.final.values.max() < 1e-6


def test_binary_dump_round_trip(lattice, params, gaussian_kernel):
    traj = simulate(
        lattice, ReleaseProfile(amplitude=0.9, half_width=3.0), params, DispersalSetting(delta=0.2),
        gaussian_kernel, 5,
    )
    payload = trajectory_to_bytes(traj)
    assert payload[:5] == b"WLDE1"
    assert payload[5] == 2
    np.testing.assert_array_equal(trajectory_from_bytes(payload), traj.values)
    with pytest.raises(ArtifactIOError):
        trajectory_from_bytes(b"XXXXX" + payload[5:])
    with pytest.raises(ArtifactIOError):
        trajectory_from_bytes(payload[:-8])


def test_csv_header(make_trajectory):
    traj = make_trajectory(np.full((2, 8), 0.25))
    text = trajectory_to_csv(traj, "abc123")
    lines = text.split("\n")
    assert lines[0] == "# config_sha256=abc123"
    assert lines[1].startswith("generation,site_0,")
    assert lines[2].startswith("0,0.25,")
    assert "\r" not in text
