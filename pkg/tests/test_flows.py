import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import CHAOTIC, TWO_CYCLE
from oracles import standard_map, standard_orbit
from skeff import flows
from skeff.errors import (DomainError, FlowUndefinedError, RecurrenceNotFound,
                          UnsupportedFlowError)

angles = st.floats(min_value=-50.0, max_value=50.0, allow_nan=False)


# --- wrapping and distances

@given(angles)
def test_wrap_angle_range(x):
    y = flows.wrap_angle(x)
    assert 0.0 <= y < 2 * math.pi
    assert math.isclose(math.cos(y), math.cos(x), abs_tol=1e-9)


@given(angles)
def test_wrap_delta_range(x):
    y = flows.wrap_delta(x)
    assert -math.pi < y <= math.pi
    assert math.isclose(math.sin(y), math.sin(x), abs_tol=1e-9)


def test_wrap_delta_half_turn_maps_to_plus_pi():
    assert flows.wrap_delta(-math.pi) == pytest.approx(math.pi)
    assert flows.wrap_delta(np.array([-math.pi]))[0] == pytest.approx(math.pi)


def test_torus_distance_wraps_around():
    assert flows.torus_distance((0.01, 0.0), (2 * math.pi - 0.01, 0.0)) == pytest.approx(0.02)


@given(angles, angles, angles, angles)
def test_torus_distance_symmetric_and_bounded(a, b, c, d):
    x = flows.torus_distance((a, b), (c, d))
    assert x == pytest.approx(flows.torus_distance((c, d), (a, b)))
    assert 0.0 <= x <= math.pi * math.sqrt(2) + 1e-12


# --- stepping

def test_fixed_points(sm):
    for p in [(0.0, 0.0), (0.0, math.pi)]:
        q = flows.step(sm, p)
        assert flows.torus_distance(q, p) < 1e-12


def test_two_cycle(sm):
    a = flows.step(sm, TWO_CYCLE)
    assert flows.torus_distance(a, (math.pi, math.pi)) < 1e-12
    assert flows.torus_distance(flows.step(sm, a), TWO_CYCLE) < 1e-12


@settings(max_examples=200)
@given(st.floats(0, 2 * math.pi, exclude_max=True), st.floats(0, 2 * math.pi, exclude_max=True))
def test_step_matches_oracle(a, b):
    q = flows.step(flows.StandardMap(), (a, b))
    ra, rb = standard_map(a, b)
    assert flows.torus_distance(q, (ra, rb)) < 1e-12


def test_step_array_matches_scalar(sm, rng):
    pts = rng.uniform(0, 2 * math.pi, size=(200, 2))
    out = flows.step_array(sm, pts)
    for p, q in zip(pts, out):
        assert flows.torus_distance(flows.step(sm, p), q) < 1e-13


def test_identity_flow():
    assert flows.step(flows.Identity(), (1.0, 2.0)) == flows.PhasePoint(1.0, 2.0)


def test_cyclic_list_steps_and_rejects_off_points():
    cl = flows.CyclicList(((0.1, 0.2), (0.3, 0.4), (0.5, 0.6)))
    assert flows.step(cl, (0.5, 0.6)) == flows.PhasePoint(0.1, 0.2)
    with pytest.raises(FlowUndefinedError):
        flows.step(cl, (1.0, 1.0))


# --- jacobian

def test_jacobian_examples(sm):
    np.testing.assert_allclose(flows.jacobian(sm, (0.0, 0.0)), [[1, 2], [1, 3]])
    np.testing.assert_allclose(flows.jacobian(sm, (0.0, math.pi)), [[1, -2], [1, -1]], atol=1e-15)


def test_jacobian_area_preserving(sm, rng):
    for p in rng.uniform(0, 2 * math.pi, size=(1000, 2)):
        assert np.linalg.det(flows.jacobian(sm, p)) == pytest.approx(1.0, abs=1e-12)


def test_jacobian_matches_finite_difference(sm, rng):
    h = 1e-6
    for p in rng.uniform(0.5, 5.5, size=(20, 2)):
        J = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = h
            plus = np.array(standard_map(*(p + e)))
            minus = np.array(standard_map(*(p - e)))
            J[:, k] = flows.wrap_delta(plus - minus) / (2 * h)
        np.testing.assert_allclose(flows.jacobian(sm, p), J, atol=1e-6)


def test_jacobian_unsupported_for_cyclic_list():
    with pytest.raises(UnsupportedFlowError):
        flows.jacobian(flows.CyclicList(((0.0, 0.0),)), (0.0, 0.0))


# --- orbits and recurrences

def test_orbit_matches_oracle(sm):
    o = flows.orbit(sm, CHAOTIC, 50)
    ref = standard_orbit(CHAOTIC, 50)
    assert len(o) == 51
    for a, b in zip(o.points, ref):
        assert flows.torus_distance(a, b) < 1e-9
    with pytest.raises(ValueError):
        o.points[0, 0] = 1.0


def test_first_recurrence_two_cycle(sm):
    rec = flows.first_recurrence(sm, TWO_CYCLE, 1e-3)
    assert rec.p == 2
    assert len(rec.points) == 2 and len(rec.orbit) == 3


def test_first_recurrence_fixed_point_and_identity(sm):
    assert flows.first_recurrence(sm, (0.0, 0.0), 1e-6).p == 1
    assert flows.first_recurrence(flows.Identity(), (1.0, 2.0), 1e-6).p == 1


def test_first_recurrence_cyclic_list():
    cl = flows.CyclicList(((0.1, 0.2), (2.0, 3.0)))
    assert flows.first_recurrence(cl, (0.1, 0.2), 1e-6).p == 2


def test_first_recurrence_chaotic_instance(sm):
    # the chaotic seed returns within 0.1 after several hundred steps
    rec = flows.first_recurrence(sm, CHAOTIC, 0.1)
    assert 100 <= rec.p <= 1000
    d = flows.torus_distance(rec.orbit.points[-1], CHAOTIC)
    assert d < 0.1
    assert np.hypot(*rec.displacement) == pytest.approx(d)
    # no earlier return
    pts = rec.orbit.points[1:-1]
    assert np.all(np.hypot(*flows.wrap_delta(pts - np.array(CHAOTIC)).T) >= 0.1)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 6.2), st.floats(0.05, 6.2), st.sampled_from([0.3, 0.1, 0.05]))
def test_recurrence_monotone_in_epsilon(a, b, eps):
    sm = flows.StandardMap()
    try:
        fine = flows.first_recurrence(sm, (a, b), eps / 2, 20000)
    except RecurrenceNotFound:
        return
    coarse = flows.first_recurrence(sm, (a, b), eps, 20000)
    assert coarse.p <= fine.p


def test_recurrence_errors(sm):
    with pytest.raises(DomainError):
        flows.first_recurrence(sm, (0.5, 0.5), 0.0)
    with pytest.raises(RecurrenceNotFound) as err:
        flows.first_recurrence(sm, (0.5, 0.5), 1e-6, n_max=10)
    assert err.value.n_max == 10 and err.value.min_distance > 1e-6


# --- Lyapunov exponents

def test_lyapunov_fixed_point(sm):
    # exact finite-n value: log ||J^n (1, 0)|| / n with J = [[1, 2], [1, 3]]
    n = 10**4
    w, V = np.linalg.eig(np.array([[1.0, 2.0], [1.0, 3.0]]))
    c = np.linalg.solve(V, [1.0, 0.0])
    k = int(np.argmax(w))
    expected = math.log(w[k]) + math.log(abs(c[k]) * np.linalg.norm(V[:, k])) / n
    lam = flows.lyapunov_exponent(sm, (0.0, 0.0), n)
    assert lam == pytest.approx(expected, rel=1e-9)
    assert lam == pytest.approx(math.log(2 + math.sqrt(3)), rel=1e-3)


def test_lyapunov_parabolic_two_cycle(sm):
    # the two-step Jacobian is [[-1, -4], [0, -1]]; growth is linear, not exponential
    J = flows.jacobian(sm, (math.pi, math.pi)) @ flows.jacobian(sm, TWO_CYCLE)
    np.testing.assert_allclose(J, [[-1, -4], [0, -1]], atol=1e-12)
    assert flows.lyapunov_exponent(sm, TWO_CYCLE, 10**5, clamp=0.0) < 1e-3


def test_lyapunov_identity():
    assert flows.lyapunov_exponent(flows.Identity(), (1.0, 1.0)) == 0.0


# --- mean diameter and orbit statistics

def test_mean_diameter_of_circle():
    t = np.linspace(0, 2 * math.pi, 400, endpoint=False)
    pts = np.stack([1 + 0.5 * np.cos(t), 2 + 0.5 * np.sin(t)], axis=1)
    assert flows.mean_diameter(pts) == pytest.approx(1.0, rel=1e-3)


def test_mean_diameter_across_the_seam():
    t = np.linspace(0, 2 * math.pi, 400, endpoint=False)
    pts = np.mod(np.stack([0.2 * np.cos(t), 0.2 * np.sin(t)], axis=1), 2 * math.pi)
    assert flows.mean_diameter(pts) == pytest.approx(0.4, rel=1e-3)


def test_mean_diameter_components():
    t = np.linspace(0, 2 * math.pi, 100, endpoint=False)
    a = np.stack([1 + 0.1 * np.cos(t), 1 + 0.1 * np.sin(t)], axis=1)
    b = np.stack([4 + 0.3 * np.cos(t), 4 + 0.3 * np.sin(t)], axis=1)
    inter = np.empty((200, 2))
    inter[0::2], inter[1::2] = a, b
    assert flows.mean_diameter(inter, components=2) == pytest.approx(0.4, rel=1e-3)


def test_orbit_stats_chaotic_covers_torus(sm):
    st_ = flows.orbit_stats(sm, CHAOTIC, 0.1, n_lyap=20000)
    assert st_.diameter == pytest.approx(2 * math.pi)
    assert st_.lyapunov > 0.3


def test_orbit_stats_cyclic_list_has_nan_exponent():
    cl = flows.CyclicList(((0.1, 0.2), (0.3, 0.4)))
    st_ = flows.orbit_stats(cl, (0.1, 0.2), 1e-6)
    assert st_.p == 2 and math.isnan(st_.lyapunov)


def test_phase_portrait_csv(tmp_path, sm):
    path = tmp_path / "pp.csv"
    flows.write_phase_portrait_csv(path, [flows.orbit(sm, TWO_CYCLE, 2)])
    lines = path.read_text().splitlines()
    assert lines[0] == "seed_index,n,theta1,theta2"
    assert len(lines) == 4
