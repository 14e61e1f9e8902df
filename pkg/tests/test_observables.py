import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import BIG_ISLAND, DOUBLE_ISLAND, DEFAULT_RATIOS, TWO_CYCLE
from oracles import spin_monodromy, standard_orbit
from skeff import effham, flows, observables, quantum
from skeff.errors import ConfigError, DomainError

PLUS = np.array([1.0, 1.0]) / math.sqrt(2)
E6 = DOUBLE_ISLAND


# --- stroboscopic fidelity

@pytest.mark.parametrize("r", DEFAULT_RATIOS)
def test_fidelity_exact_on_cycle(sm, r):
    sys_ = quantum.spin_kick_model(r)
    he = effham.first_recurrence_heff(sys_, sm, TWO_CYCLE, 1e-3)
    F = observables.stroboscopic_fidelity(sys_, sm, TWO_CYCLE, he, PLUS, 240)
    np.testing.assert_allclose(F.values, 1.0, atol=1e-10)
    assert F.average == pytest.approx(1.0, abs=1e-10)


def test_fidelity_matches_oracle(sm):
    r = math.sqrt(2)
    sys_ = quantum.spin_kick_model(r)
    he = effham.first_recurrence_heff(sys_, sm, E6, 1e-2)
    F = observables.stroboscopic_fidelity(sys_, sm, E6, he, PLUS, 3)
    pts = standard_orbit(E6, 3 * he.p)
    for n in range(4):
        U = spin_monodromy(pts[: n * he.p], r)
        eff = he.unitary(n * he.p)
        assert F.values[n] == pytest.approx(abs(PLUS.conj() @ eff.conj().T @ U @ PLUS) ** 2, abs=1e-10)


def test_fidelity_offset_convention(sm):
    sys_ = quantum.spin_kick_model(0.25)
    he = effham.first_recurrence_heff(sys_, sm, E6, 1e-2)
    F = observables.stroboscopic_fidelity(sys_, sm, E6, he, PLUS, 4, convention="offset")
    pts = standard_orbit(E6, 2 * he.p + 1)
    U = spin_monodromy(pts[: 2 * he.p + 1], 0.25)
    eff = he.unitary(2 * he.p + 1)
    assert F.values[2] == pytest.approx(abs(PLUS @ eff.conj().T @ U @ PLUS) ** 2, abs=1e-10)
    assert F.convention == observables.OFFSET
    with pytest.raises(DomainError):
        observables.stroboscopic_fidelity(sys_, sm, E6, he, PLUS, 4, convention="half")


def test_fidelity_first_value_and_prefix(sm):
    sys_ = quantum.spin_kick_model(3.4)
    he = effham.first_recurrence_heff(sys_, sm, BIG_ISLAND, 1e-2)
    F = observables.stroboscopic_fidelity(sys_, sm, BIG_ISLAND, he, PLUS, 6)
    assert F.values[0] == 1.0
    assert np.all(F.values <= 1.0 + 1e-10) and np.all(F.values >= 0)
    np.testing.assert_array_equal(F.prefix(3).values, F.values[:4])


def test_fidelity_island_high_frequency(sm):
    sys_ = quantum.spin_kick_model(math.sqrt(2) / 100)
    he = effham.first_recurrence_heff(sys_, sm, BIG_ISLAND, 1e-2)
    assert observables.stroboscopic_fidelity(sys_, sm, BIG_ISLAND, he, PLUS, 12).average >= 0.97


def test_fidelity_rejects_unnormalised(sm, spin):
    he = effham.first_recurrence_heff(spin, sm, TWO_CYCLE, 1e-3)
    with pytest.raises(DomainError):
        observables.stroboscopic_fidelity(spin, sm, TWO_CYCLE, he, [1.0, 1.0], 3)


# --- survival

def test_survival_fixed_point_eigenstate(spin, sm):
    U = quantum.step_unitary(spin, (0.0, 0.0))
    _, V = np.linalg.eig(U)
    for k in range(2):
        P = observables.survival_probability(spin, sm, (0.0, 0.0), V[:, k] / np.linalg.norm(V[:, k]), 500)
        np.testing.assert_allclose(P, 1.0, atol=1e-10)


def test_survival_matches_oracle(sm):
    sys_ = quantum.spin_kick_model(1.3)
    P = observables.survival_probability(sys_, sm, BIG_ISLAND, PLUS, 20)
    pts = standard_orbit(BIG_ISLAND, 20)
    for n in [0, 1, 5, 20]:
        assert P[n] == pytest.approx(abs(PLUS @ spin_monodromy(pts[:n], 1.3) @ PLUS) ** 2, abs=1e-12)


def test_quasienergy_state_chain(sm):
    sys_ = quantum.spin_kick_model(math.sqrt(2))
    sk = effham.sk_heff_koopman(sys_, sm, E6, 1e-2)
    for i in range(2):
        for n in [1, 7, sk.p]:
            U = quantum.propagate(sys_, sm, E6, n)
            amp = sk.orbit_states[n][:, i].conj() @ U @ sk.orbit_states[0][:, i]
            assert abs(amp) ** 2 == pytest.approx(1.0, abs=1e-8)


def test_quasienergy_state_returns_after_almost_period(sm):
    sys_ = quantum.spin_kick_model(math.sqrt(2))
    p = flows.first_recurrence(sm, BIG_ISLAND, 1e-2).p
    ref = effham.sk_heff_koopman(sys_, sm, BIG_ISLAND, 3e-4, dense=False)
    for i in range(2):
        P = observables.survival_probability(sys_, sm, BIG_ISLAND, ref.states[:, i], p)
        assert abs(P[p] - 1) <= 10 * 1e-2


# --- overlay

def test_overlay_free_eigenstate(sm):
    sys_ = quantum.DrivenSystem(np.diag([0.0, 2 * math.pi]), 0.3, lambda t: np.zeros((2, 2)))
    he = effham.first_recurrence_heff(sys_, sm, BIG_ISLAND, 1e-2)
    exact, eff = observables.effective_overlay(sys_, sm, BIG_ISLAND, he, [0, 1], 50)
    np.testing.assert_allclose(exact, 1.0, atol=1e-12)
    np.testing.assert_allclose(eff, 1.0, atol=1e-12)


def test_overlay_two_cycle_closed_form(spin, sm):
    he = effham.first_recurrence_heff(spin, sm, TWO_CYCLE, 1e-3)
    exact, eff = observables.effective_overlay(spin, sm, TWO_CYCLE, he, PLUS, 200)
    # both diagonal phases advance at fixed rates: |<+|U_n|+>|^2 = (1 + cos(n (lambda - pi/2))) / 2
    n = np.arange(201)
    np.testing.assert_allclose(exact, (1 + np.cos(n * (0.1 - math.pi / 2))) / 2, atol=1e-12)
    np.testing.assert_allclose(eff[::2], exact[::2], atol=1e-10)


def test_overlay_double_island_period(sm):
    sys_ = quantum.spin_kick_model(3.5)
    he = effham.first_recurrence_heff(sys_, sm, E6, 1e-2)
    _, eff = observables.effective_overlay(sys_, sm, E6, he, PLUS, 400)
    # the slow envelope oscillates a little slower than 2 pi / lambda ~ 63 steps
    period = 2 * math.pi / abs(he.quasienergies[1] - he.quasienergies[0])
    assert 2 * math.pi / 0.1 < period < 1.2 * 2 * math.pi / 0.1
    first_min = next(n for n in range(1, 400) if eff[n] < eff[n - 1] and eff[n] <= eff[n + 1])
    assert abs(first_min - period / 2) <= 1


# --- average interaction

def test_average_interaction_two_cycle(spin, sm):
    av = observables.average_interaction(spin, sm, TWO_CYCLE, 2)
    np.testing.assert_allclose(av.vbar, np.diag([0.1, 0.0]), atol=1e-15)
    np.testing.assert_allclose(av.mixture, [1.0, 0.0], atol=1e-12)


def test_average_interaction_double_island(sm):
    sys_ = quantum.spin_kick_model(3.5)
    av = observables.average_interaction(sys_, sm, E6, 26)
    assert av.mixture[0] > 0.8
    pts = standard_orbit(E6, 26)[:26]
    np.testing.assert_allclose(av.vbar, np.mean([sys_.V(t) for t in pts], axis=0), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 6.2), st.floats(0.05, 6.2), st.integers(1, 300), st.floats(0.01, 150))
def test_average_interaction_trace(a, b, p, r):
    sys_ = quantum.spin_kick_model(r, 0.1)
    av = observables.average_interaction(sys_, flows.StandardMap(), (a, b), p)
    assert np.trace(av.vbar).real / 0.1 == pytest.approx(1.0, abs=1e-10)
    assert av.mixture.sum() == pytest.approx(1.0, abs=1e-10)
    assert np.all(av.nu[:-1] >= av.nu[1:])


def test_average_interaction_generic_has_no_mixture(sm, rng):
    sys_ = quantum.DrivenSystem(np.diag([0.0, 1.0]), 0.5, lambda t: math.cos(t[0]) * np.eye(2))
    assert observables.average_interaction(sys_, sm, BIG_ISLAND, 4).mixture is None


# --- ensembles

def test_trace_norm():
    assert observables.trace_norm(np.diag([0.3, -0.2])) == pytest.approx(0.5)


def test_ensemble_identical_fixed_point_members(spin, sm):
    _, V = np.linalg.eig(quantum.step_unitary(spin, (0.0, 0.0)))
    v = V[:, 0] / np.linalg.norm(V[:, 0])
    ens = observables.ensemble_evolve(spin, sm, [((0.0, 0.0), v)] * 5, 40)
    assert np.max(ens.deviation()) < 1e-12


def test_ensemble_density_matrix_invariants(sm, rng):
    sys_ = quantum.spin_kick_model(1.3)
    members = []
    for _ in range(9):
        v = rng.normal(size=2) + 1j * rng.normal(size=2)
        members.append((tuple(rng.uniform(0, 2 * math.pi, 2)), v / np.linalg.norm(v)))
    ens = observables.ensemble_evolve(sys_, sm, members, 60)
    for rho in ens.rho:
        np.testing.assert_allclose(rho, rho.conj().T, atol=1e-14)
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.eigvalsh(rho).min() >= -1e-10
    # member m follows its own propagator
    n = 17
    acc = np.zeros((2, 2), dtype=complex)
    for t, v in members:
        psi = quantum.propagate(sys_, sm, t, n) @ v
        acc += np.outer(psi, psi.conj())
    np.testing.assert_allclose(ens.rho[n], acc / 9, atol=1e-12)
    np.testing.assert_allclose(ens.coherence, np.abs(ens.rho[:, 0, 1]))


def test_ensemble_empty_is_config_error(spin, sm):
    with pytest.raises(ConfigError):
        observables.ensemble_evolve(spin, sm, [], 5)


@pytest.mark.parametrize("index", [0, 1])
@pytest.mark.parametrize("seed,r", [(E6, 3.5), (E6, math.sqrt(2)), (BIG_ISLAND, math.sqrt(2) / 100)])
def test_ensemble_quasienergy_states_are_steady(sm, seed, r, index):
    sys_ = quantum.spin_kick_model(r)
    sk = effham.sk_heff_koopman(sys_, sm, seed, 1e-2)
    members = [(sk.orbit[n], sk.orbit_states[n][:, index]) for n in range(sk.p)]
    ens = observables.ensemble_evolve(sys_, sm, members, 2 * sk.p)
    assert np.max(ens.deviation()) <= 10 * 1e-2


def test_series_csv(tmp_path):
    path = tmp_path / "s.csv"
    observables.write_series_csv(path, {"population": [1.0, 1 / 3], "coherence": [0.0, 0.1]})
    lines = path.read_text().splitlines()
    assert lines[0] == "n,population,coherence"
    assert lines[2] == "1,0.333333333333333,0.1"
