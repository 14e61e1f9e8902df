"""
Dynamical diagnostics comparing exact and effective propagation.

Exact dynamics are evolved as state vectors, one step operator at a time;
effective dynamics use the spectral form of the effective Hamiltonian.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import flows
from .effham import EffectiveHamiltonian
from .errors import ConfigError, DomainError
from .quantum import DrivenSystem, evolve_states, hermitian_eigen, orbit_points, step_unitaries

__all__ = [
    "FidelitySeries",
    "AverageInteraction",
    "EnsembleSeries",
    "stroboscopic_fidelity",
    "survival_probability",
    "effective_overlay",
    "average_interaction",
    "ensemble_evolve",
    "trace_norm",
    "write_series_csv",
]

WHOLE_PERIOD = "whole-period"
OFFSET = "offset"


def _unit(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex).ravel()
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > 1e-10:
        raise DomainError(f"state must be normalised (norm {nrm:.3e})")
    return psi


def _exact_states(sys, flow, theta0, psi, n_steps):
    """``propagate(n) psi`` for ``n = 0 .. n_steps``."""
    Us = step_unitaries(sys, orbit_points(flow, theta0, n_steps))
    return evolve_states(Us, psi)


@dataclass(frozen=True, eq=False)
class FidelitySeries:
    """Stroboscopic fidelities ``F_0 .. F_N`` and their mean."""

    values: np.ndarray
    p: int
    convention: str = WHOLE_PERIOD

    @property
    def average(self) -> float:
        return float(np.mean(self.values))

    def prefix(self, N: int) -> "FidelitySeries":
        """The series truncated to ``n = 0 .. N``."""
        return FidelitySeries(self.values[: N + 1], self.p, self.convention)


def stroboscopic_fidelity(sys: DrivenSystem, flow, theta0, heff: EffectiveHamiltonian, psi,
                          N: int, convention: str = WHOLE_PERIOD) -> FidelitySeries:
    """Overlap of exact and effective propagation at multiples of the almost-period.

    ``F_n = |<psi| exp(i m h) propagate(m) |psi>|^2`` with ``m = n p``
    (whole-period convention) or ``m = n p + 1`` (``convention="offset"``),
    for ``n = 0 .. N``.
    """
    psi = _unit(psi)
    if N < 0:
        raise DomainError("N must be non-negative")
    if convention not in (WHOLE_PERIOD, OFFSET):
        raise DomainError(f"unknown convention {convention!r}")
    p = heff.p
    shift = 1 if convention == OFFSET else 0
    m = np.arange(N + 1) * p + shift
    exact = _exact_states(sys, flow, theta0, psi, int(m[-1]))[m]
    Z, chi = heff.states, heff.quasienergies
    coeff = Z.conj().T @ psi
    # effective states exp(-i m h) psi for all m at once
    eff = (np.exp(-1j * np.outer(m, chi)) * coeff) @ Z.T
    F = np.abs(np.einsum("nk,nk->n", eff.conj(), exact)) ** 2
    if convention == WHOLE_PERIOD:
        F[0] = 1.0
    return FidelitySeries(np.minimum(F, 1.0), p, convention)


def survival_probability(sys: DrivenSystem, flow, theta0, state, N_steps: int) -> np.ndarray:
    """``P_n = |<state| propagate(n) |state>|^2`` for ``n = 0 .. N_steps``."""
    state = _unit(state)
    if N_steps < 0:
        raise DomainError("N_steps must be non-negative")
    psi = _exact_states(sys, flow, theta0, state, N_steps)
    return np.minimum(np.abs(psi @ state.conj()) ** 2, 1.0)


def effective_overlay(sys: DrivenSystem, flow, theta0, heff: EffectiveHamiltonian, psi,
                      N_steps: int):
    """Return ``(exact, effective)`` survival series of ``psi`` over ``N_steps`` steps.

    ``exact[n] = |<psi|propagate(n)|psi>|^2`` and
    ``effective[n] = |<psi|exp(-i n h)|psi>|^2``.
    """
    psi = _unit(psi)
    exact = survival_probability(sys, flow, theta0, psi, N_steps)
    w = np.abs(heff.states.conj().T @ psi) ** 2
    n = np.arange(N_steps + 1)
    eff = np.abs(np.exp(-1j * np.outer(n, heff.quasienergies)) @ w) ** 2
    return exact, np.minimum(eff, 1.0)


@dataclass(frozen=True, eq=False)
class AverageInteraction:
    """Orbit mean of the interaction and its spectrum.

    ``nu`` is sorted in decreasing order, ``vectors`` holds the matching
    eigenvectors as columns.  For rank-one kicks ``mixture = nu / lambda``.
    """

    vbar: np.ndarray
    nu: np.ndarray
    vectors: np.ndarray
    mixture: Optional[np.ndarray]


def average_interaction(sys: DrivenSystem, flow, theta0, p: int) -> AverageInteraction:
    if p < 1:
        raise DomainError("p must be at least 1")
    Vs = sys.interactions(orbit_points(flow, theta0, p))
    vbar = Vs.mean(axis=0)
    vbar = 0.5 * (vbar + vbar.conj().T)
    w, Q = hermitian_eigen(vbar)
    w, Q = w[::-1].copy(), Q[:, ::-1].copy()
    mix = w / sys.kick_strength if sys.is_rank_one and sys.kick_strength else None
    return AverageInteraction(vbar, w, Q, mix)


def trace_norm(A) -> float:
    """Trace norm of a Hermitian matrix (sum of absolute eigenvalues)."""
    A = np.asarray(A)
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (A + A.conj().T)))))


@dataclass(frozen=True, eq=False)
class EnsembleSeries:
    """Density matrices ``rho_n`` of an ensemble and derived series."""

    rho: np.ndarray

    @property
    def population(self) -> np.ndarray:
        return np.real(self.rho[:, 0, 0])

    @property
    def coherence(self) -> np.ndarray:
        return np.abs(self.rho[:, 0, 1])

    def deviation(self) -> np.ndarray:
        """``||rho_n - rho_0||_1`` for every ``n``."""
        return np.array([trace_norm(r - self.rho[0]) for r in self.rho])


def ensemble_evolve(sys: DrivenSystem, flow, members: Sequence, n_steps: int) -> EnsembleSeries:
    """Evolve ``(theta, psi)`` members in lockstep and average their projectors.

    ``rho_n = (1/N) sum_m |psi_m(n)><psi_m(n)|`` where each member follows its
    own orbit.  Members are stepped as one batch; the sum runs in member order.
    """
    members = list(members)
    if not members:
        raise ConfigError("ensemble has no members")
    if n_steps < 0:
        raise DomainError("n_steps must be non-negative")
    thetas = np.array([tuple(flows.PhasePoint(*t)) for t, _ in members], dtype=float)
    psis = np.array([_unit(v) for _, v in members])
    N, d = psis.shape
    rho = np.empty((n_steps + 1, d, d), dtype=complex)
    rho[0] = psis.T @ psis.conj() / N
    for n in range(1, n_steps + 1):
        Us = step_unitaries(sys, thetas)
        psis = np.einsum("mij,mj->mi", Us, psis)
        thetas = flows.step_array(flow, thetas)
        rho[n] = psis.T @ psis.conj() / N
    return EnsembleSeries(rho)


def write_series_csv(path, columns: dict) -> None:
    """Write ``n`` plus the given named series, one row per index."""
    names = list(columns)
    data = [np.asarray(columns[k]) for k in names]
    length = len(data[0]) if data else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n"] + names)
        for n in range(length):
            w.writerow([n] + [format(float(col[n]), ".15g") for col in data])
