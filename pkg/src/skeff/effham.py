"""
Effective Hamiltonians for quantum systems driven along a classical orbit.

Four constructions are provided:

* first recurrence: the principal p-th root of the monodromy over one
  almost-period;
* Koopman: the block-cyclic lift of the step operators onto the finite orbit,
  followed by spectral filtering of one quasienergy per gauge family;
* BCH low frequency and the three BCH high frequency cases, built with the
  operator calculus ``f(ad_X)`` where ``f(x) = x / (1 - exp(-x))``.

``recurrence_defect`` estimates the first-order correction relating the
first-recurrence Hamiltonian to the smooth quasienergy field.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import flows
from .errors import (CapacityError, ConvergenceError, DegeneracyError,
                     DomainError, PoleError, ResonanceError)
from .quantum import (DrivenSystem, _fix_phases, expm_hermitian, hermitian_eigen,
                      orbit_points, step_unitaries, _ordered_product)

__all__ = [
    "FIRST_RECURRENCE", "KOOPMAN", "BCH_LOW", "BCH_HIGH1", "BCH_HIGH2", "BCH_HIGH3",
    "EffectiveHamiltonian", "KoopmanMatrix", "RecurrenceDefect",
    "principal_phase", "monodromy", "unitary_eigen", "unitary_log",
    "first_recurrence_heff", "koopman_matrix", "sk_heff_koopman", "lift_states",
    "f_scalar", "f_inverse_scalar", "apply_f_ad",
    "bch_low_heff", "bch_high1_heff", "bch_high2_heff", "bch_high3_heff",
    "smooth_gauge", "align_branches", "recurrence_defect", "write_heff_csv",
]

FIRST_RECURRENCE = "FirstRecurrence"
KOOPMAN = "Koopman"
BCH_LOW = "BchLow"
BCH_HIGH1 = "BchHigh1"
BCH_HIGH2 = "BchHigh2"
BCH_HIGH3 = "BchHigh3"

DENSE_LIMIT = 4096
BRANCH_SNAP = 1e-10     # phases this close to -pi are reported as +pi
RESONANCE_TOL = 1e-6
POLE_TOL = 1e-8
COMMUTE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class EffectiveHamiltonian:
    """An effective Hamiltonian ``h = sum_i chi_i |Z_i><Z_i|`` at ``theta_ref``.

    ``states`` holds the vectors ``|Z_i, theta_ref>`` as columns.  Routes that
    build the quasienergy field along the orbit also fill ``orbit_states``
    with shape ``(L, d, d)``: ``orbit_states[n][:, i] = |Z_i, theta_n>``.
    """

    h: np.ndarray
    quasienergies: np.ndarray
    states: np.ndarray
    theta_ref: flows.PhasePoint
    p: int
    epsilon: float
    method: str
    error_estimate: float
    orbit: Optional[np.ndarray] = None
    orbit_states: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.h.shape[0]

    def unitary(self, n: float = 1.0) -> np.ndarray:
        """``exp(-i n h)``."""
        Z = self.states
        return (Z * np.exp(-1j * n * self.quasienergies)) @ Z.conj().T


def _build(h_or_none, chis, Z, theta0, p, eps, method, err, **kw) -> EffectiveHamiltonian:
    chis = np.asarray(chis, dtype=float)
    if h_or_none is None:
        h = (Z * chis) @ Z.conj().T
        h = 0.5 * (h + h.conj().T)
    else:
        h = h_or_none
    return EffectiveHamiltonian(h, chis, Z, flows.PhasePoint(*theta0), int(p), float(eps),
                                method, float(err), **kw)


def _from_hermitian(h, theta0, p, eps, method, err, **kw) -> EffectiveHamiltonian:
    h = 0.5 * (h + h.conj().T)
    w, Q = hermitian_eigen(h)
    return _build(h, w, Q, theta0, p, eps, method, err, **kw)


# ----------------------------------------------------------------- spectra

def principal_phase(z, snap: float = BRANCH_SNAP):
    """Phase ``phi`` in (-pi, pi] with ``z = |z| exp(-i phi)``.

    Values within ``snap`` of ``-pi`` are mapped to ``+pi`` so round-off never
    flips a half-turn across the branch cut.
    """
    phi = -np.angle(z)
    phi = np.where(phi <= -math.pi + snap, phi + 2.0 * math.pi, phi)
    return phi if np.ndim(phi) else float(phi)


def monodromy(sys: DrivenSystem, flow, theta0, p: int) -> np.ndarray:
    """Ordered product ``U(theta_{p-1}) ... U(theta_0)`` over ``p`` steps."""
    if p < 1:
        raise DomainError("p must be at least 1")
    return _ordered_product(step_unitaries(sys, orbit_points(flow, theta0, p)))


def unitary_eigen(U, unitarity_tol: float = 1e-8):
    """Eigen-decomposition ``U V = V diag(exp(-i phi))`` of a unitary matrix.

    Uses the complex Schur form, which for a normal matrix is diagonal and
    supplies an orthonormal eigenbasis even inside degenerate clusters.

    Returns
    -------
    eigenvalues : (n,) complex, unit modulus, sorted by phase ``phi`` ascending
    vectors : (n, n) unitary matrix of eigenvectors (columns)
    """
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {U.shape}")
    n = U.shape[0]
    if not np.all(np.isfinite(U)):
        raise DomainError("matrix has non-finite entries")
    defect = np.linalg.norm(U.conj().T @ U - np.eye(n), 2)
    if defect > unitarity_tol:
        raise DomainError(f"matrix is not unitary (defect {defect:.2e})")
    try:
        T, Z = scipy.linalg.schur(U, output="complex")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceError(f"Schur decomposition failed: {exc}") from exc
    vals = np.diag(T).copy()
    vals /= np.abs(vals)
    order = np.argsort(principal_phase(vals), kind="stable")
    return vals[order], _fix_phases(Z[:, order])


def unitary_log(U) -> np.ndarray:
    """Principal logarithm of a unitary matrix (anti-Hermitian, eigenphases in (-pi, pi])."""
    vals, V = unitary_eigen(U)
    L = (V * (-1j * principal_phase(vals))) @ V.conj().T
    return 0.5 * (L - L.conj().T)


def _eigh_routed(M):
    vals, V = unitary_eigen(M)
    return principal_phase(vals), V


# ------------------------------------------------------- first recurrence

def first_recurrence_heff(sys: DrivenSystem, flow, theta0, epsilon: float,
                          n_max: int = 10**6, rec: Optional[flows.RecurrenceRecord] = None
                          ) -> EffectiveHamiltonian:
    """Principal p-th root of the monodromy over the first epsilon-recurrence.

    Quasienergies lie in the principal window (-pi/p, pi/p]; ``exp(-i p h)``
    reproduces the monodromy.
    """
    if rec is None:
        rec = flows.first_recurrence(flow, theta0, epsilon, n_max)
    p = rec.p
    M = _ordered_product(step_unitaries(sys, rec.points))
    phis, V = _eigh_routed(M)
    chis = phis / p
    return _build(None, chis, V, rec.seed, p, rec.epsilon, FIRST_RECURRENCE,
                  rec.epsilon / p, orbit=np.asarray(rec.orbit.points),
                  diagnostics={"displacement": rec.displacement})


# ------------------------------------------------------------------ Koopman

@dataclass(frozen=True, eq=False)
class KoopmanMatrix:
    """Block-cyclic lift of the step operators onto a finite orbit.

    Block ``(n + 1, n)`` is ``U(theta_n)``; the wraparound block ``(0, p - 1)``
    is ``U(theta_{p-1})``.
    """

    p: int
    dim: int
    blocks: np.ndarray
    points: np.ndarray

    def dense(self) -> np.ndarray:
        p, d = self.p, self.dim
        K = np.zeros((p * d, p * d), dtype=complex)
        for n in range(p):
            r = (n + 1) % p
            K[r * d:(r + 1) * d, n * d:(n + 1) * d] = self.blocks[n]
        return K


def koopman_matrix(sys: DrivenSystem, flow, theta0, epsilon: float,
                   dense_limit: int = DENSE_LIMIT, n_max: int = 10**6,
                   rec: Optional[flows.RecurrenceRecord] = None) -> KoopmanMatrix:
    if rec is None:
        rec = flows.first_recurrence(flow, theta0, epsilon, n_max)
    size = rec.p * sys.dim
    if size > dense_limit:
        raise CapacityError(
            f"Koopman matrix of order {size} exceeds the dense limit {dense_limit}; "
            "use the monodromy (lifted) route instead")
    pts = np.asarray(rec.points)
    return KoopmanMatrix(rec.p, sys.dim, step_unitaries(sys, pts), pts)


def lift_states(blocks: np.ndarray, chis, Z0) -> np.ndarray:
    """Quasienergy field along an orbit: ``psi_{n+1} = exp(i chi) U_n psi_n``.

    Returns an array of shape ``(len(blocks) + 1, d, d)``.
    """
    chis = np.asarray(chis, dtype=float)
    ph = np.exp(1j * chis)
    out = np.empty((len(blocks) + 1,) + Z0.shape, dtype=complex)
    out[0] = Z0
    cur = Z0
    for n, U in enumerate(blocks):
        cur = (U @ cur) * ph
        out[n + 1] = cur
    return out


def _cluster_residues(res, tol):
    centers, members = [], []
    for a, x in enumerate(res):
        for c, cen in enumerate(centers):
            if abs(flows.wrap_delta(x - cen)) < tol:
                members[c].append(a)
                break
        else:
            centers.append(x)
            members.append([a])
    return centers, members


def _filter_spectrum(chis_all, vecs, p, d, family_tol):
    res = np.array([flows.wrap_delta(p * c) for c in chis_all])
    centers, members = _cluster_residues(res, family_tol)
    sizes = [len(m) for m in members]
    if len(centers) != d or any(s != p for s in sizes):
        cs = np.sort(np.mod(centers, 2 * math.pi))
        gaps = np.diff(np.append(cs, cs[0] + 2 * math.pi)) if len(cs) > 1 else [2 * math.pi]
        raise DegeneracyError(
            f"spectral filtering found {len(centers)} residue families of sizes {sizes} "
            f"(expected {d} of size {p}); smallest family separation {min(gaps):.2e}")
    order = np.argsort([flows.wrap_delta(c) for c in centers], kind="stable")
    chosen, chis, basis = [], [], np.zeros((d, 0), dtype=complex)
    for c in order:
        cand = members[c]
        slices = []
        for a in cand:
            s = vecs[:d, a]
            slices.append(s / np.linalg.norm(s))
        scores = [np.linalg.norm(s - basis @ (basis.conj().T @ s)) for s in slices]
        best = max(scores)
        target = flows.wrap_delta(centers[c]) / p
        pool = [k for k, sc in enumerate(scores) if sc >= best - 1e-6]
        k = min(pool, key=lambda k: abs(flows.wrap_delta(chis_all[cand[k]] - target)))
        a = cand[k]
        chosen.append(a)
        chis.append(target + flows.wrap_delta(chis_all[a] - target))
        basis = np.column_stack([basis, slices[k]])
    return chosen, np.array(chis)


def sk_heff_koopman(sys: DrivenSystem, flow, theta0, epsilon: float, dense: Optional[bool] = None,
                    dense_limit: int = DENSE_LIMIT, family_tol: float = RESONANCE_TOL,
                    n_max: int = 10**6, rec: Optional[flows.RecurrenceRecord] = None
                    ) -> EffectiveHamiltonian:
    """Quasienergies and quasienergy field from the Koopman lift on the orbit.

    With ``dense`` (default when ``p * dim <= dense_limit``) the block-cyclic
    matrix is diagonalised and one eigenvalue per gauge family is selected.
    Otherwise eigenpairs are lifted from the monodromy.  Both routes return
    ``orbit_states`` at every orbit point plus the wraparound point ``theta_p``.
    """
    if rec is None:
        rec = flows.first_recurrence(flow, theta0, epsilon, n_max)
    p, d = rec.p, sys.dim
    if dense is None:
        dense = p * d <= dense_limit
    if dense:
        K = koopman_matrix(sys, flow, theta0, epsilon, dense_limit, rec=rec)
        vals, vecs = unitary_eigen(K.dense())
        chis_all = principal_phase(vals)
        chosen, chis = _filter_spectrum(chis_all, vecs, p, d, family_tol)
        field_ = np.stack([vecs[:, a].reshape(p, d) for a in chosen], axis=2)
        field_ /= np.linalg.norm(field_, axis=1, keepdims=True)
        blocks = K.blocks
        # a common phase per state, fixed by the reference slice
        ref = field_[0]
        for i in range(d):
            k = int(np.argmax(np.abs(ref[:, i]) >= np.abs(ref[:, i]).max() - 1e-12))
            z = ref[k, i]
            field_[:, :, i] *= abs(z) / z
        wrap = (blocks[-1] @ field_[-1]) * np.exp(1j * chis)
        states = np.concatenate([field_, wrap[None]], axis=0)
    else:
        blocks = step_unitaries(sys, rec.points)
        phis, V = _eigh_routed(_ordered_product(blocks))
        chis = phis / p
        states = lift_states(blocks, chis, V)
    return _build(None, chis, states[0], rec.seed, p, rec.epsilon, KOOPMAN, rec.epsilon / p,
                  orbit=np.asarray(rec.orbit.points), orbit_states=states,
                  diagnostics={"route": "dense" if dense else "lifted",
                               "displacement": rec.displacement})


# ---------------------------------------------------- f(ad_X) calculus

def f_scalar(x, pole_tol: float = POLE_TOL) -> complex:
    """``f(x) = x / (1 - exp(-x))`` with ``f(0) = 1``.

    Raises ``PoleError`` within ``pole_tol`` of a pole ``2 pi i k``, ``k != 0``.
    """
    x = complex(x)
    if abs(x) < 1e-4:
        return 1.0 + x / 2.0 + x * x / 12.0 - x ** 4 / 720.0
    k = round(x.imag / (2.0 * math.pi))
    if k != 0 and abs(x - 2j * math.pi * k) < pole_tol:
        raise PoleError(f"f evaluated at a pole: x = {x} (k = {k})")
    return x / (-np.expm1(-x))


def f_inverse_scalar(x) -> complex:
    """``1 / f(x) = (1 - exp(-x)) / x``, an entire function."""
    x = complex(x)
    if abs(x) < 1e-4:
        return 1.0 - x / 2.0 + x * x / 6.0 - x ** 3 / 24.0
    return -np.expm1(-x) / x


def _spectral_form(X):
    """Eigenvalues ``x`` and (P, P^{-1}) with ``X = P diag(x) P^{-1}``."""
    X = np.asarray(X, dtype=complex)
    nrm = max(np.linalg.norm(X), 1e-300)
    if np.linalg.norm(X + X.conj().T) <= 1e-12 * nrm:
        w, Q = hermitian_eigen(0.5 * (1j * X + (1j * X).conj().T))
        return -1j * w, Q, Q.conj().T
    if np.linalg.norm(X - X.conj().T) <= 1e-12 * nrm:
        w, Q = hermitian_eigen(0.5 * (X + X.conj().T))
        return w.astype(complex), Q, Q.conj().T
    x, P = np.linalg.eig(X)
    return x, P, np.linalg.inv(P)


def apply_f_ad(X, Y, inverse: bool = False, pole_tol: float = POLE_TOL) -> np.ndarray:
    """``f(ad_X)[Y]`` (or ``f^{-1}(ad_X)[Y]``), with ``ad_X Y = [X, Y]``.

    In the eigenbasis of ``X`` the superoperator is diagonal:
    ``result_jk = f(x_j - x_k) Y_jk``.
    """
    x, P, Pinv = _spectral_form(X)
    Yt = Pinv @ np.asarray(Y, dtype=complex) @ P
    n = len(x)
    F = np.empty((n, n), dtype=complex)
    for j in range(n):
        for k in range(n):
            z = x[j] - x[k]
            if inverse:
                F[j, k] = f_inverse_scalar(z)
                continue
            try:
                F[j, k] = f_scalar(z, pole_tol)
            except PoleError:
                raise ResonanceError(
                    f"eigenvalue difference x_{j} - x_{k} = {z:.6g} sits on a pole of f",
                    pair=(j, k), value=z) from None
    return P @ (F * Yt) @ Pinv


# ---------------------------------------------------------------- BCH

def _gaps(w, tol=1e-12):
    w = np.asarray(w)
    return [abs(a - b) for i, a in enumerate(w) for b in w[i + 1:] if abs(a - b) > tol]


def _check_resonance(scaled_gaps, what, tol):
    for y in scaled_gaps:
        k = round(y / (2 * math.pi))
        if k >= 1 and abs(y - 2 * math.pi * k) < tol:
            raise ResonanceError(f"resonance: {what} = {y:.12g} is within {tol:g} of 2pi*{k}",
                                 value=y)


def _max_f_gap(scaled_gaps):
    vals = [abs(f_scalar(1j * y, pole_tol=0.0)) for y in scaled_gaps]
    return max(vals, default=1.0)


def _orbit_V(sys, flow, theta0, p):
    if p < 1:
        raise DomainError("p must be at least 1")
    pts = orbit_points(flow, theta0, p)
    return pts, sys.interactions(pts)


def _max_commutator(Vs):
    """Largest ``||[V_m, V_n]||``: all pairs on short orbits, 64 probe points otherwise."""
    probes = Vs if len(Vs) <= 200 else Vs[np.linspace(0, len(Vs) - 1, 64).astype(int)]
    worst = 0.0
    for P in probes:
        C = np.einsum("ij,njk->nik", P, Vs) - np.einsum("nij,jk->nik", Vs, P)
        worst = max(worst, float(np.max(np.linalg.norm(C, axis=(1, 2), ord=2))))
    return worst


def bch_low_heff(sys: DrivenSystem, flow, theta0, p: int,
                 resonance_tol: float = RESONANCE_TOL) -> EffectiveHamiltonian:
    """Low-frequency effective Hamiltonian

    ``h = r H + (1/p) sum_n f(ad_{-i p r H})[exp(i n r H) V_n exp(-i n r H)]``.
    """
    r, H = sys.ratio, sys.h_hat
    pts, Vs = _orbit_V(sys, flow, theta0, p)
    w, Q = hermitian_eigen(H)
    scaled = [p * r * g for g in _gaps(w)]
    _check_resonance(scaled, "p r |lambda_i - lambda_j|", resonance_tol)
    # rotate every V_n into the eigenbasis of H, where exp(i n r H) is a phase
    Vq = np.einsum("ji,njk,kl->nil", Q.conj(), Vs, Q)
    n = np.arange(p)[:, None]
    ph = np.exp(1j * n * r * w[None, :])
    Vt = np.einsum("ni,nij,nj->ij", ph, Vq, ph.conj()) / p
    X = np.diag(-1j * p * r * w)
    hq = r * np.diag(w) + apply_f_ad(X, Vt)
    h = Q @ hq @ Q.conj().T
    vnorm = float(np.max(np.linalg.norm(Vs, axis=(1, 2), ord=2)))
    if vnorm > 0.1 * r:
        warnings.warn(f"BCH low-frequency expansion used with ||V|| = {vnorm:.3g} "
                      f"not small against r = {r:.3g}", RuntimeWarning, stacklevel=2)
    err = _max_f_gap(scaled) * vnorm ** 2
    return _from_hermitian(h, pts[0], p, math.nan, BCH_LOW, err)


def bch_high1_heff(sys: DrivenSystem, flow, theta0, p: int) -> EffectiveHamiltonian:
    """First-order high-frequency Hamiltonian ``h = r H + mean_n V(theta_n)``."""
    pts, Vs = _orbit_V(sys, flow, theta0, p)
    h = sys.ratio * sys.h_hat + Vs.mean(axis=0)
    return _from_hermitian(h, pts[0], p, math.nan, BCH_HIGH1, sys.ratio ** 2)


def _dressed_sum(Vpart, Ops):
    """``S = sum v_n`` and ``sum_n exp(i S_n) O_n exp(-i S_n)`` with ``S_n = sum_{q<=n} v_q``."""
    S = np.zeros_like(Vpart[0])
    acc = np.zeros_like(Vpart[0])
    for v, O in zip(Vpart, Ops):
        S = S + v
        E = expm_hermitian(S, -1.0)
        acc += E @ O @ E.conj().T
    return S, acc


def _commutation_check(Vs, diagnostics, label):
    worst = _max_commutator(Vs)
    diagnostics[f"max_commutator_{label}"] = worst
    if worst > COMMUTE_TOL:
        warnings.warn(f"interaction operators along the orbit do not commute "
                      f"(max ||[{label}_m, {label}_n]|| = {worst:.3g})", RuntimeWarning, stacklevel=3)


def _high_frequency_core(sys, pts, vparts, Ks, p, method, resonance_tol, diagnostics):
    S, acc = _dressed_sum(vparts, Ks)
    wS, _ = hermitian_eigen(S)
    _check_resonance(_gaps(wS), "p |nu_a - nu_b|", resonance_tol)
    h = S / p + apply_f_ad(-1j * S, acc) / p
    err = _max_f_gap(_gaps(wS)) * sys.ratio ** 2
    return _from_hermitian(h, pts[0], p, math.nan, method, err, diagnostics=diagnostics)


def bch_high2_heff(sys: DrivenSystem, flow, theta0, p: int,
                   resonance_tol: float = RESONANCE_TOL) -> EffectiveHamiltonian:
    """High-frequency Hamiltonian for mutually commuting interactions.

    ``h = S/p + (r/p) f(ad_{-i S})[sum_n exp(i S_n) H exp(-i S_n)]``,
    ``S = sum_n V_n`` and ``S_n`` the partial sums up to ``n`` included.
    """
    pts, Vs = _orbit_V(sys, flow, theta0, p)
    diag = {}
    _commutation_check(Vs, diag, "V")
    Ks = [sys.ratio * sys.h_hat] * p
    return _high_frequency_core(sys, pts, Vs, Ks, p, BCH_HIGH2, resonance_tol, diag)


def bch_high3_heff(sys: DrivenSystem, flow, theta0, p: int, split: Callable,
                   resonance_tol: float = RESONANCE_TOL) -> EffectiveHamiltonian:
    """High-frequency Hamiltonian for ``V = v + W`` with commuting ``v`` and small ``W``.

    ``split`` maps a phase point to ``v(theta)``; ``W = V - v``.  Each step
    contributes ``K_n = r H + f^{-1}(ad_{i v_n})[W_n]``, so that
    ``exp(-i r H) exp(-i v_n - i W_n) = exp(-i K_n) exp(-i v_n)`` to first
    order in ``W`` and ``r``; the ``K_n`` are then averaged as in the
    commuting case.
    """
    pts, Vs = _orbit_V(sys, flow, theta0, p)
    vs = np.array([np.asarray(split(t), dtype=complex) for t in pts]).reshape(Vs.shape)
    diag = {}
    _commutation_check(vs, diag, "v")
    rH = sys.ratio * sys.h_hat
    Ks = [rH + apply_f_ad(1j * v, V - v, inverse=True) for v, V in zip(vs, Vs)]
    return _high_frequency_core(sys, pts, vs, Ks, p, BCH_HIGH3, resonance_tol, diag)


# ------------------------------------------------------ recurrence defect

@dataclass(frozen=True, eq=False)
class RecurrenceDefect:
    """First-order mismatch between the quasienergy field at ``theta_0`` and ``theta_p``.

    ``a_matrix[j, i]`` approximates ``<Z_j, theta_0| d|Z_i>`` along the return
    displacement; ``scaled_matrix`` is its ``f(ad_{i p H})`` rescaling.
    """

    a_matrix: np.ndarray
    scaled_matrix: np.ndarray
    corrected_quasienergies: np.ndarray
    p: int
    displacement: float
    states: np.ndarray
    quasienergies: np.ndarray

    def corrected_hamiltonian(self) -> np.ndarray:
        """``H + i A_scaled / p`` expressed in the computational basis."""
        Z = self.states
        Hz = np.diag(self.quasienergies) + 1j * self.scaled_matrix / self.p
        return Z @ Hz @ Z.conj().T


def smooth_gauge(sk: EffectiveHamiltonian, radius: float = 0.1) -> EffectiveHamiltonian:
    """Re-gauge a quasienergy field so it varies smoothly over phase space.

    The field on a finite orbit is fixed only up to ``chi -> chi + 2 pi j / p``
    (with states multiplied by ``exp(2 pi i j n / p)``).  For every state the
    ``j`` maximising the phase coherence ``Re sum_n <Z(theta_0)|Z(theta_n)> exp(2 pi i j n / p)``
    over the near returns ``|theta_n - theta_0| < radius`` is selected.
    """
    if sk.orbit_states is None or sk.orbit is None:
        raise DomainError("smooth_gauge needs the quasienergy field along the orbit")
    P = sk.p
    pts = np.asarray(sk.orbit)[:P]
    d = np.hypot(*flows.wrap_delta(pts - pts[0]).T)
    near = np.nonzero(d < radius)[0]
    near = near[near > 0]
    if len(near) == 0:
        return sk
    Z0 = sk.orbit_states[0]
    states = sk.orbit_states.copy()
    chis = sk.quasienergies.copy()
    n_all = np.arange(len(states))
    for i in range(sk.dim):
        c = np.einsum("k,nk->n", Z0[:, i].conj(), sk.orbit_states[near, :, i])
        weights = np.exp(-(d[near] / radius) ** 2)
        a = np.zeros(P, dtype=complex)
        np.add.at(a, near % P, c * weights)
        score = np.real(np.fft.ifft(a)) * P
        j = int(np.argmax(score))
        if j == 0:
            continue
        chis[i] = chis[i] + 2 * math.pi * j / P
        states[:, :, i] *= np.exp(2j * math.pi * j * n_all / P)[:, None]
    diag = dict(sk.diagnostics, smooth_gauge_radius=radius)
    return _build(None, chis, states[0], sk.theta_ref, P, sk.epsilon, sk.method,
                  sk.error_estimate, orbit=sk.orbit, orbit_states=states, diagnostics=diag)


def align_branches(heff: EffectiveHamiltonian, reference: np.ndarray) -> EffectiveHamiltonian:
    """Shift each quasienergy of ``heff`` by a multiple of ``2 pi / p`` towards ``reference``.

    ``reference`` is a Hermitian matrix; the target for eigenvector ``u`` is
    ``<u|reference|u>``.  Leaves ``exp(-i p h)`` unchanged.
    """
    Z = heff.states
    target = np.real(np.einsum("ki,kl,li->i", Z.conj(), reference, Z))
    step = 2 * math.pi / heff.p
    chis = heff.quasienergies + step * np.round((target - heff.quasienergies) / step)
    return _build(
        None, chis, Z, heff.theta_ref, heff.p, heff.epsilon, heff.method,
        heff.error_estimate, orbit=heff.orbit, orbit_states=heff.orbit_states,
        diagnostics=heff.diagnostics)


def recurrence_defect(sk: EffectiveHamiltonian, rec: flows.RecurrenceRecord,
                      estimator: str = "log", pole_tol: float = RESONANCE_TOL) -> RecurrenceDefect:
    """Defect of the quasienergy field over the return ``theta_0 -> theta_p``.

    ``sk`` must carry ``orbit_states`` on the same orbit as ``rec`` and at
    least ``rec.p + 1`` of them.  With ``G_ji = <Z_j, theta_0|Z_i, theta_p>``
    the contraction is estimated by ``log G`` (``estimator="log"``, exactly
    anti-Hermitian) or by ``G - 1`` (``estimator="difference"``); both agree to
    first order in the displacement.
    """
    if sk.orbit_states is None or sk.orbit is None:
        raise DomainError("recurrence_defect needs the quasienergy field along the orbit")
    if len(sk.orbit_states) <= rec.p:
        raise DomainError(f"quasienergy field covers {len(sk.orbit_states) - 1} steps, need {rec.p}")
    if flows.torus_distance(rec.seed, sk.theta_ref) > 1e-12:
        raise DomainError("recurrence record and quasienergy field start at different points")
    p = rec.p
    Z0, Zp = sk.orbit_states[0], sk.orbit_states[p]
    G = Z0.conj().T @ Zp
    if estimator == "log":
        A = unitary_log(G)
    elif estimator == "difference":
        A = G - np.eye(sk.dim)
    else:
        raise DomainError(f"unknown estimator {estimator!r}")
    chis = sk.quasienergies
    for j in range(sk.dim):
        for k in range(sk.dim):
            y = p * (chis[j] - chis[k])
            m = round(y / (2 * math.pi))
            if m != 0 and abs(y - 2 * math.pi * m) < pole_tol:
                raise DegeneracyError(
                    f"quasienergies {j} and {k} are degenerate modulo 2pi/p "
                    f"(p dchi = {y:.12g}); the rescaling has no limit")
    try:
        scaled = apply_f_ad(1j * p * np.diag(chis), A, pole_tol=pole_tol)
    except ResonanceError as exc:
        raise DegeneracyError(str(exc)) from exc
    corrected = chis + np.real(1j * np.diag(A)) / p
    return RecurrenceDefect(A, scaled, corrected, p, rec.displacement, Z0, chis.copy())


# -------------------------------------------------------------------- export

def write_heff_csv(path, heffs) -> None:
    """CSV rows ``method,i,chi,re_0..re_{d-1},im_0..im_{d-1}`` for each quasienergy state."""
    heffs = list(heffs)
    d = heffs[0].dim if heffs else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "i", "chi"] + [f"re_{k}" for k in range(d)] + [f"im_{k}" for k in range(d)])
        for he in heffs:
            for i, chi in enumerate(he.quasienergies):
                z = he.states[:, i]
                w.writerow([he.method, i, format(chi, ".15g")]
                           + [format(x, ".15g") for x in z.real]
                           + [format(x, ".15g") for x in z.imag])
