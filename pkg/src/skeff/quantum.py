"""
Finite-dimensional operator algebra for kicked quantum systems.

The one-step evolution operator of a driven system is

    U(theta) = exp(-i r H) exp(-i V(theta))

with ``H`` the reduced free Hamiltonian, ``r = omega1 / omega0`` the frequency
ratio and ``V`` the interaction evaluated at the current phase point of the
classical flow.  ``propagate`` multiplies these along an orbit.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import flows
from .errors import ConvergenceError, DomainError

log = logging.getLogger(__name__)

__all__ = [
    "hermitian_eigen",
    "expm_hermitian",
    "kick_unitary",
    "delayed_kick_interaction",
    "DrivenSystem",
    "spin_kick_model",
    "kick_direction",
    "step_unitary",
    "step_unitaries",
    "orbit_points",
    "propagate",
    "evolve_states",
    "is_hermitian",
    "unitarity_defect",
]

HERMITIAN_TOL = 1e-10


def is_hermitian(H: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    H = np.asarray(H)
    return H.ndim == 2 and H.shape[0] == H.shape[1] and \
        np.linalg.norm(H - H.conj().T) <= tol * max(1.0, np.linalg.norm(H))


def unitarity_defect(U: np.ndarray) -> float:
    """Spectral norm of ``U^dagger U - 1``."""
    U = np.asarray(U)
    return float(np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0]), 2))


def _check_hermitian(H, tol=HERMITIAN_TOL) -> np.ndarray:
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise DomainError("matrix has non-finite entries")
    if not is_hermitian(H, tol):
        raise DomainError("matrix is not Hermitian")
    return H


def _fix_phases(V: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Make the first largest-magnitude component of every column real positive."""
    V = V.copy()
    mags = np.abs(V)
    for k in range(V.shape[1]):
        col = mags[:, k]
        i = int(np.argmax(col >= col.max() - tol))
        z = V[i, k]
        if z != 0:
            V[:, k] *= abs(z) / z
    return V


def hermitian_eigen(H, tol: float = 1e-14, max_sweeps: int = 100):
    """Eigen-decomposition ``H = Q diag(w) Q^dagger`` by cyclic Jacobi rotations.

    Eigenvalues come back ascending; the first largest-magnitude entry of
    every eigenvector is real and positive.

    Parameters
    ----------
    H : (n, n) array_like
        Hermitian matrix (to 1e-10 relative).
    tol : float
        Sweeps stop once every off-diagonal magnitude is below ``tol * ||H||_F``.

    Returns
    -------
    w : (n,) ndarray of float
    Q : (n, n) ndarray of complex
    """
    H = _check_hermitian(H)
    n = H.shape[0]
    A = 0.5 * (H + H.conj().T)
    Q = np.eye(n, dtype=complex)
    scale = np.linalg.norm(A)
    if n == 1 or scale == 0.0:
        return np.real(np.diag(A)).copy(), Q
    thresh = tol * scale
    iu = np.triu_indices(n, 1)
    for _ in range(max_sweeps):
        if np.max(np.abs(A[iu])) < thresh:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                b = A[p, q]
                m = abs(b)
                if m < 1e-3 * thresh:
                    continue
                theta = (A[q, q].real - A[p, p].real) / (2.0 * m)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ph = np.conj(b) / m
                G = np.array([[c, s], [-s * ph, c * ph]])
                idx = [p, q]
                A[:, idx] = A[:, idx] @ G
                A[idx, :] = G.conj().T @ A[idx, :]
                A[p, q] = A[q, p] = 0.0
                Q[:, idx] = Q[:, idx] @ G
    else:
        raise ConvergenceError(f"Jacobi sweeps did not converge in {max_sweeps} sweeps")
    w = np.real(np.diag(A))
    order = np.argsort(w, kind="stable")
    return w[order], _fix_phases(Q[:, order])


def expm_hermitian(H, scale: float = 1.0) -> np.ndarray:
    """``exp(-i * scale * H)`` for Hermitian ``H``."""
    w, Q = hermitian_eigen(H)
    return (Q * np.exp(-1j * scale * w)) @ Q.conj().T


def kick_unitary(lam: float, w) -> np.ndarray:
    """``exp(-i lam |w><w|) = 1 + (exp(-i lam) - 1) |w><w|`` for a unit vector ``w``."""
    w = np.asarray(w, dtype=complex).ravel()
    nrm = np.linalg.norm(w)
    if abs(nrm - 1.0) > 1e-10:
        raise DomainError(f"kick direction must be normalised (norm {nrm:.3e})")
    return np.eye(len(w), dtype=complex) + (np.exp(-1j * lam) - 1.0) * np.outer(w, w.conj())


def delayed_kick_interaction(W, delta: float, H0_over_w0) -> np.ndarray:
    """Kick operator seen at the start of the period when the kick is delayed by ``delta``.

    Returns ``exp(i delta H0) W exp(-i delta H0)`` with ``H0`` in units of hbar*omega0.
    """
    W = _check_hermitian(W)
    if not 0.0 <= delta < flows.TWO_PI:
        raise DomainError("delay must lie in [0, 2pi)")
    E = expm_hermitian(H0_over_w0, -delta)
    return E @ W @ E.conj().T


@dataclass(frozen=True)
class DrivenSystem:
    """A quantum system driven through ``V(theta)`` by a classical flow.

    Parameters
    ----------
    h_hat : (d, d) array
        Reduced free Hamiltonian.
    ratio : float
        Frequency ratio ``r = omega1 / omega0``.
    interaction : callable
        ``theta -> V(theta)``, a Hermitian ``(d, d)`` array.
    kick_strength, direction : optional
        If given, ``V(theta) = kick_strength * |w><w|`` with
        ``w = direction(thetas)`` evaluated on an ``(n, 2)`` array of points;
        exponentials then use the rank-one closed form.
    """

    h_hat: np.ndarray
    ratio: float
    interaction: Callable = field(repr=False)
    kick_strength: Optional[float] = None
    direction: Optional[Callable] = field(default=None, repr=False)
    free_unitary: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        H = _check_hermitian(self.h_hat, 1e-12)
        H.setflags(write=False)
        object.__setattr__(self, "h_hat", H)
        F = expm_hermitian(H, self.ratio)
        F.setflags(write=False)
        object.__setattr__(self, "free_unitary", F)

    @property
    def dim(self) -> int:
        return self.h_hat.shape[0]

    @property
    def is_rank_one(self) -> bool:
        return self.kick_strength is not None and self.direction is not None

    def V(self, theta) -> np.ndarray:
        return np.asarray(self.interaction(theta), dtype=complex)

    def interactions(self, thetas) -> np.ndarray:
        """``V`` evaluated at each row of an ``(n, 2)`` array."""
        thetas = np.asarray(thetas, dtype=float).reshape(-1, 2)
        if self.is_rank_one:
            w = self.direction(thetas)
            return self.kick_strength * np.einsum("ni,nj->nij", w, w.conj())
        return np.array([self.V(t) for t in thetas]).reshape(-1, self.dim, self.dim)

    def with_ratio(self, ratio: float) -> "DrivenSystem":
        return DrivenSystem(self.h_hat, ratio, self.interaction, self.kick_strength, self.direction)


def kick_direction(thetas, ratio: float) -> np.ndarray:
    """``w = cos(t1)|0> + exp(i r t2) sin(t1)|1>`` for each row of ``thetas``."""
    thetas = np.asarray(thetas, dtype=float).reshape(-1, 2)
    w = np.empty((len(thetas), 2), dtype=complex)
    w[:, 0] = np.cos(thetas[:, 0])
    w[:, 1] = np.exp(1j * ratio * thetas[:, 1]) * np.sin(thetas[:, 0])
    return w


class _SpinInteraction:
    # a module-level class (not a closure) so systems pickle into worker processes
    def __init__(self, lam, ratio):
        self.lam, self.ratio = lam, ratio

    def __call__(self, theta):
        w = kick_direction(np.asarray(tuple(theta), dtype=float), self.ratio)[0]
        return self.lam * np.outer(w, w.conj())


class _SpinDirection:
    def __init__(self, ratio):
        self.ratio = ratio

    def __call__(self, thetas):
        return kick_direction(thetas, self.ratio)


def spin_kick_model(ratio: float, lam: float = 0.1) -> DrivenSystem:
    """Two-level system ``H = 2pi |1><1|`` kicked by ``lam |w(theta)><w(theta)|``."""
    H = np.diag([0.0, 2.0 * math.pi]).astype(complex)
    return DrivenSystem(H, float(ratio), _SpinInteraction(lam, ratio), float(lam), _SpinDirection(ratio))


def step_unitaries(sys: DrivenSystem, thetas) -> np.ndarray:
    """Stack of ``U(theta_k)`` for every row of an ``(n, 2)`` array."""
    thetas = np.asarray(thetas, dtype=float).reshape(-1, 2)
    F = sys.free_unitary
    if sys.is_rank_one:
        w = sys.direction(thetas)
        kicks = np.einsum("ni,nj->nij", w, w.conj()) * (np.exp(-1j * sys.kick_strength) - 1.0)
        kicks += np.eye(sys.dim)
        return np.einsum("ij,njk->nik", F, kicks)
    out = np.empty((len(thetas), sys.dim, sys.dim), dtype=complex)
    for k, t in enumerate(thetas):
        out[k] = F @ expm_hermitian(sys.V(t), 1.0)
    return out


def step_unitary(sys: DrivenSystem, theta) -> np.ndarray:
    """``U(theta) = exp(-i r H) exp(-i V(theta))``."""
    return step_unitaries(sys, np.asarray(tuple(theta), dtype=float))[0]


def orbit_points(flow, theta0, n: int) -> np.ndarray:
    """The first ``n`` orbit points ``theta_0 .. theta_{n-1}`` as an ``(n, 2)`` array."""
    if n == 0:
        return np.empty((0, 2))
    return np.asarray(flows.orbit(flow, theta0, n - 1).points)


def _ordered_product(Us: np.ndarray, drift_tol: float = 1e-8, check_every: int = 4096) -> np.ndarray:
    d = Us.shape[1]
    P = np.eye(d, dtype=complex)
    for k, U in enumerate(Us, 1):
        P = U @ P
        if k % check_every == 0 and unitarity_defect(P) > drift_tol:
            u, _, vh = np.linalg.svd(P)
            P = u @ vh
            log.warning("re-unitarised propagator after %d factors", k)
    return P


def propagate(sys: DrivenSystem, flow, theta0, n: int) -> np.ndarray:
    """``U(theta_{n-1}) ... U(theta_1) U(theta_0)`` (``n`` factors, identity for ``n = 0``)."""
    if n < 0:
        raise DomainError("n must be non-negative")
    if n == 0:
        return np.eye(sys.dim, dtype=complex)
    return _ordered_product(step_unitaries(sys, orbit_points(flow, theta0, n)))


def evolve_states(Us: np.ndarray, psi) -> np.ndarray:
    """States ``psi_k = U_{k-1} ... U_0 psi`` for ``k = 0 .. len(Us)``.

    ``psi`` may be a vector ``(d,)`` or a matrix of column vectors ``(d, m)``.
    """
    psi = np.asarray(psi, dtype=complex)
    n = len(Us)
    out = np.empty((n + 1,) + psi.shape, dtype=complex)
    out[0] = psi
    if psi.ndim == 1 and psi.shape[0] == 2:
        # plain complex arithmetic is several times faster than numpy for 2x2
        u = Us.reshape(n, 4).tolist()
        a, b = complex(psi[0]), complex(psi[1])
        res = [None] * n
        for k in range(n):
            u00, u01, u10, u11 = u[k]
            a, b = u00 * a + u01 * b, u10 * a + u11 * b
            res[k] = (a, b)
        if n:
            out[1:] = np.array(res, dtype=complex)
        return out
    cur = psi
    for k in range(n):
        cur = Us[k] @ cur
        out[k + 1] = cur
    return out
