"""Model-in-the-loop validation of learned controllers.

This is the only module that reads the true model matrices.  It provides
the Riccati/Lyapunov oracles, exact LQR cost evaluation, H2/Hinf norms,
the compression-error measure, and the small-gain stability certificate
for controllers learned on compressed data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from ._validation import as_matrix, as_vector, check_square, check_symmetric
from .compression import ProjectionMatrix, complement_basis
from .exceptions import ConvergenceError, StabilityError
from .policy import LqrWeights

__all__ = [
    "CostReport",
    "RiccatiSolution",
    "SmallGainResult",
    "lyapunov_solve",
    "kleinman_riccati",
    "lqr_cost",
    "h2_norm",
    "hinf_norm",
    "epsilon_bound",
    "small_gain_certificate",
    "spectrum",
    "evaluate_controller",
]


def lyapunov_solve(A_cl: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Solve ``A_cl^T W + W A_cl + M = 0`` for symmetric ``M``.

    ``A_cl`` must be Hurwitz.  Uses the dense Bartels-Stewart solver.
    """
    A_cl = check_square(np.asarray(A_cl, float), "A_cl")
    M = check_symmetric(np.asarray(M, float), "M")
    reals = np.linalg.eigvals(A_cl).real
    if reals.max(initial=-1.0) >= 0:
        raise StabilityError(
            f"Lyapunov equation needs a Hurwitz matrix (max Re eig = {reals.max():g})"
        )
    W = scipy.linalg.solve_continuous_lyapunov(A_cl.T, -M)
    return 0.5 * (W + W.T)


@dataclass(frozen=True)
class RiccatiSolution:
    W: np.ndarray
    F: np.ndarray
    iterations: int


def kleinman_riccati(A, B, Q, R, F0=None, tol: float = 1e-9,
                     max_iter: int = 100) -> RiccatiSolution:
    """Newton iteration for the continuous algebraic Riccati equation.

    Alternates Lyapunov solves for the value of the current gain with the
    gain update ``F <- R^{-1} B^T W``.  ``F0`` defaults to zero, which is
    admissible for an open-loop-stable ``A``.  Converges quadratically to
    the stabilizing solution.
    """
    A = check_square(np.asarray(A, float), "A")
    B = as_matrix(B, "B")
    Q = check_symmetric(np.asarray(Q, float), "Q")
    R = check_symmetric(np.asarray(R, float), "R")
    n, m = B.shape
    F = np.zeros((m, n)) if F0 is None else as_matrix(F0, "F0")
    for k in range(1, max_iter + 1):
        W = lyapunov_solve(A - B @ F, Q + F.T @ R @ F)
        F_next = scipy.linalg.solve(R, B.T @ W, assume_a="pos")
        if np.linalg.norm(F_next - F, "fro") <= tol:
            return RiccatiSolution(W=W, F=F_next, iterations=k)
        F = F_next
    raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} steps")


def _deflate(v, *matrices):
    """Express matrices/vectors in an orthonormal basis of ``v``-perp."""
    Vbar = complement_basis(v)
    out = []
    for M in matrices:
        M = np.asarray(M, dtype=float)
        if M.ndim == 1:
            out.append(Vbar @ M)
        elif M.shape[0] == M.shape[1] == Vbar.shape[1]:
            out.append(Vbar @ M @ Vbar.T)
        else:
            out.append(Vbar @ M)
    return Vbar, out


def lqr_cost(A, B, F, Q, R, x0, semistable_vec=None) -> float:
    """Exact infinite-horizon cost of ``u = -F x`` from ``x0``.

    Returns ``+inf`` when the closed loop is unstable (the sentinel lets
    sweep reports render failed configurations).  For a semi-stable
    system pass the zero-mode eigenvector; both ``Q`` and the closed loop
    must then annihilate it, and the cost is evaluated on the deflated
    dynamics.
    """
    A = check_square(np.asarray(A, float), "A")
    B = as_matrix(B, "B")
    F = as_matrix(F, "F")
    x0 = as_vector(x0, "x0", A.shape[0])
    A_cl = A - B @ F
    M = Q + F.T @ np.asarray(R, float) @ F
    if semistable_vec is not None:
        v = as_vector(semistable_vec, "semistable_vec", A.shape[0])
        scale = max(np.linalg.norm(A_cl) * np.linalg.norm(v), 1e-300)
        if np.linalg.norm(A_cl @ v) > 1e-8 * scale:
            raise ValueError("closed loop does not preserve the semi-stable mode")
        if np.linalg.norm(M @ v) > 1e-8 * max(np.linalg.norm(M) * np.linalg.norm(v), 1e-300):
            raise ValueError("cost integrand does not annihilate the semi-stable mode")
        _, (A_cl, M, x0) = _deflate(v, A_cl, M, x0)
    if np.linalg.eigvals(A_cl).real.max(initial=-1.0) >= 0:
        return math.inf
    W = lyapunov_solve(A_cl, check_symmetric(M, "Q + F^T R F"))
    return float(x0 @ W @ x0)


def h2_norm(A, B, C) -> float:
    """H2 norm of the strictly proper system ``C (sI - A)^{-1} B``."""
    A = check_square(np.asarray(A, float), "A")
    B = as_matrix(B, "B")
    C = as_matrix(C, "C")
    if A.size == 0:
        return 0.0
    # controllability gramian: A Phi + Phi A^T + B B^T = 0
    Phi = lyapunov_solve(A.T, B @ B.T)
    return float(np.sqrt(max(np.trace(C @ Phi @ C.T), 0.0)))


def _hamiltonian_has_imag_eig(A, B, C, D, gamma: float) -> bool:
    m = B.shape[1]
    Rg = gamma**2 * np.eye(m) - D.T @ D
    Rinv = scipy.linalg.inv(Rg)
    Acl = A + B @ Rinv @ D.T @ C
    H = np.block(
        [
            [Acl, B @ Rinv @ B.T],
            [-C.T @ (np.eye(C.shape[0]) + D @ Rinv @ D.T) @ C, -Acl.T],
        ]
    )
    eigs = np.linalg.eigvals(H)
    return bool(np.any(np.abs(eigs.real) <= 1e-8 * np.maximum(1.0, np.abs(eigs))))


def hinf_norm(A, B, C, D=None, tol: float = 1e-6) -> float:
    """Hinf norm of ``C (sI - A)^{-1} B + D`` for Hurwitz ``A``.

    Bisection on the gain level using the purely-imaginary-eigenvalue
    test of the associated Hamiltonian matrix, bracketed by a sweep over
    a logarithmic frequency grid.
    """
    A = check_square(np.asarray(A, float), "A")
    B = as_matrix(B, "B")
    C = as_matrix(C, "C")
    D = np.zeros((C.shape[0], B.shape[1])) if D is None else as_matrix(D, "D")
    sig_d = scipy.linalg.svdvals(D)[0] if D.size else 0.0
    if A.size == 0 or B.size == 0 or C.size == 0:
        return float(sig_d)
    reals = np.linalg.eigvals(A).real
    if reals.max() >= 0:
        raise StabilityError("Hinf norm requires a Hurwitz state matrix")
    lam = np.linalg.eigvals(A)
    mags = np.abs(lam)
    w_lo = max(mags.min() * 1e-3, 1e-8)
    w_hi = mags.max() * 1e3
    grid = np.concatenate([[0.0], np.logspace(np.log10(w_lo), np.log10(w_hi), 400)])
    I = np.eye(A.shape[0])
    grid_max = 0.0
    for w in grid:
        G = C @ np.linalg.solve(1j * w * I - A, B) + D
        grid_max = max(grid_max, scipy.linalg.svdvals(G)[0])
    if grid_max <= 1e-14:
        return 0.0
    lo = max(grid_max, sig_d)
    hi = 1.5 * lo + 1e-14
    for _ in range(60):
        if not _hamiltonian_has_imag_eig(A, B, C, D, hi):
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ConvergenceError("Hinf upper bracket search failed")
    while hi - lo > tol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        if _hamiltonian_has_imag_eig(A, B, C, D, mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _deflated_problem(A, B, x0, projection, semistable_vec):
    """Reduce a (possibly semi-stable) analysis problem to a stable one."""
    A = check_square(np.asarray(A, float), "A")
    B = as_matrix(B, "B")
    if isinstance(projection, ProjectionMatrix):
        v = projection.deflation_vec if semistable_vec is None else semistable_vec
        Pmat = projection.P
    else:
        v = semistable_vec
        Pmat = as_matrix(projection, "P")
    if x0 is not None:
        x0 = as_vector(x0, "x0", A.shape[0])
    if v is None:
        return A, B, x0, Pmat
    Vbar, (Ad, Bd) = _deflate(v, A, B)
    x0d = None if x0 is None else Vbar @ x0
    return Ad, Bd, x0d, Pmat @ Vbar.T


def epsilon_bound(A, B, x0, projection, semistable_vec=None) -> float:
    """Model-based measure of the trajectory energy the projection discards.

    Sum of the Hinf norm of the discarded input channel and the H2 norm
    of the discarded initial-condition response:

        eps = ||(I - P^T P)(sI - A)^{-1} B||_Hinf
            + ||(I - P^T P)(sI - A)^{-1} x0||_H2.

    Zero exactly when the projection retains the whole subspace reachable
    from the inputs and ``x0``.  Semi-stable systems are deflated first.
    """
    Ad, Bd, x0d, Pmat = _deflated_problem(A, B, x0, projection, semistable_vec)
    proj_out = np.eye(Pmat.shape[1]) - Pmat.T @ Pmat
    eps = hinf_norm(Ad, Bd, proj_out)
    if x0d is not None:
        eps += h2_norm(Ad, x0d.reshape(-1, 1), proj_out)
    return float(eps)


@dataclass(frozen=True)
class SmallGainResult:
    """Outcome of the compression-robustness small-gain test."""

    lhs: float  # compression error epsilon
    rhs: float  # inverse Hinf norm of the reduced-loop cascade
    margin: float
    certified: bool
    reduced_hurwitz: bool
    closed_loop_stable: bool  # direct eigensolve cross-check


def small_gain_certificate(
    A, B, projection, gain_hat, x0, semistable_vec=None, eps: float | None = None
) -> SmallGainResult:
    """Certify that a reduced-learned gain stabilizes the full system.

    Compares the compression error ``eps`` against the inverse Hinf norm
    of the cascade of the reduced closed loop with the reduced error
    channel; when ``eps`` is strictly smaller, the lifted controller is
    guaranteed stabilizing.  A direct eigensolve of the lifted closed
    loop is reported alongside as a cross-check.
    """
    Ad, Bd, x0d, Pmat = _deflated_problem(A, B, x0, projection, semistable_vec)
    Fh = as_matrix(gain_hat, "gain_hat")
    n_hat = Pmat.shape[0]
    if Fh.shape[1] != n_hat:
        raise ValueError(f"gain_hat must have {n_hat} columns, got {Fh.shape[1]}")
    A_full = check_square(np.asarray(A, float), "A")
    B_full = as_matrix(B, "B")
    if isinstance(projection, ProjectionMatrix):
        P_orig = projection.P
    else:
        P_orig = as_matrix(projection, "P")
    cl = A_full - B_full @ (Fh @ P_orig)
    cl_eigs = np.linalg.eigvals(cl)
    if semistable_vec is not None or (
        isinstance(projection, ProjectionMatrix) and projection.deflation_vec is not None
    ):
        # ignore the preserved zero mode
        keep = np.abs(cl_eigs) > 1e-8 * max(1.0, np.abs(cl_eigs).max())
        cl_eigs = cl_eigs[keep]
    closed_loop_stable = bool(cl_eigs.real.max(initial=-1.0) < 0)

    Ar = Pmat @ Ad @ Pmat.T
    if np.linalg.eigvals(Ar).real.max(initial=-1.0) >= 0:
        return SmallGainResult(
            lhs=math.nan,
            rhs=math.nan,
            margin=math.nan,
            certified=False,
            reduced_hurwitz=False,
            closed_loop_stable=closed_loop_stable,
        )
    Br = Pmat @ Bd
    A_F = Ar - Br @ Fh
    if np.linalg.eigvals(A_F).real.max(initial=-1.0) >= 0:
        return SmallGainResult(
            lhs=math.nan,
            rhs=math.nan,
            margin=math.nan,
            certified=False,
            reduced_hurwitz=True,
            closed_loop_stable=closed_loop_stable,
        )
    if eps is None:
        eps = epsilon_bound(A, B, x0, projection, semistable_vec=semistable_vec)
    # cascade: error channel (sI - Ar)^{-1} P A feeding the reduced closed loop
    A_casc = np.block([[Ar, np.zeros((n_hat, n_hat))], [Br @ Fh, A_F]])
    B_casc = np.vstack([Pmat @ Ad, np.zeros((n_hat, Ad.shape[0]))])
    C_casc = np.hstack([-Fh, -Fh])
    cascade_norm = hinf_norm(A_casc, B_casc, C_casc)
    rhs = math.inf if cascade_norm == 0.0 else 1.0 / cascade_norm
    return SmallGainResult(
        lhs=float(eps),
        rhs=rhs,
        margin=rhs - float(eps),
        certified=bool(eps < rhs),
        reduced_hurwitz=True,
        closed_loop_stable=closed_loop_stable,
    )


def spectrum(A_cl) -> np.ndarray:
    """Eigenvalues sorted by real part descending (imaginary part breaks ties)."""
    eigs = np.linalg.eigvals(check_square(np.asarray(A_cl, float), "A_cl"))
    order = np.lexsort((-eigs.imag, -eigs.real))
    return eigs[order]


@dataclass
class CostReport:
    """Model-aware evaluation of one learned controller."""

    J: float
    J_opt: float
    J_hat: float
    epsilon: float | None = None
    epsilon_hat: float | None = None
    small_gain_margin: float | None = None
    certified: bool | None = None
    closed_loop_spectrum: np.ndarray | None = None

    def to_dict(self) -> dict:
        eigs = self.closed_loop_spectrum
        return {
            "J": self.J,
            "J_opt": self.J_opt,
            "J_hat": self.J_hat,
            "epsilon": self.epsilon,
            "epsilon_hat": self.epsilon_hat,
            "small_gain_margin": self.small_gain_margin,
            "certified": self.certified,
            "closed_loop_spectrum": (
                None if eigs is None else [[float(e.real), float(e.imag)] for e in eigs]
            ),
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def evaluate_controller(
    A,
    B,
    gain,
    weights: LqrWeights,
    x0,
    projection: ProjectionMatrix | None = None,
    semistable_vec=None,
    epsilon_hat_value: float | None = None,
    compute_epsilon: bool = True,
    certify: bool = True,
) -> CostReport:
    """Full model-in-the-loop report for a (lifted) state-feedback gain."""
    A = check_square(np.asarray(A, float), "A")
    B = as_matrix(B, "B")
    F = as_matrix(gain, "gain")
    x0 = as_vector(x0, "x0", A.shape[0])
    v = semistable_vec
    if v is None and projection is not None:
        v = projection.deflation_vec
    J = lqr_cost(A, B, F, weights.Q, weights.R, x0, semistable_vec=v)
    if v is None:
        W_opt = kleinman_riccati(A, B, weights.Q, weights.R)
        J_opt = float(x0 @ W_opt.W @ x0)
    else:
        Vbar, (Ad, Bd, Qd, x0d) = _deflate(v, A, B, weights.Q, x0)
        sol = kleinman_riccati(Ad, Bd, 0.5 * (Qd + Qd.T), weights.R)
        J_opt = float(x0d @ sol.W @ x0d)
    eps = None
    margin = None
    certified = None
    J_hat = J
    if projection is not None:
        Pmat = projection.P
        Fh = F @ Pmat.T
        Ar = Pmat @ A @ Pmat.T
        Qh = Pmat @ weights.Q @ Pmat.T
        A_F = Ar - (Pmat @ B) @ Fh
        if np.linalg.eigvals(A_F).real.max(initial=-1.0) < 0:
            Wh = lyapunov_solve(
                A_F, check_symmetric(Qh + Fh.T @ weights.R @ Fh, "reduced cost")
            )
            xi0 = Pmat @ x0
            J_hat = float(xi0 @ Wh @ xi0)
        else:
            J_hat = math.inf
        if compute_epsilon:
            eps = epsilon_bound(A, B, x0, projection, semistable_vec=v)
        if certify:
            sg = small_gain_certificate(
                A, B, projection, Fh, x0, semistable_vec=v, eps=eps
            )
            margin = sg.margin
            certified = sg.certified
    return CostReport(
        J=J,
        J_opt=J_opt,
        J_hat=J_hat,
        epsilon=eps,
        epsilon_hat=epsilon_hat_value,
        small_gain_margin=margin,
        certified=certified,
        closed_loop_spectrum=spectrum(A - B @ F),
    )
