"""Least-squares policy improvement from trajectory data.

Implements the data-driven Kleinman update: each step solves one linear
least-squares system built from the stacked quadratic regressors and
yields the value matrix of the current gain together with the improved
gain.  Works identically on raw and on compressed data; in the latter
case the final gain is lifted back to the full state dimension through
the projection.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from ._validation import as_matrix, as_vector, check_pd, check_psd
from .compression import RANK_RTOL, DataMatrices, ProjectionMatrix, build_data_matrices
from .exceptions import RankDeficientDataError
from .systems import SnapshotRecord

__all__ = [
    "LqrWeights",
    "PolicyResult",
    "RankCheck",
    "rank_check",
    "policy_improvement_step",
    "run_off_policy",
    "run_preconditioned",
]

#: Abort the iteration once the gain norm passes this bound.
DIVERGENCE_GUARD = 1e6

#: Default stopping threshold on the Frobenius gain change.
DEFAULT_KAPPA = 0.01

DEFAULT_MAX_ITER = 50


@dataclass(frozen=True)
class LqrWeights:
    """Quadratic cost weights ``int x^T Q x + u^T R u dt``."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", check_psd(np.asarray(self.Q, float), "Q"))
        object.__setattr__(self, "R", check_pd(np.asarray(self.R, float), "R"))

    def reduced(self, projection: ProjectionMatrix) -> "LqrWeights":
        """Weights expressed on the compressed state: ``Q_hat = P Q P^T``."""
        P = projection.P
        if P.shape[1] != self.Q.shape[0]:
            raise ValueError("projection and Q disagree on the state dimension")
        Qh = P @ self.Q @ P.T
        return LqrWeights(Q=0.5 * (Qh + Qh.T), R=self.R)

    def check_kernel(self, v, tol: float = 1e-10) -> None:
        """Require ``Q v = 0``; mandatory when a zero mode is deflated,
        otherwise the cost would penalize the uncontrollable direction."""
        v = as_vector(v, "v", self.Q.shape[0])
        scale = max(np.linalg.norm(self.Q) * np.linalg.norm(v), 1e-300)
        if np.linalg.norm(self.Q @ v) > tol * scale:
            raise ValueError(
                "Q must annihilate the semi-stable eigenvector"
            )


@dataclass(frozen=True)
class RankCheck:
    rank: int
    required: int

    @property
    def satisfied(self) -> bool:
        return self.rank >= self.required


def rank_check(data: DataMatrices) -> RankCheck:
    """Numerical rank of the stacked ``[rho sigma]`` regressors.

    A unique policy-improvement solution needs rank
    ``d(d+1)/2 + m d``.  Duplicate columns of ``sigma`` (the two copies
    of each off-diagonal entry of a symmetric integrand) are dropped
    before the SVD; they cannot change the rank.
    """
    d, m = data.dimension, data.num_inputs
    iu = np.triu_indices(d)
    sigma_unique = data.sigma_blocks()[:, iu[0], iu[1]]
    M = np.concatenate([data.rho, sigma_unique], axis=1)
    sv = scipy.linalg.svdvals(M)
    rank = int(np.sum(sv > RANK_RTOL * sv[0])) if sv.size and sv[0] > 0 else 0
    required = d * (d + 1) // 2 + m * d
    return RankCheck(rank=rank, required=required)


@dataclass
class PolicyResult:
    """Iterates and diagnostics of one policy-improvement run."""

    gains: list = field(default_factory=list)  # F_1 ... F_K, each (m, d)
    values: list = field(default_factory=list)  # W_0 ... W_{K-1}, each (d, d)
    residuals: list = field(default_factory=list)  # ||F_{k+1} - F_k||_F
    ls_residuals: list = field(default_factory=list)  # relative LS residuals
    iteration_ms: list = field(default_factory=list)
    iter_count: int = 0
    converged: bool = False
    diverged: bool = False
    lifted_gain: np.ndarray | None = None  # (m, n)
    dimension: int = 0
    rank: RankCheck | None = None
    setup_ms: float = 0.0

    @property
    def final_gain(self) -> np.ndarray:
        if not self.gains:
            raise ValueError("no iterations were performed")
        return self.gains[-1]

    def report_dict(self) -> dict:
        return {
            "iterations": self.iter_count,
            "residuals": [float(r) for r in self.residuals],
            "timings_ms": [float(t) for t in self.iteration_ms],
            "converged": bool(self.converged),
            "n_hat": int(self.dimension),
        }

    def save_report_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.report_dict(), indent=1))

    def save_gain_csv(self, path) -> None:
        """Gain as a bare CSV matrix, m rows by n columns."""
        gain = self.lifted_gain if self.lifted_gain is not None else self.final_gain
        lines = [",".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(gain)]
        Path(path).write_text("\n".join(lines) + "\n")


class _Workspace:
    """Iteration-invariant pieces of the least-squares system."""

    def __init__(self, data: DataMatrices, weights: LqrWeights,
                 lstsq_cond: float = RANK_RTOL):
        self.lstsq_cond = float(lstsq_cond)
        d, m, N = data.dimension, data.num_inputs, data.num_samples
        if weights.Q.shape[0] != d:
            raise ValueError(
                f"Q must match the data dimension {d}, got {weights.Q.shape[0]}"
            )
        if weights.R.shape[0] != m:
            raise ValueError(
                f"R must match the input dimension {m}, got {weights.R.shape[0]}"
            )
        self.d, self.m, self.N = d, m, N
        self.Q, self.R = weights.Q, weights.R
        self.iu = np.triu_indices(d)
        self.svec_factors = np.where(self.iu[0] == self.iu[1], 1.0, 2.0)
        self.p_w = d * (d + 1) // 2
        self.sigma = data.sigma_blocks()
        # x^T W x over an interval, expressed on the upper-triangular W entries
        self.theta = np.empty((N, self.p_w + d * m))
        self.theta[:, : self.p_w] = (
            data.phi_blocks()[:, self.iu[0], self.iu[1]] * self.svec_factors
        )
        # input-channel block that does not depend on the iterate
        self.rho_R = np.einsum("ab,jbc->jac", self.R, data.rho_blocks())

    def expand_value(self, w_upper: np.ndarray) -> np.ndarray:
        W = np.zeros((self.d, self.d))
        W[self.iu] = w_upper
        return W + W.T - np.diag(np.diag(W))

    def solve(self, F: np.ndarray):
        """One Kleinman step: value of F and the improved gain."""
        d, m = self.d, self.m
        RF = self.R @ F
        G = self.rho_R + np.einsum("ab,jbc->jac", RF, self.sigma)
        self.theta[:, self.p_w :] = -2.0 * G.transpose(0, 2, 1).reshape(self.N, d * m)
        z = -np.einsum("jab,ab->j", self.sigma, self.Q + F.T @ RF)
        sol, _, _, _ = scipy.linalg.lstsq(
            self.theta, z, cond=self.lstsq_cond, lapack_driver="gelsd"
        )
        rel_resid = np.linalg.norm(self.theta @ sol - z) / max(
            np.linalg.norm(z), 1e-300
        )
        W = self.expand_value(sol[: self.p_w])
        F_next = sol[self.p_w :].reshape(d, m).T
        return W, F_next, float(rel_resid)


def policy_improvement_step(
    data: DataMatrices,
    gain,
    weights: LqrWeights,
    check_rank: bool = True,
    residual_rtol: float = 1e-6,
    lstsq_cond: float = RANK_RTOL,
):
    """Single least-squares Kleinman update.

    Solves for the value matrix ``W`` of the current ``gain`` and the
    improved gain in one shot.  The value matrix is parameterized by its
    ``d(d+1)/2`` upper-triangular entries (symmetric Kronecker columns
    are summed), which removes the nullspace a full vectorization would
    leave.

    Returns
    -------
    (W, F_next, rel_residual)
        Value matrix, improved gain, and the relative least-squares
        residual.  A residual above ``residual_rtol`` triggers a warning:
        it signals inconsistent data, typically quadrature error larger
        than the requested accuracy.
    """
    if check_rank:
        rc = rank_check(data)
        if not rc.satisfied:
            raise RankDeficientDataError(rc.rank, rc.required)
    ws = _Workspace(data, weights, lstsq_cond)
    F = as_matrix(gain, "gain")
    if F.shape != (ws.m, ws.d):
        raise ValueError(f"gain must be ({ws.m}, {ws.d}), got {F.shape}")
    W, F_next, rel = ws.solve(F)
    if rel > residual_rtol:
        warnings.warn(
            f"least-squares residual {rel:.2e} exceeds {residual_rtol:.0e}; "
            "data may be inconsistent (check quadrature resolution)",
            stacklevel=2,
        )
    return W, F_next, rel


def _iterate(
    ws: _Workspace,
    kappa: float,
    max_iter: int,
    rank_result: RankCheck | None,
) -> PolicyResult:
    res = PolicyResult(dimension=ws.d, rank=rank_result)
    F = np.zeros((ws.m, ws.d))
    for _ in range(max_iter):
        t0 = time.perf_counter()
        W, F_next, rel = ws.solve(F)
        res.iteration_ms.append(1e3 * (time.perf_counter() - t0))
        res.values.append(W)
        res.gains.append(F_next)
        res.ls_residuals.append(rel)
        step = float(np.linalg.norm(F_next - F, "fro"))
        res.residuals.append(step)
        res.iter_count += 1
        F = F_next
        if np.linalg.norm(F, "fro") > DIVERGENCE_GUARD:
            res.diverged = True
            break
        if step <= kappa:
            res.converged = True
            break
    return res


def _check_rank_with_policy(data: DataMatrices, rank_policy: str) -> RankCheck | None:
    if rank_policy == "ignore":
        return None
    rc = rank_check(data)
    if not rc.satisfied:
        if rank_policy == "raise":
            raise RankDeficientDataError(rc.rank, rc.required)
        warnings.warn(
            f"regressor rank {rc.rank} below required {rc.required}; "
            "proceeding with the minimum-norm solution",
            stacklevel=3,
        )
    return rc


def run_off_policy(
    data: DataMatrices,
    weights: LqrWeights,
    kappa: float = DEFAULT_KAPPA,
    max_iter: int = DEFAULT_MAX_ITER,
    rank_policy: str = "warn",
    lstsq_cond: float = RANK_RTOL,
) -> PolicyResult:
    """Iterate policy improvement on raw (or pre-compressed) data.

    Starts from the zero gain, which is admissible because the open loop
    is stable, and stops once the Frobenius change of the gain drops to
    ``kappa``.  ``rank_policy`` is one of ``"raise"``, ``"warn"``,
    ``"ignore"`` and controls the excitation rank gate.

    Returns
    -------
    PolicyResult
        With ``lifted_gain`` equal to the final gain (the data dimension
        is the working dimension here).
    """
    rc = _check_rank_with_policy(data, rank_policy)
    t0 = time.perf_counter()
    ws = _Workspace(data, weights, lstsq_cond)
    res = _iterate(ws, kappa, max_iter, rc)
    res.setup_ms = 1e3 * (time.perf_counter() - t0) - sum(res.iteration_ms)
    if res.gains:
        res.lifted_gain = res.gains[-1].copy()
    _warn_ls_residuals(res)
    return res


def run_preconditioned(
    record: SnapshotRecord,
    projection: ProjectionMatrix,
    weights: LqrWeights,
    kappa: float = DEFAULT_KAPPA,
    max_iter: int = DEFAULT_MAX_ITER,
    rank_policy: str = "warn",
    lstsq_cond: float = RANK_RTOL,
) -> PolicyResult:
    """Policy iteration on compressed data, gain lifted back afterwards.

    The snapshots are compressed through ``projection`` before the
    regressors are formed, the cost weight is reduced to
    ``P Q P^T``, and the learned reduced gain is lifted as ``F = F_hat P``.
    In deflated mode (projection built around a known zero mode) ``Q``
    must annihilate that mode.
    """
    if projection.deflation_vec is not None:
        weights.check_kernel(projection.deflation_vec)
    reduced = weights.reduced(projection)
    t0 = time.perf_counter()
    data = build_data_matrices(record, projection)
    rc = _check_rank_with_policy(data, rank_policy)
    ws = _Workspace(data, reduced, lstsq_cond)
    setup_ms = 1e3 * (time.perf_counter() - t0)
    res = _iterate(ws, kappa, max_iter, rc)
    res.setup_ms = setup_ms
    if res.gains:
        res.lifted_gain = res.gains[-1] @ projection.P
    _warn_ls_residuals(res)
    return res


def _warn_ls_residuals(res: PolicyResult, rtol: float = 1e-6) -> None:
    if res.ls_residuals and max(res.ls_residuals) > rtol:
        warnings.warn(
            f"max relative least-squares residual {max(res.ls_residuals):.2e} "
            f"exceeds {rtol:.0e}; gains carry quadrature-level error",
            stacklevel=3,
        )
