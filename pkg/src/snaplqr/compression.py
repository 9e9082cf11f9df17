"""Data-driven state compression and regressor assembly.

Builds the row-orthonormal projection ``P`` (snapshot SVD, empirical
controllability gramians, or semi-stable deflation) and turns raw
snapshot records into the stacked quadratic regressors consumed by the
policy-improvement solver.  Everything here sees only measured data,
never the model matrices.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from ._validation import as_matrix, as_vector, check_symmetric
from .systems import SnapshotRecord

__all__ = [
    "ProjectionMatrix",
    "Gramian",
    "DataMatrices",
    "fit_projection",
    "empirical_gramian",
    "projection_from_gramian",
    "deflate_semistable",
    "build_data_matrices",
    "epsilon_hat",
    "complement_basis",
]

#: Singular values below this fraction of the largest are treated as zero.
RANK_RTOL = 1e-8


@dataclass(frozen=True)
class ProjectionMatrix:
    """Row-orthonormal compression map ``z = P x``.

    Rows are orthonormal, so the pseudo-inverse is the transpose and
    lifting back to the full space is ``x ~= P.T z``.  When built through
    semi-stable deflation, ``deflation_vec`` records the deflated
    eigenvector and ``P`` annihilates it exactly.
    """

    P: np.ndarray  # (n_hat, n)
    deflation_vec: np.ndarray | None = None
    singular_values: np.ndarray | None = None

    def __post_init__(self):
        P = as_matrix(self.P, "P")
        n_hat, n = P.shape
        if not 1 <= n_hat <= n:
            raise ValueError(f"P must be wide with at least one row, got {P.shape}")
        gram_err = np.abs(P @ P.T - np.eye(n_hat)).max()
        if gram_err > 1e-12:
            raise ValueError(f"rows of P are not orthonormal (deviation {gram_err:g})")
        object.__setattr__(self, "P", P)
        if self.deflation_vec is not None:
            v = as_vector(self.deflation_vec, "deflation_vec", n)
            if np.linalg.norm(P @ v) > 1e-10 * max(1.0, np.linalg.norm(v)):
                raise ValueError("P does not annihilate the deflation vector")
            object.__setattr__(self, "deflation_vec", v)
        if self.singular_values is not None:
            object.__setattr__(
                self, "singular_values", np.asarray(self.singular_values, dtype=float)
            )

    @property
    def n_hat(self) -> int:
        return self.P.shape[0]

    @property
    def n(self) -> int:
        return self.P.shape[1]

    def compress(self, X) -> np.ndarray:
        """Project full states (columns) into the reduced space."""
        return self.P @ np.asarray(X, dtype=float)

    def lift(self, Z) -> np.ndarray:
        """Map reduced states (columns) back into the full space."""
        return self.P.T @ np.asarray(Z, dtype=float)

    def to_json(self, path) -> None:
        doc = {"n_hat": self.n_hat, "P": self.P.tolist()}
        if self.deflation_vec is not None:
            doc["v"] = self.deflation_vec.tolist()
        if self.singular_values is not None:
            doc["singular_values"] = self.singular_values.tolist()
        Path(path).write_text(json.dumps(doc, indent=1))

    @classmethod
    def from_json(cls, path) -> "ProjectionMatrix":
        doc = json.loads(Path(path).read_text())
        return cls(
            P=np.asarray(doc["P"], dtype=float),
            deflation_vec=np.asarray(doc["v"], dtype=float) if "v" in doc else None,
            singular_values=(
                np.asarray(doc["singular_values"], dtype=float)
                if "singular_values" in doc
                else None
            ),
        )


@dataclass(frozen=True)
class Gramian:
    """Symmetric PSD energy matrix accumulated from trajectory data."""

    matrix: np.ndarray
    horizon: float

    def __post_init__(self):
        M = check_symmetric(self.matrix, "gramian", tol=1e-12)
        w_min = np.linalg.eigvalsh(M)[0]
        scale = max(np.abs(M).max(initial=0.0), 1e-300)
        if w_min < -1e-10 * scale:
            raise ValueError(f"gramian must be PSD, min eigenvalue {w_min:g}")
        object.__setattr__(self, "matrix", M)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def to_json(self, path) -> None:
        Path(path).write_text(
            json.dumps({"matrix": self.matrix.tolist(), "horizon": self.horizon}, indent=1)
        )


@dataclass(frozen=True)
class DataMatrices:
    """Stacked regressors for the least-squares policy update.

    Row ``j`` covers the sampling interval ``[t_j, t_{j+1}]`` of the
    underlying record, with ``z`` the (possibly compressed) state:

    - ``phi[j]``   : ``vec(z z^T)`` difference between the interval endpoints,
    - ``rho[j]``   : ``vec(int u z^T dt)``,
    - ``sigma[j]`` : ``vec(int z z^T dt)``,

    all using column-major ``vec``.  Integrals are trapezoidal on the
    fine grid.
    """

    phi: np.ndarray  # (N, d*d)
    rho: np.ndarray  # (N, d*m)
    sigma: np.ndarray  # (N, d*d)
    dimension: int
    sample_times: np.ndarray  # (N+1,)

    def __post_init__(self):
        d = self.dimension
        N = self.phi.shape[0]
        if self.phi.shape != (N, d * d) or self.sigma.shape != (N, d * d):
            raise ValueError("phi/sigma must have d^2 columns")
        if self.rho.shape[0] != N or self.rho.shape[1] % d != 0:
            raise ValueError("rho must have N rows and d*m columns")

    @property
    def num_samples(self) -> int:
        return self.phi.shape[0]

    @property
    def num_inputs(self) -> int:
        return self.rho.shape[1] // self.dimension

    def phi_blocks(self) -> np.ndarray:
        """phi rows as (N, d, d) symmetric matrices (no copy)."""
        d = self.dimension
        return self.phi.reshape(-1, d, d)

    def sigma_blocks(self) -> np.ndarray:
        d = self.dimension
        return self.sigma.reshape(-1, d, d)

    def rho_blocks(self) -> np.ndarray:
        """rho rows as (N, m, d) matrices ``int u z^T dt``."""
        d, m = self.dimension, self.num_inputs
        return self.rho.reshape(-1, d, m).transpose(0, 2, 1)


def _stack_snapshots(records) -> np.ndarray:
    """Snapshot matrix from coarse samples, one column per sample.

    The last coarse sample of each record is excluded: interval ``j``
    contributes its left endpoint, matching the regressor row count.
    """
    if isinstance(records, SnapshotRecord):
        records = [records]
    if isinstance(records, np.ndarray):
        return as_matrix(records, "snapshot matrix")
    cols = [rec.coarse_states()[:, :-1] for rec in records]
    if len({c.shape[0] for c in cols}) != 1:
        raise ValueError("all records must share the state dimension")
    return np.hstack(cols)


def _fix_signs(P: np.ndarray) -> np.ndarray:
    """Flip rows so the first non-negligible entry is positive (reproducibility)."""
    P = P.copy()
    for row in P:
        nz = np.nonzero(np.abs(row) > 1e-12 * max(np.abs(row).max(), 1e-300))[0]
        if nz.size and row[nz[0]] < 0:
            row *= -1.0
    return P


def _svd_projection(X: np.ndarray, n_hat: int) -> tuple[np.ndarray, np.ndarray]:
    """Top left-singular rows of X with the deterministic sign convention."""
    n = X.shape[0]
    if not 1 <= n_hat <= n:
        raise ValueError(f"n_hat must be in [1, {n}], got {n_hat}")
    U, s, _ = scipy.linalg.svd(X, full_matrices=True, lapack_driver="gesdd")
    rank = int(np.sum(s > RANK_RTOL * s[0])) if s.size and s[0] > 0 else 0
    if n_hat > rank:
        warnings.warn(
            f"n_hat={n_hat} exceeds the numerical rank {rank} of the snapshot "
            "matrix; trailing directions are arbitrary",
            stacklevel=3,
        )
    return _fix_signs(U[:, :n_hat].T), s


def fit_projection(records, n_hat: int) -> ProjectionMatrix:
    """Fit the projection by SVD of the stacked coarse snapshots.

    The rows of the result are the top ``n_hat`` left-singular vectors of
    ``X = [x(t_0), ..., x(t_{N-1})]``, which minimize the total discarded
    snapshot energy ``sum_j ||(I - P^T P) x(t_j)||^2`` over row-orthonormal
    rank-``n_hat`` projections.  Multiple records may be passed and are
    pooled column-wise.

    Parameters
    ----------
    records : SnapshotRecord, sequence of SnapshotRecord, or (n, N) ndarray
        Source of snapshot columns.
    n_hat : int
        Reduced dimension.

    Returns
    -------
    ProjectionMatrix
    """
    X = _stack_snapshots(records)
    P, s = _svd_projection(X, n_hat)
    return ProjectionMatrix(P=P, singular_values=s)


def empirical_gramian(responses) -> Gramian:
    """Accumulate the controllability energy of zero-input responses.

    For responses ``x_i(t)`` on a shared grid with final time ``T``,

        Phi = sum_i int_0^T (x_i(t) - xbar_i)(x_i(t) - xbar_i)^T dt,

    where ``xbar_i`` is the trajectory's running time-average at ``T``.
    With impulse directions spanning the input matrix columns this
    converges to the model controllability gramian as ``T`` grows.
    """
    responses = list(responses)
    if not responses:
        raise ValueError("need at least one response record")
    ref = responses[0].fine_times
    n = responses[0].n
    acc = np.zeros((n, n))
    for rec in responses:
        if rec.fine_times.shape != ref.shape or not np.allclose(
            rec.fine_times, ref, rtol=0, atol=1e-12
        ):
            raise ValueError("all responses must share the same time grid")
        if np.any(rec.inputs != 0.0):
            raise ValueError("empirical gramian requires zero-input responses")
        w = _trapezoid_weights(rec.fine_times)
        T = rec.fine_times[-1] - rec.fine_times[0]
        xbar = (rec.states @ w) / T
        dev = rec.states - xbar[:, None]
        acc += (dev * w) @ dev.T
    return Gramian(matrix=0.5 * (acc + acc.T), horizon=float(ref[-1] - ref[0]))


def projection_from_gramian(
    gram_u: Gramian, gram_x: Gramian | None = None, n_hat: int = 1
) -> ProjectionMatrix:
    """Projection onto the dominant eigenvectors of (summed) gramians."""
    S = gram_u.matrix.copy()
    if gram_x is not None:
        if gram_x.n != gram_u.n:
            raise ValueError("gramians must share the state dimension")
        S = S + gram_x.matrix
    if not 1 <= n_hat <= S.shape[0]:
        raise ValueError(f"n_hat must be in [1, {S.shape[0]}]")
    w, V = np.linalg.eigh(S)
    w, V = w[::-1], V[:, ::-1]
    significant = int(np.sum(w > RANK_RTOL * max(w[0], 0.0)))
    if n_hat > significant:
        warnings.warn(
            f"n_hat={n_hat} exceeds the {significant} gramian eigenvalues above "
            "tolerance; trailing directions are arbitrary",
            stacklevel=2,
        )
    P = _fix_signs(V[:, :n_hat].T)
    return ProjectionMatrix(P=P, singular_values=np.sqrt(np.clip(w, 0.0, None)))


def complement_basis(v) -> np.ndarray:
    """Deterministic orthonormal basis of the hyperplane orthogonal to ``v``.

    Returned with basis vectors as rows, shape (n-1, n).  Computed by QR
    of ``[v | I]``: the first Q column spans ``v``, the rest span its
    complement.
    """
    v = as_vector(v, "v")
    nv = np.linalg.norm(v)
    if nv == 0:
        raise ValueError("v must be nonzero")
    n = v.size
    Q, _ = np.linalg.qr(np.column_stack([v / nv, np.eye(n)]), mode="reduced")
    return Q[:, 1:n].T


def deflate_semistable(records, v, n_hat: int) -> ProjectionMatrix:
    """Fit a projection in the coordinates orthogonal to a known zero mode.

    Snapshots are first expressed in an orthonormal basis of the
    complement of ``v``, the SVD projection is fitted there, and the
    result is composed back so that ``P v = 0`` holds by construction.
    """
    X = _stack_snapshots(records)
    v = as_vector(v, "v", X.shape[0])
    if n_hat > X.shape[0] - 1:
        raise ValueError(
            f"n_hat must be at most n-1 = {X.shape[0] - 1} in deflated mode"
        )
    Vbar = complement_basis(v)
    Pc, s = _svd_projection(Vbar @ X, n_hat)
    return ProjectionMatrix(P=Pc @ Vbar, deflation_vec=v, singular_values=s)


def _trapezoid_weights(t: np.ndarray) -> np.ndarray:
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def build_data_matrices(
    record: SnapshotRecord, projection: ProjectionMatrix | None = None
) -> DataMatrices:
    """Assemble the stacked quadratic regressors from one record.

    Compression is applied to the snapshots *before* any outer products
    are formed, which is equivalent to right-multiplying the raw
    regressors by ``P^T (x) P^T`` (resp. ``P^T (x) I``) but never
    materializes the full-dimensional Kronecker rows.
    """
    if projection is not None:
        if projection.n != record.n:
            raise ValueError(
                f"projection expects state dimension {projection.n}, record has {record.n}"
            )
        Z = projection.compress(record.states)
    else:
        Z = record.states
    U = record.inputs
    d, m = Z.shape[0], U.shape[0]
    N = record.num_samples
    idx = record.coarse_index
    phi = np.empty((N, d * d))
    rho = np.empty((N, d * m))
    sigma = np.empty((N, d * d))
    for j in range(N):
        a, b = idx[j], idx[j + 1]
        if b - a < 1:
            raise ValueError(f"interval {j} has fewer than 2 fine points")
        sl = slice(a, b + 1)
        zs = Z[:, sl]
        us = U[:, sl]
        w = _trapezoid_weights(record.fine_times[sl])
        z1 = Z[:, b]
        z0 = Z[:, a]
        phi[j] = (np.outer(z1, z1) - np.outer(z0, z0)).ravel(order="F")
        rho[j] = ((us * w) @ zs.T).ravel(order="F")
        sig = (zs * w) @ zs.T
        sigma[j] = (0.5 * (sig + sig.T)).ravel(order="F")
    return DataMatrices(
        phi=phi,
        rho=rho,
        sigma=sigma,
        dimension=d,
        sample_times=record.coarse_times.copy(),
    )


def epsilon_hat(records, projection: ProjectionMatrix) -> float:
    """Square root of the snapshot energy discarded by the projection.

    Equals the Frobenius norm of ``(I - P^T P) X`` with snapshots taken
    in the deflated coordinates when the projection carries a deflation
    vector.  For an SVD-fitted projection this is exactly the tail
    singular-value energy ``sqrt(sum_{i>n_hat} s_i^2)``.
    """
    X = _stack_snapshots(records)
    if projection.n != X.shape[0]:
        raise ValueError("projection and snapshots disagree on the state dimension")
    if projection.deflation_vec is not None:
        Vbar = complement_basis(projection.deflation_vec)
        X = Vbar @ X
        P = projection.P @ Vbar.T
    else:
        P = projection.P
    resid = X - P.T @ (P @ X)
    return float(np.linalg.norm(resid, "fro"))
