"""Scikit-learn compatible wrappers around the learning pipeline.

``SnapshotProjection`` behaves like an (uncentered) PCA transformer over
state samples, and ``OffPolicyLqr`` is a fit/predict estimator that
learns a state-feedback gain from one snapshot record.  Both expose
``get_params``/``set_params`` so they compose with pipelines, grid
search, and cloning.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .compression import build_data_matrices, deflate_semistable, fit_projection
from .policy import (
    DEFAULT_KAPPA,
    DEFAULT_MAX_ITER,
    LqrWeights,
    run_off_policy,
    run_preconditioned,
)
from .systems import SnapshotRecord

__all__ = ["SnapshotProjection", "OffPolicyLqr"]


def _as_snapshot_columns(X) -> np.ndarray:
    """Accept a record or an (n_samples, n_features) array; return columns."""
    if isinstance(X, SnapshotRecord):
        return X.coarse_states()[:, :-1]
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D sample array, got shape {X.shape}")
    return X.T


class SnapshotProjection(BaseEstimator, TransformerMixin):
    """Orthonormal projection onto the dominant snapshot subspace.

    Parameters
    ----------
    n_components : int
        Dimension of the compressed state.
    deflation_vec : array-like of shape (n_features,), optional
        Known zero-mode direction; when given, the projection is fitted
        in the orthogonal complement and annihilates it exactly.

    Attributes
    ----------
    projection_ : ProjectionMatrix
        The fitted compression map.
    components_ : ndarray of shape (n_components, n_features)
        Rows of the projection (dominant left-singular vectors).
    singular_values_ : ndarray
        Full singular-value spectrum of the fitted snapshot matrix.
    """

    def __init__(self, n_components: int = 1, deflation_vec=None):
        self.n_components = n_components
        self.deflation_vec = deflation_vec

    def fit(self, X, y=None):
        cols = _as_snapshot_columns(X)
        if self.deflation_vec is not None:
            self.projection_ = deflate_semistable(
                cols, self.deflation_vec, self.n_components
            )
        else:
            self.projection_ = fit_projection(cols, self.n_components)
        self.components_ = self.projection_.P
        self.singular_values_ = self.projection_.singular_values
        return self

    def _check_fitted(self):
        if not hasattr(self, "projection_"):
            raise NotFittedError("call fit before using this transformer")

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        return _as_snapshot_columns(X).T @ self.components_.T

    def inverse_transform(self, Z) -> np.ndarray:
        self._check_fitted()
        return np.asarray(Z, dtype=float) @ self.components_


class OffPolicyLqr(BaseEstimator):
    """Learn a state-feedback LQR gain from one exploration record.

    With ``n_components`` set, snapshots are compressed through a fitted
    :class:`SnapshotProjection` before the policy iteration runs and the
    learned gain is lifted back to the full dimension; otherwise the
    iteration runs on the raw data.

    Parameters
    ----------
    Q, R : array-like
        Cost weights (state PSD, input PD).
    n_components : int or None
        Compressed dimension; ``None`` disables compression.
    semistable_vec : array-like, optional
        Zero-mode eigenvector for semi-stable plants (requires ``Q v = 0``).
    kappa : float
        Stopping threshold on the Frobenius gain change.
    max_iter : int
    rank_policy : {"warn", "raise", "ignore"}
    lstsq_cond : float
        Truncation level of the minimum-norm least-squares solve.

    Attributes
    ----------
    gain_ : ndarray of shape (m, n)
        Learned full-dimension gain; the control law is ``u = -gain_ @ x``.
    result_ : PolicyResult
        Iterates and diagnostics.
    projection_ : ProjectionMatrix or None
    """

    def __init__(
        self,
        Q=None,
        R=None,
        n_components: int | None = None,
        semistable_vec=None,
        kappa: float = DEFAULT_KAPPA,
        max_iter: int = DEFAULT_MAX_ITER,
        rank_policy: str = "warn",
        lstsq_cond: float = 1e-8,
    ):
        self.Q = Q
        self.R = R
        self.n_components = n_components
        self.semistable_vec = semistable_vec
        self.kappa = kappa
        self.max_iter = max_iter
        self.rank_policy = rank_policy
        self.lstsq_cond = lstsq_cond

    def fit(self, X: SnapshotRecord, y=None):
        if not isinstance(X, SnapshotRecord):
            raise TypeError("OffPolicyLqr.fit expects a SnapshotRecord")
        if self.Q is None or self.R is None:
            raise ValueError("Q and R must be set before fitting")
        weights = LqrWeights(Q=np.asarray(self.Q, float), R=np.asarray(self.R, float))
        if self.n_components is None and self.semistable_vec is None:
            data = build_data_matrices(X)
            self.result_ = run_off_policy(
                data, weights, kappa=self.kappa, max_iter=self.max_iter,
                rank_policy=self.rank_policy, lstsq_cond=self.lstsq_cond,
            )
            self.projection_ = None
        else:
            n_components = self.n_components
            if self.semistable_vec is not None:
                if n_components is None:
                    n_components = X.n - 1
                proj = deflate_semistable(X, self.semistable_vec, n_components)
            else:
                proj = fit_projection(X, n_components)
            self.result_ = run_preconditioned(
                X, proj, weights, kappa=self.kappa, max_iter=self.max_iter,
                rank_policy=self.rank_policy, lstsq_cond=self.lstsq_cond,
            )
            self.projection_ = proj
        if not self.result_.gains:
            raise RuntimeError("policy iteration produced no iterates")
        self.gain_ = self.result_.lifted_gain
        return self

    def predict(self, X) -> np.ndarray:
        """Control inputs ``u = -F x`` for state samples in rows."""
        if not hasattr(self, "gain_"):
            raise NotFittedError("call fit before predict")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return -X @ self.gain_.T
