"""Rank-N first-order VAR by the dynamic mode decomposition.

Given snapshot matrices ``Y = [y_1 .. y_J]`` and ``Yp = [y_2 .. y_{J+1}]`` the
fit is ``B = Yp V S^{-1} U'`` where ``U S V'`` is the rank-N truncated SVD of
``Y``.  The residual covariance of the fit supplies the Gaussian innovation
covariance used to score observed data.

Two entry points produce the same :class:`ReducedVAR`: :func:`dmd_fit` works
on the snapshot matrices themselves, :func:`dmd_fit_moments` on their second
moments (``Y Y'``, ``Yp Y'``, ``Yp Yp'``), which is what the estimation loop
uses when J is much larger than M.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .dfm import LOG_2PI, PanelData
from .errors import DimensionMismatch, PanelTooShort, RankTooLarge, SingularOmega

DEFAULT_SHRINKAGE_FACTOR = 1e-8
# singular values below max(M, J) * eps * s_1 count as zero
_RANK_RTOL = np.finfo(float).eps


@dataclass(frozen=True)
class SnapshotPair:
    Y: np.ndarray
    Yp: np.ndarray

    def __post_init__(self):
        if self.Y.shape != self.Yp.shape:
            raise DimensionMismatch("snapshot matrices must have equal shapes")
        if self.Y.shape[1] < 2:
            raise PanelTooShort("need J >= 2 snapshots")

    @property
    def J(self) -> int:
        return self.Y.shape[1]

    @property
    def M(self) -> int:
        return self.Y.shape[0]


@dataclass(frozen=True)
class SnapshotMoments:
    """Second moments of a snapshot pair (no 1/J scaling)."""

    gram: np.ndarray  # Y Y'
    cross: np.ndarray  # Yp Y'
    gram_p: np.ndarray  # Yp Yp'
    J: int

    @property
    def M(self) -> int:
        return self.gram.shape[0]


@dataclass(frozen=True)
class TruncatedSVD:
    U: np.ndarray
    S: np.ndarray
    V: np.ndarray
    discarded_energy: float

    @property
    def rank(self) -> int:
        return self.S.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T

    def truncate(self, n: int) -> "TruncatedSVD":
        """Leading ``n`` components; ``discarded_energy`` is not recomputable and set to nan."""
        if n > self.rank:
            raise RankTooLarge(f"cannot take {n} components from a rank-{self.rank} truncation")
        return TruncatedSVD(self.U[:, :n], self.S[:n], self.V[:, :n], float("nan"))


@dataclass(frozen=True)
class ReducedVAR:
    """Fitted rank-N VAR(1): ``B = left @ right`` plus residual covariance."""

    B: np.ndarray
    left: np.ndarray  # M x N, Yp V S^{-1}
    right: np.ndarray  # N x M, U'
    Omega: np.ndarray
    N: int
    shrinkage: float

    @property
    def M(self) -> int:
        return self.B.shape[0]

    def predict(self, Y: np.ndarray) -> np.ndarray:
        return self.left @ (self.right @ Y)

    def residuals(self, Y: np.ndarray) -> np.ndarray:
        """``y_t - B y_{t-1}`` for t = 2..T of an M x T panel."""
        return Y[:, 1:] - self.predict(Y[:, :-1])


def build_snapshots(panel: PanelData | np.ndarray) -> SnapshotPair:
    Y = panel.Y if isinstance(panel, PanelData) else np.asarray(panel, dtype=float)
    if Y.ndim != 2:
        raise DimensionMismatch("panel must be a matrix")
    if Y.shape[1] < 3:
        raise PanelTooShort(f"need T >= 3 periods, got {Y.shape[1]}")
    return SnapshotPair(Y[:, :-1], Y[:, 1:])


def snapshot_moments(panel: PanelData | np.ndarray) -> SnapshotMoments:
    Z = panel.Y if isinstance(panel, PanelData) else np.asarray(panel, dtype=float)
    if Z.shape[1] < 3:
        raise PanelTooShort(f"need T >= 3 periods, got {Z.shape[1]}")
    X = Z[:, :-1]
    gram = X @ X.T
    cross = Z[:, 1:] @ X.T
    first, last = Z[:, 0], Z[:, -1]
    gram_p = gram - np.outer(first, first) + np.outer(last, last)
    return SnapshotMoments(gram, cross, gram_p, Z.shape[1] - 1)


def _check_rank(S: np.ndarray, N: int, shape):
    tol = _RANK_RTOL * max(shape) * (S[0] if S.size else 0.0)
    if S.size < N or S[N - 1] <= tol:
        raise RankTooLarge(f"matrix has numerical rank below the requested N={N}")


def truncated_svd(Y: np.ndarray, N: int) -> TruncatedSVD:
    """Best rank-N approximation ``U diag(S) V'`` of ``Y``.

    Wide matrices (J much larger than M) go through the M x M Gram matrix to
    find the dominant subspace, followed by a Rayleigh-Ritz step so the
    returned factors are orthonormal to working precision.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2:
        raise DimensionMismatch("expected a matrix")
    M, J = Y.shape
    if N < 1 or N > min(M, J):
        raise RankTooLarge(f"N={N} exceeds min(M, J)={min(M, J)}")
    total = float(np.sum(Y * Y))
    if J >= 4 * M:
        evals, evecs = np.linalg.eigh(Y @ Y.T)
        U0 = evecs[:, ::-1][:, :N]
        Q, _ = np.linalg.qr(Y.T @ U0)
        Ub, S, Wt = np.linalg.svd(Y @ Q, full_matrices=False)
        U, V = Ub, Q @ Wt.T
    else:
        Uf, S_all, Vt = np.linalg.svd(Y, full_matrices=False)
        U, S, V = Uf[:, :N], S_all[:N], Vt[:N].T
    _check_rank(S, N, Y.shape)
    kept = float(np.sum(S * S))
    discarded = 0.0 if total == 0.0 else min(1.0, max(0.0, 1.0 - kept / total))
    return TruncatedSVD(U, S, V, discarded)


def default_shrinkage(Omega_raw: np.ndarray) -> float:
    return DEFAULT_SHRINKAGE_FACTOR * float(np.trace(Omega_raw)) / Omega_raw.shape[0]


def _finish(left, right, Omega_raw, N, shrinkage) -> ReducedVAR:
    Omega_raw = 0.5 * (Omega_raw + Omega_raw.T)
    delta = default_shrinkage(Omega_raw) if shrinkage is None else float(shrinkage)
    if delta < 0:
        raise ValueError("shrinkage must be nonnegative")
    Omega = Omega_raw + delta * np.eye(Omega_raw.shape[0])
    B = left @ right
    return ReducedVAR(B, left, right, Omega, N, delta)


def dmd_fit(pair: SnapshotPair, N: int, shrinkage: float | None = None, svd: TruncatedSVD | None = None) -> ReducedVAR:
    """Fit ``B = Yp V S^{-1} U'`` and the residual covariance with divisor J-1.

    ``svd`` may carry a precomputed truncation of ``pair.Y`` with at least N
    components (the rank-selection sweep shares one decomposition).
    """
    if N < 1 or N > min(pair.M, pair.J):
        raise RankTooLarge(f"N={N} exceeds min(M, J)={min(pair.M, pair.J)}")
    if svd is None:
        svd = truncated_svd(pair.Y, N)
    elif svd.rank > N:
        svd = svd.truncate(N)
    elif svd.rank < N:
        raise RankTooLarge("precomputed SVD has fewer than N components")
    left = (pair.Yp @ svd.V) / svd.S
    right = svd.U.T
    resid = pair.Yp - left @ (right @ pair.Y)
    Omega_raw = resid @ resid.T / (pair.J - 1)
    return _finish(left, right, Omega_raw, N, shrinkage)


def dmd_fit_moments(mom: SnapshotMoments, N: int, shrinkage: float | None = None) -> ReducedVAR:
    """Same estimator as :func:`dmd_fit`, from snapshot second moments.

    With ``Y Y' = U S^2 U'`` the fit is ``B = (Yp Y') U S^{-2} U'`` and the
    residual sum of squares collapses to ``Yp Yp' - (Yp Y' U) S^{-2} (Yp Y' U)'``.
    """
    M = mom.M
    if N < 1 or N > min(M, mom.J):
        raise RankTooLarge(f"N={N} exceeds min(M, J)={min(M, mom.J)}")
    evals, evecs = np.linalg.eigh(0.5 * (mom.gram + mom.gram.T))
    evals = evals[::-1]
    U = evecs[:, ::-1][:, :N]
    s2 = evals[:N]
    if s2[-1] <= _RANK_RTOL * max(M, mom.J) * max(evals[0], 0.0) or s2[-1] <= 0.0:
        raise RankTooLarge(f"snapshot matrix has numerical rank below N={N}")
    CU = mom.cross @ U
    left = CU / s2
    Omega_raw = (mom.gram_p - left @ CU.T) / (mom.J - 1)
    return _finish(left, U.T, Omega_raw, N, shrinkage)


def factor_omega(Omega: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor of a fitted innovation covariance."""
    try:
        L = linalg.cholesky(Omega, lower=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularOmega("residual covariance is not positive definite; use a longer simulation or shrinkage") from exc
    d = np.diag(L) ** 2
    if d.min() <= 1e-13 * max(float(np.max(np.diag(Omega))), np.finfo(float).tiny):
        raise SingularOmega("residual covariance is numerically singular; use a longer simulation or shrinkage")
    return L


def dmd_loglik(var: ReducedVAR, data: PanelData | np.ndarray) -> float:
    """Gaussian VAR(1) log-likelihood of the observed panel under a fitted model."""
    Y = data.Y if isinstance(data, PanelData) else np.asarray(data, dtype=float)
    M, T = Y.shape
    if M != var.M:
        raise DimensionMismatch(f"data has {M} rows, fitted VAR has {var.M}")
    if T < 2:
        raise PanelTooShort("need at least two periods")
    L = factor_omega(var.Omega)
    z = linalg.solve_triangular(L, var.residuals(Y), lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    n = T - 1
    return float(-0.5 * (n * (M * LOG_2PI + logdet) + np.sum(z * z)))
