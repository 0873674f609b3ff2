"""Linear-Gaussian dynamic factor models.

The model is

    x_{t+1} = A x_t + C w_{t+1},   w ~ N(0, I_N)
    y_t     = G x_t + v_t,         v ~ N(0, sigma_v^2 I_M)

with N latent factors and M observables.  This module solves its steady-state
filter (the innovations form), simulates panels and evaluates two
likelihoods: the exact one from the time-varying Kalman filter and the
first-order VAR approximation ``y_t = B1 y_{t-1} + a_t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import kernels, rng
from .errors import DimensionMismatch, ModelError, NonConvergence, NumericalSingularity

LOG_2PI = np.log(2.0 * np.pi)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10**6


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim == 0 and ndim == 2:
        arr = arr.reshape(1, 1)
    if arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StateSpaceModel:
    """DFM system matrices.

    Only homoscedastic measurement error is supported, so ``sigma_v`` must be a
    scalar.  Stationarity of ``A`` is enforced at construction; the rank
    conditions of the large-M theory are reported by
    :meth:`assumption_violations` but not enforced, because degenerate models
    (``A = 0``, ``G = 0``) are legitimate test cases.
    """

    A: np.ndarray
    C: np.ndarray
    G: np.ndarray
    sigma_v: float

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        C = _frozen(self.C, 2, "C")
        G = _frozen(self.G, 2, "G")
        if np.ndim(self.sigma_v) != 0:
            raise ModelError("sigma_v must be a scalar (R = sigma_v^2 I); heteroscedastic R is not supported")
        sigma_v = float(self.sigma_v)
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if C.shape != (n, n):
            raise DimensionMismatch(f"C must be {n}x{n}, got {C.shape}")
        if G.ndim != 2 or G.shape[1] != n:
            raise DimensionMismatch(f"G must have {n} columns, got {G.shape}")
        if G.shape[0] < n:
            raise DimensionMismatch(f"need M >= N, got M={G.shape[0]}, N={n}")
        if not (np.isfinite(sigma_v) and sigma_v >= 0.0):
            raise ModelError(f"sigma_v must be finite and nonnegative, got {sigma_v}")
        for name, m in (("A", A), ("C", C), ("G", G)):
            if not np.all(np.isfinite(m)):
                raise ModelError(f"{name} has non-finite entries")
        rho = spectral_radius(A)
        if rho >= 1.0:
            raise ModelError(f"A is not stable: spectral radius {rho:.6g} >= 1")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "sigma_v", sigma_v)

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> int:
        return self.G.shape[0]

    @property
    def noise_var(self) -> float:
        return self.sigma_v**2

    def assumption_violations(self) -> list[str]:
        out = []
        n = self.N
        if np.linalg.matrix_rank(self.G) < n:
            out.append("G does not have full column rank")
        if np.linalg.matrix_rank(self.A) < n:
            out.append("A does not have full rank")
        if self.sigma_v <= 0.0:
            out.append("sigma_v is zero")
        return out

    def with_loadings(self, G) -> "StateSpaceModel":
        return StateSpaceModel(self.A, self.C, G, self.sigma_v)


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(A))))


@dataclass(frozen=True)
class InnovationsForm:
    """Steady-state filter objects of a :class:`StateSpaceModel`.

    ``K`` is N x M, ``Sigma_inf`` the N x N one-step state forecast-error
    covariance, ``Omega = G Sigma_inf G' + sigma_v^2 I`` and ``B1 = G K``.
    """

    K: np.ndarray
    Sigma_inf: np.ndarray
    Omega: np.ndarray
    B1: np.ndarray
    riccati_residual: float
    iterations: int = 0


@dataclass(frozen=True)
class PanelData:
    """An M x T panel; column t is the observation y_t."""

    Y: np.ndarray
    seed: int | None = None
    burn_in: int = 0
    latent: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        Y = _frozen(self.Y, 2, "Y")
        if Y.shape[1] < 1 or Y.shape[0] < 1:
            raise DimensionMismatch(f"panel must be nonempty, got {Y.shape}")
        if not np.all(np.isfinite(Y)):
            raise ValueError("panel has missing or non-finite entries")
        object.__setattr__(self, "Y", Y)
        if self.latent is not None:
            X = _frozen(self.latent, 2, "latent")
            if X.shape[1] != Y.shape[1]:
                raise DimensionMismatch("latent path must have the same T as the panel")
            object.__setattr__(self, "latent", X)

    @property
    def M(self) -> int:
        return self.Y.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    def demeaned(self) -> "PanelData":
        Y = self.Y - self.Y.mean(axis=1, keepdims=True)
        return PanelData(Y, self.seed, self.burn_in, self.latent, dict(self.meta))


def _noise_gram(model: StateSpaceModel) -> np.ndarray:
    return kernels.f64(model.G.T @ model.G)


def solve_riccati(
    model: StateSpaceModel,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    backend: str | None = None,
) -> InnovationsForm:
    """Fixed-point iteration for the steady-state Kalman filter.

    Starts from ``Sigma = C C'`` and iterates the Riccati map until the
    max-abs change is at most ``tol``.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter >= 1")
    k = kernels.backend(backend)
    A, C, G = model.A, model.C, model.G
    s2 = model.noise_var
    CC = kernels.f64(C @ C.T)
    W = _noise_gram(model)
    try:
        S, n_iter, delta = k.riccati(kernels.f64(A), CC, W, s2, CC.copy(), float(tol), int(max_iter))
    except Exception as exc:  # LinAlgError from numpy or numba
        raise NumericalSingularity(f"Riccati iteration hit a singular system: {exc}") from exc
    if not np.isfinite(delta):
        raise NonConvergence("Riccati iteration diverged")
    if delta > tol:
        raise NonConvergence(f"Riccati iteration did not converge in {max_iter} steps (last change {delta:.3g})")
    S = 0.5 * (S + S.T)
    try:
        # G' Omega^{-1} = (W S + s2 I)^{-1} G'
        K = A @ S @ np.linalg.solve(W @ S + s2 * np.eye(model.N), G.T)
    except np.linalg.LinAlgError as exc:
        raise NumericalSingularity("innovation covariance is singular") from exc
    Omega = G @ S @ G.T + s2 * np.eye(model.M)
    Omega = 0.5 * (Omega + Omega.T)
    L = A - K @ G
    resid = C @ C.T + s2 * (K @ K.T) + L @ S @ L.T - S
    for a in (K, S, Omega):
        a.setflags(write=False)
    B1 = G @ K
    B1.setflags(write=False)
    return InnovationsForm(K, S, Omega, B1, float(np.max(np.abs(resid))), int(n_iter))


def filter_gap(model: StateSpaceModel, innov: InnovationsForm) -> np.ndarray:
    """``A - K G``, which vanishes as the cross-section grows."""
    return model.A - innov.K @ model.G


def var_coefficient(model: StateSpaceModel, innov: InnovationsForm, j: int) -> np.ndarray:
    """Coefficient on ``y_{t-j}`` in the infinite-order VAR: ``G (A - KG)^{j-1} K``."""
    if j < 1:
        raise ValueError("j must be >= 1")
    if innov.K.shape != (model.N, model.M):
        raise DimensionMismatch("innovations form does not match the model")
    if j == 1:
        return innov.B1
    L = np.linalg.matrix_power(filter_gap(model, innov), j - 1)
    return model.G @ (L @ innov.K)


def stationary_state_cov(
    model: StateSpaceModel,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    backend: str | None = None,
) -> np.ndarray:
    """Fixed point of ``P = A P A' + C C'``."""
    k = kernels.backend(backend)
    CC = kernels.f64(model.C @ model.C.T)
    P, n_iter, delta = k.lyapunov(kernels.f64(model.A), CC, float(tol), int(max_iter))
    if not np.isfinite(delta) or delta > tol:
        raise NonConvergence(f"Lyapunov iteration did not converge in {max_iter} steps")
    return 0.5 * (P + P.T)


def simulate_dfm(
    model: StateSpaceModel,
    T: int,
    burn_in: int = 0,
    seed: int = 0,
    keep_latent: bool = False,
    backend: str | None = None,
) -> PanelData:
    """Simulate ``T`` periods after discarding ``burn_in``, starting at ``x_0 = 0``."""
    if T < 1 or burn_in < 0:
        raise ValueError("T must be positive and burn_in nonnegative")
    X = latent_path(model, T, burn_in, seed, backend)
    v = rng.generator(seed, rng.MEASUREMENT).standard_normal((T, model.M))
    Y = X @ model.G.T
    if model.sigma_v != 0.0:
        Y += model.sigma_v * v
    return PanelData(
        Y.T,
        seed=seed,
        burn_in=burn_in,
        latent=X.T if keep_latent else None,
    )


def latent_path(model: StateSpaceModel, T: int, burn_in: int, seed: int, backend: str | None = None) -> np.ndarray:
    """The retained factor path as a (T, N) array; same draws as :func:`simulate_dfm`."""
    k = kernels.backend(backend)
    w = rng.generator(seed, rng.STATE_SHOCKS).standard_normal((burn_in + T, model.N))
    X = k.state_path(kernels.f64(model.A), kernels.f64(model.C), w, np.zeros(model.N))
    return X[burn_in:]


def _check_panel(model: StateSpaceModel, panel: PanelData):
    if panel.M != model.M:
        raise DimensionMismatch(f"panel has {panel.M} rows, model has M={model.M}")


def kalman_terms(model: StateSpaceModel, panel: PanelData, backend: str | None = None) -> np.ndarray:
    """Per-period log-likelihood contributions from the time-varying Kalman filter.

    The filter starts at ``x_hat = 0`` with the stationary state covariance, so
    the sum is the exact likelihood of a stationary sample.
    """
    _check_panel(model, panel)
    P0 = stationary_state_cov(model, backend=backend)
    Y = panel.Y
    M = model.M
    if model.sigma_v > 0.0:
        k = kernels.backend(backend)
        Z = kernels.f64((model.G.T @ Y).T)
        yy = kernels.f64(np.einsum("mt,mt->t", Y, Y))
        logdet, quad, bad = k.kalman_lowrank(
            kernels.f64(model.A),
            kernels.f64(model.C @ model.C.T),
            _noise_gram(model),
            Z,
            yy,
            model.noise_var,
            M,
            np.zeros(model.N),
            kernels.f64(P0),
        )
        if bad >= 0:
            raise NumericalSingularity(f"forecast-error covariance not positive definite at t={bad + 1}")
    else:
        logdet, quad = _kalman_dense(model, Y, P0)
    return -0.5 * (M * LOG_2PI + logdet + quad)


def _kalman_dense(model: StateSpaceModel, Y: np.ndarray, P0: np.ndarray):
    # zero measurement error: F_t = G P G' must itself be PD
    A, G = model.A, model.G
    CC = model.C @ model.C.T
    T = Y.shape[1]
    logdet = np.empty(T)
    quad = np.empty(T)
    x = np.zeros(model.N)
    P = P0
    for t in range(T):
        e = Y[:, t] - G @ x
        F = G @ P @ G.T
        try:
            cf = linalg.cho_factor(F, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalSingularity(f"forecast-error covariance not positive definite at t={t + 1}") from exc
        logdet[t] = 2.0 * np.sum(np.log(np.diag(cf[0])))
        quad[t] = e @ linalg.cho_solve(cf, e)
        PG = P @ G.T
        K = A @ linalg.cho_solve(cf, PG.T).T
        x = A @ x + K @ e
        P = A @ P @ A.T + CC - K @ F @ K.T
        P = 0.5 * (P + P.T)
    return logdet, quad


def kalman_loglik(
    model: StateSpaceModel,
    panel: PanelData,
    conditional: bool = False,
    backend: str | None = None,
) -> float:
    """Exact Gaussian log-likelihood by the prediction-error decomposition.

    With ``conditional=True`` the t=1 term is dropped, which puts the value on
    the same sample as the VAR likelihoods (they condition on ``y_1``).
    """
    terms = kalman_terms(model, panel, backend)
    if conditional:
        terms = terms[1:]
    return float(np.sum(terms))


def gaussian_var1_loglik(B: np.ndarray, Omega: np.ndarray, Y: np.ndarray, error=NumericalSingularity) -> float:
    """Sum over t=2..T of the N(B y_{t-1}, Omega) log density of y_t."""
    M, T = Y.shape
    if B.shape != (M, M) or Omega.shape != (M, M):
        raise DimensionMismatch(f"coefficients do not match a panel with M={M}")
    if T < 2:
        raise ValueError("need at least two periods")
    try:
        L = linalg.cholesky(Omega, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise error("innovation covariance is not positive definite") from exc
    resid = Y[:, 1:] - B @ Y[:, :-1]
    z = linalg.solve_triangular(L, resid, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    n = T - 1
    return float(-0.5 * (n * (M * LOG_2PI + logdet) + np.sum(z * z)))


def var1_loglik(model: StateSpaceModel, innov: InnovationsForm, panel: PanelData) -> float:
    """Likelihood of the first-order VAR ``y_t = B1 y_{t-1} + a_t``, ``a_t ~ N(0, Omega)``."""
    _check_panel(model, panel)
    return gaussian_var1_loglik(innov.B1, innov.Omega, panel.Y)
