"""Inner loops shared by the filtering and simulation code.

Each kernel is written once in a numba-compatible numpy subset.  The same
source runs either compiled (``NUMBA``) or as plain numpy (``NUMPY``);
:func:`backend` picks one according to ``DMDLIK_NUMBA``.  All kernels work in
the N-dimensional factor space: the M-dimensional observation algebra is
folded in beforehand through ``W = G'G`` (the measurement noise is always
``sigma_v**2 * I``), so cost per step does not grow with M.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np

from . import _accel


def _riccati(A, CC, W, s2, S0, tol, max_iter):
    # S <- A S A' + CC - A S W (S W + s2 I)^{-1} S A'
    n = A.shape[0]
    At = np.ascontiguousarray(A.T)
    eye = np.eye(n)
    S = S0.copy()
    delta = np.inf
    for it in range(1, max_iter + 1):
        D = S @ W + s2 * eye
        X = np.linalg.solve(D, S @ At)
        AS = A @ S
        S_new = AS @ At + CC - AS @ W @ X
        S_new = 0.5 * (S_new + S_new.T)
        delta = np.max(np.abs(S_new - S))
        S = S_new
        if not np.isfinite(delta):
            return S, it, delta
        if delta <= tol:
            return S, it, delta
    return S, max_iter, delta


def _lyapunov(A, CC, tol, max_iter):
    At = np.ascontiguousarray(A.T)
    P = CC.copy()
    delta = np.inf
    for it in range(1, max_iter + 1):
        P_new = A @ P @ At + CC
        P_new = 0.5 * (P_new + P_new.T)
        delta = np.max(np.abs(P_new - P))
        P = P_new
        if not np.isfinite(delta):
            return P, it, delta
        if delta <= tol:
            return P, it, delta
    return P, max_iter, delta


def _state_path(A, C, w, x0):
    # x_{t+1} = A x_t + C w_{t+1}; w is (T, n) and row t of the output is x_{t+1}
    T = w.shape[0]
    out = np.empty((T, A.shape[0]))
    x = x0.copy()
    Cw = w @ np.ascontiguousarray(C.T)
    for t in range(T):
        x = A @ x + Cw[t]
        out[t] = x
    return out


def _kalman_lowrank(A, CC, W, Z, yy, s2, m, x0, P0):
    # Prediction-error terms of the Kalman filter with R = s2*I, s2 > 0.
    # Z[t] = G' y_t (Z is (T, n)) and yy[t] = y_t' y_t.  Returns (logdet F_t, e_t' F_t^{-1} e_t,
    # index of first non-PD step or -1).
    T, n = Z.shape
    At = np.ascontiguousarray(A.T)
    eye = np.eye(n)
    logdet = np.empty(T)
    quad = np.empty(T)
    x = x0.copy()
    P = P0.copy()
    log_s2 = np.log(s2)
    for t in range(T):
        z = Z[t]
        Wx = W @ x
        ge = z - Wx
        ee = yy[t] - 2.0 * (z @ x) + x @ Wx
        D = s2 * eye + P @ W
        sign, ld = np.linalg.slogdet(D)
        if sign <= 0.0:
            return logdet, quad, t
        u = np.linalg.solve(D, P @ ge)
        logdet[t] = m * log_s2 + ld - n * log_s2
        quad[t] = (ee - ge @ u) / s2
        Dt = np.ascontiguousarray(D.T)
        v = np.linalg.solve(Dt, ge)
        x = A @ (x + P @ v)
        Pf = P - P @ np.linalg.solve(Dt, W @ P)
        Pf = 0.5 * (Pf + Pf.T)
        P = A @ Pf @ At + CC
        P = 0.5 * (P + P.T)
    return logdet, quad, -1


NUMPY = SimpleNamespace(
    name="numpy",
    riccati=_riccati,
    lyapunov=_lyapunov,
    state_path=_state_path,
    kalman_lowrank=_kalman_lowrank,
)

if _accel.HAVE_NUMBA:
    NUMBA = SimpleNamespace(
        name="numba",
        riccati=_accel.njit(_riccati),
        lyapunov=_accel.njit(_lyapunov),
        state_path=_accel.njit(_state_path),
        kalman_lowrank=_accel.njit(_kalman_lowrank),
    )
else:  # pragma: no cover
    NUMBA = None


def backend(name: str | None = None):
    """Return the kernel namespace: ``"numba"``, ``"numpy"`` or the env default."""
    if name is None:
        return NUMBA if _accel.USE_NUMBA else NUMPY
    if name == "numpy":
        return NUMPY
    if name == "numba":
        if NUMBA is None:
            raise RuntimeError("numba is not installed")
        return NUMBA
    raise ValueError(f"unknown backend {name!r}")


def f64(a) -> np.ndarray:
    """Contiguous float64 copy-free view where possible (kernels need it)."""
    return np.ascontiguousarray(a, dtype=np.float64)
