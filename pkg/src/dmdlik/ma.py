"""Moving-average panels assembled from sequence-space Jacobians.

A panel of M micro series responds to r fundamental shocks through

    c_t = c_ss + sum_j Psi_j eps_{t-j},     Psi_j = sum_p J^c_p F^j I^p_e

where ``J^c_p`` (M x H) holds the gradients of each series with respect to the
future path of aggregate input p, ``I^p_e`` (H x r) the impulse responses of
that input to the shocks, and ``F`` shifts a sequence one period forward.
When a shock only comes with an AR(1) coefficient, its input responses are
built from general-equilibrium Jacobians ``J^p_x`` (H x H) applied to the
geometric impulse ``(1, rho, rho^2, ...)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import rng
from .dfm import PanelData, StateSpaceModel
from .errors import DimensionMismatch, InconsistentHorizon, ModelError, ZeroDenominator

DEFAULT_HORIZON = 300
TAIL_WARN_RATIO = 0.01


@dataclass(frozen=True)
class MARepresentation:
    """Truncated MA coefficients stacked as an (H, M, r) array."""

    Psi: np.ndarray
    c_ss: np.ndarray | None = None

    def __post_init__(self):
        Psi = np.array(self.Psi, dtype=float)
        if Psi.ndim != 3:
            raise DimensionMismatch(f"Psi must be (H, M, r), got shape {Psi.shape}")
        Psi.setflags(write=False)
        object.__setattr__(self, "Psi", Psi)
        if self.c_ss is None:
            c = np.zeros(Psi.shape[1])
        else:
            c = np.array(self.c_ss, dtype=float).reshape(-1)
            if c.shape != (Psi.shape[1],):
                raise DimensionMismatch("c_ss must have length M")
        c.setflags(write=False)
        object.__setattr__(self, "c_ss", c)

    @property
    def H(self) -> int:
        return self.Psi.shape[0]

    @property
    def M(self) -> int:
        return self.Psi.shape[1]

    @property
    def r(self) -> int:
        return self.Psi.shape[2]

    def tail_ratio(self) -> float:
        norms = np.linalg.norm(self.Psi.reshape(self.H, -1), axis=1)
        top = norms.max()
        return 0.0 if top == 0 else float(norms[-1] / top)

    def truncation_suspect(self) -> bool:
        return self.tail_ratio() > TAIL_WARN_RATIO


@dataclass(frozen=True)
class JacobianSet:
    """Inputs for :func:`assemble_ma`.

    ``policy[p]`` is the M x H gradient matrix of input p.  For each input the
    impulse responses come either from ``irf[p]`` (H x r, columns ordered as
    ``shocks``) or are built as ``ge[(p, x)] @ ar1_irf(rho[x])`` per shock x.
    A missing ``ge[(p, x)]`` means p does not respond to x, except when p is x
    itself, which uses the identity.
    """

    policy: dict[str, np.ndarray]
    shocks: tuple[str, ...]
    rho: dict[str, float] = field(default_factory=dict)
    ge: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)
    irf: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def inputs(self) -> list[str]:
        return list(self.policy)

    @property
    def M(self) -> int:
        return next(iter(self.policy.values())).shape[0]

    @property
    def H(self) -> int:
        return next(iter(self.policy.values())).shape[1]

    @property
    def r(self) -> int:
        return len(self.shocks)

    def validate(self):
        if not self.policy:
            raise DimensionMismatch("at least one input is required")
        M, H, r = self.M, self.H, self.r
        for p, Jc in self.policy.items():
            if Jc.ndim != 2 or Jc.shape[0] != M:
                raise DimensionMismatch(f"policy[{p!r}] must be {M} x H, got {Jc.shape}")
            if Jc.shape[1] != H:
                raise InconsistentHorizon(f"policy[{p!r}] has horizon {Jc.shape[1]}, expected {H}")
        for (p, x), Jg in self.ge.items():
            if Jg.shape != (H, H):
                raise InconsistentHorizon(f"ge[{p!r}, {x!r}] must be {H} x {H}, got {Jg.shape}")
            if x not in self.shocks:
                raise DimensionMismatch(f"ge entry refers to unknown shock {x!r}")
        for p, I in self.irf.items():
            if I.shape != (H, r):
                raise InconsistentHorizon(f"irf[{p!r}] must be {H} x {r}, got {I.shape}")
        for p in self.policy:
            if p in self.irf:
                continue
            for x in self.shocks:
                if x not in self.rho:
                    raise DimensionMismatch(f"input {p!r} needs rho for shock {x!r} (or an explicit irf)")

    def input_irf(self, p: str, H: int | None = None) -> np.ndarray:
        """H x r impulse responses of input p to the shocks."""
        H = self.H if H is None else H
        if p in self.irf:
            return np.asarray(self.irf[p], dtype=float)[:H]
        out = np.zeros((H, self.r))
        for k, x in enumerate(self.shocks):
            base = ar1_irf(self.rho[x], H)
            if (p, x) in self.ge:
                out[:, k] = np.asarray(self.ge[(p, x)], dtype=float)[:H, :H] @ base
            elif p == x:
                out[:, k] = base
        return out


def shift_forward(X: np.ndarray, j: int) -> np.ndarray:
    """``F^j X``: row i becomes row i+j, zero past the horizon."""
    X = np.asarray(X, dtype=float)
    H = X.shape[0]
    if j < 0:
        raise ValueError("j must be nonnegative")
    out = np.zeros_like(X)
    if j < H:
        out[: H - j] = X[j:]
    return out


def shift_matrix(H: int) -> np.ndarray:
    """H x H matrix of ``F`` (ones on the first superdiagonal)."""
    return np.eye(H, k=1)


def ar1_irf(rho: float, H: int) -> np.ndarray:
    if not -1.0 < rho < 1.0:
        raise ModelError(f"AR(1) coefficient must lie in (-1, 1), got {rho}")
    return rho ** np.arange(H, dtype=float)


def assemble_ma(jac: JacobianSet, H: int | None = None, c_ss=None) -> MARepresentation:
    """``Psi_j = sum_p J^c_p F^j I^p_e`` for j = 0..H-1."""
    jac.validate()
    H = jac.H if H is None else int(H)
    if H > jac.H:
        raise InconsistentHorizon(f"requested horizon {H} exceeds the Jacobian horizon {jac.H}")
    Psi = np.zeros((H, jac.M, jac.r))
    for p, Jc in jac.policy.items():
        Jc = np.asarray(Jc, dtype=float)[:, :H]
        I = jac.input_irf(p, H)
        for j in range(H):
            # J F^j I = J[:, :H-j] @ I[j:]
            Psi[j] += Jc[:, : H - j] @ I[j:]
    ma = MARepresentation(Psi, c_ss)
    if ma.truncation_suspect():
        warnings.warn(
            f"MA tail norm is {ma.tail_ratio():.3g} of the peak; horizon H={H} may be too short",
            RuntimeWarning,
            stacklevel=2,
        )
    return ma


def ma_from_state_space(model: StateSpaceModel, H: int = DEFAULT_HORIZON) -> MARepresentation:
    """MA form of a DFM's signal: ``Psi_j = G A^j C`` (measurement error excluded)."""
    Psi = np.empty((H, model.M, model.N))
    P = model.C.copy()
    for j in range(H):
        Psi[j] = model.G @ P
        P = model.A @ P
    return MARepresentation(Psi)


def _convolve(Psi: np.ndarray, eps: np.ndarray, block: int = 2048) -> np.ndarray:
    # c_t = sum_j Psi_j eps[:, t + H - 1 - j]; eps is r x (T + H - 1)
    H, M, r = Psi.shape
    T = eps.shape[1] - H + 1
    P2 = Psi[::-1].transpose(1, 0, 2).reshape(M, H * r)
    out = np.empty((M, T))
    win = sliding_window_view(eps, H, axis=1)  # (r, T, H): win[k, t, i] = eps[k, t + i]
    for s in range(0, T, block):
        e = min(T, s + block)
        lag = win[:, s:e, :].transpose(2, 0, 1).reshape(H * r, e - s)
        out[:, s:e] = P2 @ lag
    return out


def simulate_micro_panel(
    ma: MARepresentation,
    T: int,
    seed: int,
    meas_error_share: float = 0.0,
    sigma_v: float | None = None,
) -> PanelData:
    """Simulate ``c_t`` for t = 1..T with pre-sample shocks drawn (stationary start).

    Measurement error is either given directly by ``sigma_v`` or calibrated so
    that its variance is ``meas_error_share`` of the average total variance.
    """
    if T < 1:
        raise ValueError("T must be positive")
    if sigma_v is None and not 0.0 <= meas_error_share < 1.0:
        raise ValueError("meas_error_share must lie in [0, 1)")
    H, M, r = ma.Psi.shape
    eps = rng.generator(seed, rng.MA_SHOCKS).standard_normal((T + H - 1, r)).T
    c = _convolve(ma.Psi, np.ascontiguousarray(eps))
    if sigma_v is None:
        share = float(meas_error_share)
        sigma_v = 0.0
        if share > 0.0:
            signal_var = float(np.mean(np.var(c, axis=1)))
            sigma_v = float(np.sqrt(share / (1.0 - share) * signal_var))
    if sigma_v > 0.0:
        c = c + sigma_v * rng.generator(seed, rng.MA_MEASUREMENT).standard_normal((T, M)).T
    c += ma.c_ss[:, None]
    return PanelData(c, seed=seed, burn_in=0, meta={"sigma_v": float(sigma_v)})


def commutability_slackness(J: np.ndarray) -> float:
    """``||F J - J F||_F / ||F J||_F`` for a square Jacobian ``J``."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise DimensionMismatch("J must be square")
    FJ = shift_forward(J, 1)  # F @ J
    JF = np.zeros_like(J)
    JF[:, 1:] = J[:, :-1]  # J @ F
    denom = np.linalg.norm(FJ)
    if denom == 0.0:
        raise ZeroDenominator("F J is zero")
    return float(np.linalg.norm(FJ - JF) / denom)


def toeplitz_upper(coeffs, H: int) -> np.ndarray:
    """Upper-triangular Toeplitz matrix ``sum_k coeffs[k] F^k`` (commutes with F)."""
    coeffs = np.asarray(coeffs, dtype=float)
    out = np.zeros((H, H))
    for k, c in enumerate(coeffs[:H]):
        out += c * np.eye(H, k=k)
    return out
