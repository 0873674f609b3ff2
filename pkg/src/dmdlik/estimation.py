"""Simulation-based likelihood estimation.

The likelihood of an observed panel at parameters theta is approximated by
simulating a long panel from the model at theta, fitting a rank-N VAR(1) to it
by DMD, and scoring the observed data under that VAR.  On top of this
objective sit a box-constrained simplex MLE, an adaptive random-walk
Metropolis-Hastings sampler, a Whittle frequency-domain likelihood for models
in moving-average form, and a Monte Carlo harness.

Rejected parameter values (unstable models, singular fitted covariances) score
``-inf`` rather than raising, so optimizer and sampler treat them alike.
"""

from __future__ import annotations

import itertools
import re
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from . import kernels, rng
from .dfm import LOG_2PI, PanelData, StateSpaceModel, simulate_dfm
from .dmd import SnapshotMoments, dmd_fit_moments, dmd_loglik, snapshot_moments
from .errors import (
    DimensionMismatch,
    InitInvalid,
    ModelError,
    NumericalError,
    RankTooLarge,
    SingularSpectrum,
)
from .ma import DEFAULT_HORIZON, JacobianSet, MARepresentation, assemble_ma, ma_from_state_space, simulate_micro_panel
from .optimize import nelder_mead_max

OK, UNSTABLE, SINGULAR = "ok", "unstable", "singular"


# --------------------------------------------------------------------------- parameters


@dataclass(frozen=True)
class ParameterVector:
    names: tuple[str, ...]
    values: np.ndarray
    bounds: np.ndarray  # d x 2

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        values = np.array(self.values, dtype=float).reshape(-1)
        bounds = np.array(self.bounds, dtype=float).reshape(-1, 2)
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        if not (len(names) == values.size == bounds.shape[0]):
            raise DimensionMismatch("names, values and bounds must have the same length")
        if np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ValueError("each bound must satisfy lo < hi")
        if not np.all(np.isfinite(values)) or np.any(values < bounds[:, 0]) or np.any(values > bounds[:, 1]):
            raise InitInvalid(f"parameter values {values} are outside their bounds")
        values.setflags(write=False)
        bounds.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bounds", bounds)

    @property
    def d(self) -> int:
        return self.values.size

    @property
    def lo(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def hi(self) -> np.ndarray:
        return self.bounds[:, 1]

    def in_bounds(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def with_values(self, x) -> "ParameterVector":
        return ParameterVector(self.names, x, self.bounds)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def _theta_dict(theta) -> dict[str, float]:
    return theta.as_dict() if isinstance(theta, ParameterVector) else dict(theta)


# --------------------------------------------------------------------------- parameter maps

_ENTRY = re.compile(r"^([ACG])\[(\d+),\s*(\d+)\]$")


@dataclass(frozen=True)
class DFMMap:
    """Overwrite entries of a base state-space model with parameter values.

    ``targets[name]`` lists the slots a parameter fills: ``"A[i,j]"``,
    ``"C[i,j]"``, ``"G[i,j]"`` or ``"sigma_v"``.
    """

    base: StateSpaceModel
    targets: dict[str, tuple[str, ...]]

    def __post_init__(self):
        for name, slots in self.targets.items():
            for s in slots:
                m = _ENTRY.match(s)
                if s == "sigma_v":
                    continue
                if m is None:
                    raise ValueError(f"unknown target {s!r} for parameter {name!r}")
                arr = getattr(self.base, m.group(1))
                i, j = int(m.group(2)), int(m.group(3))
                if i >= arr.shape[0] or j >= arr.shape[1]:
                    raise DimensionMismatch(f"target {s!r} is outside the {arr.shape} matrix")

    def __call__(self, theta: dict[str, float]) -> StateSpaceModel:
        mats = {"A": self.base.A.copy(), "C": self.base.C.copy(), "G": self.base.G.copy()}
        sigma_v = self.base.sigma_v
        for name, slots in self.targets.items():
            value = float(theta[name])
            for s in slots:
                if s == "sigma_v":
                    sigma_v = value
                    continue
                m = _ENTRY.match(s)
                mats[m.group(1)][int(m.group(2)), int(m.group(3))] = value
        return StateSpaceModel(mats["A"], mats["C"], mats["G"], sigma_v)


@dataclass(frozen=True)
class MAMap:
    """Rebuild an MA representation from a Jacobian set.

    Slots are ``"rho:<shock>"`` (AR(1) coefficient), ``"sigma:<shock>"`` (shock
    standard deviation, scaling that shock's MA column), ``"sigma_v"`` and
    ``"c_ss"`` (common steady-state level).
    """

    jac: JacobianSet
    targets: dict[str, tuple[str, ...]]
    H: int | None = None
    sigma: dict[str, float] = field(default_factory=dict)
    sigma_v: float = 0.0
    c_ss: np.ndarray | None = None

    def __post_init__(self):
        for name, slots in self.targets.items():
            for s in slots:
                kind, _, shock = s.partition(":")
                if s in ("sigma_v", "c_ss"):
                    continue
                if kind not in ("rho", "sigma") or shock not in self.jac.shocks:
                    raise ValueError(f"unknown target {s!r} for parameter {name!r}")

    def __call__(self, theta: dict[str, float]) -> tuple[MARepresentation, float]:
        rho = dict(self.jac.rho)
        sigma = {x: float(self.sigma.get(x, 1.0)) for x in self.jac.shocks}
        sigma_v = float(self.sigma_v)
        c_ss = self.c_ss
        for name, slots in self.targets.items():
            value = float(theta[name])
            for s in slots:
                kind, _, shock = s.partition(":")
                if s == "sigma_v":
                    sigma_v = value
                elif s == "c_ss":
                    c_ss = np.full(self.jac.M, value)
                elif kind == "rho":
                    rho[shock] = value
                else:
                    sigma[shock] = value
        if sigma_v < 0:
            raise ModelError("sigma_v must be nonnegative")
        ma = assemble_ma(replace(self.jac, rho=rho), self.H, c_ss)
        scale = np.array([sigma[x] for x in self.jac.shocks])
        return MARepresentation(ma.Psi * scale, ma.c_ss), sigma_v


# --------------------------------------------------------------------------- binding


class _DrawCache:
    """Per-seed random draws and their noise moments for the DFM fast path."""

    def __init__(self, size: int = 2):
        self.size = size
        self._lock = threading.Lock()
        self._store: OrderedDict = OrderedDict()

    def get(self, key, build):
        with self._lock:
            if key in self._store:
                self._store.move_to_end(key)
                return self._store[key]
        value = build()
        with self._lock:
            self._store[key] = value
            while len(self._store) > self.size:
                self._store.popitem(last=False)
        return value


@dataclass(frozen=True)
class SpectralModel:
    """Spectral density ``H(w) Sigma_e H(w)* + sigma_v^2 I`` of an MA panel."""

    ma: MARepresentation
    Sigma_e: np.ndarray
    sigma_v: float

    def __post_init__(self):
        S = np.array(self.Sigma_e, dtype=float)
        if S.shape != (self.ma.r, self.ma.r):
            raise DimensionMismatch(f"Sigma_e must be {self.ma.r} x {self.ma.r}")
        if not np.allclose(S, S.T):
            raise ModelError("Sigma_e must be symmetric")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise ModelError("Sigma_e must be positive definite") from exc
        if not np.isfinite(self.sigma_v) or self.sigma_v < 0:
            raise ModelError("sigma_v must be finite and nonnegative")
        object.__setattr__(self, "Sigma_e", S)


@dataclass(frozen=True)
class GeneratorBinding:
    """How parameters become simulated panels for the likelihood approximation.

    ``map`` takes a name -> value dict and returns a :class:`StateSpaceModel`
    (kind ``"dfm"``) or an ``(MARepresentation, sigma_v)`` pair (kind
    ``"ma"``).  Each evaluation simulates ``J + 1`` periods.  With
    ``common_random_numbers`` every evaluation reuses ``base_seed``; otherwise
    each call draws a fresh seed derived from ``base_seed`` and a call counter.
    ``demean`` removes row means from both simulated and observed panels; it
    defaults to off for DFMs (zero-mean by construction) and on for MA panels.
    """

    kind: str
    map: Callable
    J: int
    N: int
    base_seed: int = 0
    common_random_numbers: bool = True
    burn_in: int = 200
    demean: bool | None = None
    shrinkage: float | None = None
    horizon: int = DEFAULT_HORIZON
    _cache: _DrawCache = field(default_factory=_DrawCache, init=False, compare=False, repr=False)
    _calls: itertools.count = field(default_factory=itertools.count, init=False, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("dfm", "ma"):
            raise ValueError(f"binding kind must be 'dfm' or 'ma', got {self.kind!r}")
        if self.J < 2 or self.N < 1:
            raise ValueError("need J >= 2 and N >= 1")
        if self.demean is None:
            object.__setattr__(self, "demean", self.kind == "ma")

    def model(self, theta):
        return self.map(_theta_dict(theta))

    def next_seed(self) -> int:
        if self.common_random_numbers:
            return int(self.base_seed)
        return rng.derive_seed(self.base_seed, next(self._calls))

    def simulate(self, theta, T: int, seed: int, burn_in: int | None = None) -> PanelData:
        """A T-period panel at ``theta`` (burn-in applies to DFMs only)."""
        model = self.model(theta)
        if self.kind == "dfm":
            return simulate_dfm(model, T, self.burn_in if burn_in is None else burn_in, seed)
        ma, sigma_v = model
        return simulate_micro_panel(ma, T, seed, sigma_v=sigma_v)

    def prepare(self, data: PanelData) -> PanelData:
        return data.demeaned() if self.demean else data

    def sim_moments(self, theta, seed: int | None = None) -> SnapshotMoments:
        seed = self.next_seed() if seed is None else seed
        model = self.model(theta)
        if self.kind == "dfm":
            return self._dfm_moments(model, seed)
        panel = self.prepare(self.simulate(theta, self.J + 1, seed))
        return snapshot_moments(panel)

    def _draws(self, model: StateSpaceModel, seed: int):
        T, M, N, burn = self.J + 1, model.M, model.N, self.burn_in

        def build():
            w = rng.generator(seed, rng.STATE_SHOCKS).standard_normal((burn + T, N))
            V = rng.generator(seed, rng.MEASUREMENT).standard_normal((T, M))
            J = T - 1
            VV0 = V[:J].T @ V[:J]
            VVp = VV0 - np.outer(V[0], V[0]) + np.outer(V[J], V[J])
            VV1 = V[1:].T @ V[:J]
            return w, V, VV0, VVp, VV1, V.sum(axis=0)

        return self._cache.get((seed, T, M, N, burn), build)

    def _dfm_moments(self, model: StateSpaceModel, seed: int) -> SnapshotMoments:
        # Moments of Z = X G' + s V computed blockwise, so the M-dimensional
        # noise only enters through cached products.  Same draws as simulate_dfm.
        w, V, VV0, VVp, VV1, sv = self._draws(model, seed)
        k = kernels.backend()
        X = k.state_path(kernels.f64(model.A), kernels.f64(model.C), w, np.zeros(model.N))[self.burn_in :]
        G, s = model.G, model.sigma_v
        J = self.J
        X0, X1 = X[:J], X[1:]
        GX0 = G @ (X0.T @ X0) @ G.T
        GXp = G @ (X1.T @ X1) @ G.T
        GX1 = G @ (X1.T @ X0) @ G.T
        if s != 0.0:
            XV = X.T @ V
            XV0 = XV - np.outer(X[J], V[J])
            XVp = XV - np.outer(X[0], V[0])
            T10 = G @ (X1.T @ V[:J])
            T01 = G @ (X0.T @ V[1:])
            a = G @ XV0
            b = G @ XVp
            gram = GX0 + s * (a + a.T) + s * s * VV0
            gram_p = GXp + s * (b + b.T) + s * s * VVp
            cross = GX1 + s * (T10 + T01.T) + s * s * VV1
        else:
            gram, gram_p, cross = GX0, GXp, GX1
        if self.demean:
            sx = X.sum(axis=0)
            tot = G @ sx + s * sv
            s0 = tot - (G @ X[J] + s * V[J])
            s1 = tot - (G @ X[0] + s * V[0])
            zbar = tot / (J + 1)
            zz = J * np.outer(zbar, zbar)
            gram = gram - np.outer(s0, zbar) - np.outer(zbar, s0) + zz
            gram_p = gram_p - np.outer(s1, zbar) - np.outer(zbar, s1) + zz
            cross = cross - np.outer(s1, zbar) - np.outer(zbar, s0) + zz
        return SnapshotMoments(gram, cross, gram_p, J)

    def spectral_model(self, theta) -> SpectralModel:
        model = self.model(theta)
        if self.kind == "dfm":
            return SpectralModel(ma_from_state_space(model, self.horizon), np.eye(model.N), model.sigma_v)
        ma, sigma_v = model
        return SpectralModel(ma, np.eye(ma.r), sigma_v)


# --------------------------------------------------------------------------- likelihoods


class LoglikEval(NamedTuple):
    value: float
    flag: str


def _guard(fn) -> LoglikEval:
    try:
        return LoglikEval(float(fn()), OK)
    except ModelError:
        return LoglikEval(-np.inf, UNSTABLE)
    except (NumericalError, RankTooLarge):
        return LoglikEval(-np.inf, SINGULAR)


def approx_loglik_eval(theta, data: PanelData, binding: GeneratorBinding, seed: int | None = None) -> LoglikEval:
    """Simulated-DMD log-likelihood with a status flag."""

    def run():
        mom = binding.sim_moments(theta, seed)
        if mom.M != data.M:
            raise DimensionMismatch(f"binding simulates M={mom.M} series, data has {data.M}")
        var = dmd_fit_moments(mom, binding.N, binding.shrinkage)
        return dmd_loglik(var, binding.prepare(data))

    return _guard(run)


def approx_loglik(theta, data: PanelData, binding: GeneratorBinding, seed: int | None = None) -> float:
    return approx_loglik_eval(theta, data, binding, seed).value


def whittle_loglik(data: PanelData | np.ndarray, model: SpectralModel) -> float:
    """Whittle log-likelihood over the nonzero Fourier frequencies.

    Rows are demeaned first, so the zero frequency carries no information and
    is skipped.  Conjugate symmetry folds frequencies j and T-j together.
    """
    Y = data.Y if isinstance(data, PanelData) else np.asarray(data, dtype=float)
    Y = Y - Y.mean(axis=1, keepdims=True)
    M, T = Y.shape
    if M != model.ma.M:
        raise DimensionMismatch(f"data has {M} rows, spectral model has {model.ma.M}")
    if T < 2:
        raise ValueError("need at least two periods")
    K = T // 2
    d = np.fft.fft(Y, axis=1)[:, 1 : K + 1].T  # K x M
    Psi = model.ma.Psi
    H, _, r = Psi.shape
    folded = np.zeros((T, M, r))
    np.add.at(folded, np.arange(H) % T, Psi)
    Hs = np.fft.fft(folded, axis=0)[1 : K + 1] @ np.linalg.cholesky(model.Sigma_e)  # K x M x r
    weight = np.full(K, 2.0)
    if T % 2 == 0:
        weight[-1] = 1.0
    s2 = model.sigma_v**2
    if s2 > 0.0:
        Gm = np.conj(Hs.transpose(0, 2, 1)) @ Hs
        A = Gm + s2 * np.eye(r)
        L = np.linalg.cholesky(A)
        logdet = (M - r) * np.log(s2) + 2.0 * np.sum(np.log(np.real(np.diagonal(L, axis1=1, axis2=2))), axis=1)
        u = np.einsum("kmr,km->kr", np.conj(Hs), d)
        x = np.linalg.solve(A, u[..., None])[..., 0]
        quad = (np.sum(np.abs(d) ** 2, axis=1) - np.real(np.sum(np.conj(u) * x, axis=1))) / s2
    else:
        S = Hs @ np.conj(Hs.transpose(0, 2, 1))
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise SingularSpectrum("spectral density is singular; add measurement error or jitter") from exc
        diag = np.real(np.diagonal(L, axis1=1, axis2=2))
        scale = np.max(np.real(np.diagonal(S, axis1=1, axis2=2)), axis=1)
        if np.any(diag**2 <= 1e-13 * scale[:, None]):
            raise SingularSpectrum("spectral density is singular; add measurement error or jitter")
        logdet = 2.0 * np.sum(np.log(diag), axis=1)
        z = np.linalg.solve(L, d[..., None])[..., 0]
        quad = np.sum(np.abs(z) ** 2, axis=1)
    terms = M * LOG_2PI + logdet + quad / T
    return float(-0.5 * np.sum(weight * terms))


def whittle_loglik_eval(theta, data: PanelData, binding: GeneratorBinding) -> LoglikEval:
    return _guard(lambda: whittle_loglik(data, binding.spectral_model(theta)))


# --------------------------------------------------------------------------- MLE


@dataclass(frozen=True)
class OptConfig:
    ftol: float = 1e-3  # log-likelihood spread across the simplex
    max_evals: int = 2000
    initial_step: float = 0.1  # fraction of each bound's width
    bound_tol: float = 1e-3  # fraction of the width counted as "at the bound"
    objective: str = "dmd"  # or "whittle"

    def __post_init__(self):
        if self.ftol <= 0 or self.max_evals < 1 or not 0 < self.initial_step <= 1:
            raise ValueError("invalid optimizer settings")
        if self.objective not in ("dmd", "whittle"):
            raise ValueError(f"objective must be 'dmd' or 'whittle', got {self.objective!r}")


@dataclass
class MLEResult:
    theta: ParameterVector
    loglik: float
    init_loglik: float
    trace: np.ndarray  # one row per evaluation: parameter values then log-likelihood
    n_evals: int
    converged: bool
    message: str
    at_bound: tuple[str, ...]
    no_improvement: bool

    @property
    def flags(self) -> list[str]:
        out = []
        if not self.converged:
            out.append("not_converged")
        if self.no_improvement:
            out.append("no_improvement")
        out += [f"at_bound:{n}" for n in self.at_bound]
        return out

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.as_dict(),
            "loglik": self.loglik,
            "init_loglik": self.init_loglik,
            "n_evals": self.n_evals,
            "converged": self.converged,
            "message": self.message,
            "flags": self.flags,
        }


def objective_fn(data: PanelData, binding: GeneratorBinding, names, objective: str = "dmd"):
    """``x -> log-likelihood`` over raw parameter arrays ordered as ``names``."""
    names = tuple(names)
    score = whittle_loglik_eval if objective == "whittle" else approx_loglik_eval

    def f(x):
        return score(dict(zip(names, np.asarray(x, dtype=float).tolist())), data, binding).value

    return f


def mle_fit(data: PanelData, binding: GeneratorBinding, init: ParameterVector, config: OptConfig | None = None) -> MLEResult:
    """Box-constrained simplex maximization of the approximate likelihood.

    The DMD objective always runs with common random numbers so that it is a
    smooth function of the parameters.
    """
    config = OptConfig() if config is None else config
    if not binding.common_random_numbers:
        binding = replace(binding, common_random_numbers=True)
    f = objective_fn(data, binding, init.names, config.objective)
    res = nelder_mead_max(f, init.values, init.lo, init.hi, config.ftol, config.max_evals, config.initial_step)
    trace = np.array([np.append(x, v) for x, v in res.trace])
    init_ll = float(trace[0, -1])
    finite = trace[np.isfinite(trace[:, -1]), -1]
    flat = finite.size > 0 and float(finite.max() - finite.min()) < config.ftol
    width = init.hi - init.lo
    near = (res.x - init.lo <= config.bound_tol * width) | (init.hi - res.x <= config.bound_tol * width)
    return MLEResult(
        theta=init.with_values(res.x),
        loglik=res.fun,
        init_loglik=init_ll,
        trace=trace,
        n_evals=res.n_evals,
        converged=res.converged,
        message=res.message,
        at_bound=tuple(n for n, b in zip(init.names, near) if b),
        no_improvement=bool(flat),
    )


# --------------------------------------------------------------------------- RWMH


@dataclass(frozen=True)
class MCMCConfig:
    steps: int = 20000
    burn_in: int = 5000
    target_accept: float = 0.234
    adapt_interval: int = 100
    initial_step_scale: float = 0.02  # proposal std as a fraction of each bound's width
    seed: int = 0
    regularization: float = 1e-10  # added to the chain covariance, relative to the mean squared width
    prior: str = "flat"

    def __post_init__(self):
        if self.steps < 1 or not 0 <= self.burn_in < self.steps:
            raise ValueError("need steps >= 1 and 0 <= burn_in < steps")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.adapt_interval < 1 or self.initial_step_scale <= 0:
            raise ValueError("invalid adaptation settings")
        if self.prior != "flat":
            raise ValueError("only the flat prior on the parameter box is supported")


@dataclass
class MCMCResult:
    names: tuple[str, ...]
    chain: np.ndarray  # steps x d, state after each step
    loglik: np.ndarray
    accepted: np.ndarray
    burn_in: int
    proposal_cov: np.ndarray  # final proposal covariance, step size included
    log_step: float

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())

    @property
    def acceptance_burn_in(self) -> float:
        return float(self.accepted[: self.burn_in].mean()) if self.burn_in else float("nan")

    @property
    def acceptance_post(self) -> float:
        return float(self.accepted[self.burn_in :].mean())

    @property
    def draws(self) -> np.ndarray:
        return self.chain[self.burn_in :]

    def summary(self) -> dict:
        post = self.draws
        return {
            "mean": dict(zip(self.names, post.mean(axis=0).tolist())),
            "std": dict(zip(self.names, post.std(axis=0, ddof=1).tolist() if len(post) > 1 else [0.0] * len(self.names))),
            "acceptance_rate": self.acceptance_rate,
            "acceptance_burn_in": self.acceptance_burn_in,
            "acceptance_post": self.acceptance_post,
            "steps": int(self.chain.shape[0]),
            "burn_in": self.burn_in,
        }


def rwmh_sample(
    data: PanelData | None,
    binding: GeneratorBinding | None,
    init: ParameterVector,
    config: MCMCConfig | None = None,
    target: Callable[[np.ndarray], float] | None = None,
) -> MCMCResult:
    """Adaptive random-walk Metropolis-Hastings under a flat prior on the box.

    ``target`` replaces the approximate likelihood when given (it maps a
    parameter array to a log density).  During burn-in the proposal covariance
    tracks ``2.38^2 / d`` times the running chain covariance and a scalar
    log step size follows a Robbins-Monro rule toward ``target_accept``; both
    are frozen afterwards.
    """
    config = MCMCConfig() if config is None else config
    if target is None:
        if data is None or binding is None:
            raise ValueError("need data and a binding when no target is given")
        target = objective_fn(data, binding, init.names)
    d = init.d
    lo, hi = init.lo, init.hi
    width = hi - lo
    x = init.values.copy()
    fx = float(target(x))
    if not np.isfinite(fx):
        raise InitInvalid("log-likelihood is not finite at the initial point")

    gen = rng.generator(config.seed, rng.MCMC)
    cov = np.diag((config.initial_step_scale * width) ** 2)
    chol = np.linalg.cholesky(cov)
    eps = config.regularization * float(np.mean(width**2))
    log_step = 0.0
    mean = x.copy()
    m2 = np.zeros((d, d))
    n_seen = 1

    chain = np.empty((config.steps, d))
    logl = np.empty(config.steps)
    accepted = np.zeros(config.steps, dtype=bool)
    for n in range(1, config.steps + 1):
        z = gen.standard_normal(d)
        log_u = np.log(gen.random())
        y = x + np.exp(log_step) * (chol @ z)
        alpha = 0.0
        if np.all(y >= lo) and np.all(y <= hi):
            fy = float(target(y))
            if np.isfinite(fy):
                log_r = fy - fx
                alpha = 1.0 if log_r >= 0 else float(np.exp(log_r))
                if log_u < log_r:
                    x, fx = y, fy
                    accepted[n - 1] = True
        chain[n - 1] = x
        logl[n - 1] = fx
        if n <= config.burn_in:
            log_step += (alpha - config.target_accept) / n**0.6
            n_seen += 1
            delta = x - mean
            mean = mean + delta / n_seen
            m2 += np.outer(delta, x - mean)
            if n % config.adapt_interval == 0 and n_seen > 2 * d:
                emp = m2 / (n_seen - 1)
                prop = (2.38**2 / d) * (emp + eps * np.eye(d))
                try:
                    chol = np.linalg.cholesky(prop)
                    cov = prop
                except np.linalg.LinAlgError:
                    pass
    return MCMCResult(init.names, chain, logl, accepted, config.burn_in, np.exp(2 * log_step) * cov, log_step)


# --------------------------------------------------------------------------- Monte Carlo


@dataclass
class StudyResult:
    names: tuple[str, ...]
    truth: np.ndarray
    draws: np.ndarray  # replications x d; nan rows for failed replications
    converged: np.ndarray
    failures: list[tuple[int, str]]
    estimator: str

    @property
    def ok(self) -> np.ndarray:
        return np.all(np.isfinite(self.draws), axis=1)

    @property
    def failure_rate(self) -> float:
        return len(self.failures) / self.draws.shape[0]

    @property
    def mean(self) -> np.ndarray:
        good = self.draws[self.ok]
        return good.mean(axis=0) if len(good) else np.full(len(self.names), np.nan)

    @property
    def std(self) -> np.ndarray:
        good = self.draws[self.ok]
        if len(good) == 0:
            return np.full(len(self.names), np.nan)
        return good.std(axis=0, ddof=1) if len(good) > 1 else np.zeros(len(self.names))

    @property
    def bias(self) -> np.ndarray:
        return self.mean - self.truth

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "replications": int(self.draws.shape[0]),
            "failure_rate": self.failure_rate,
            "all_converged": bool(np.all(self.converged)),
            "parameters": {
                n: {"truth": float(t), "mean": float(m), "std": float(s), "bias": float(b)}
                for n, t, m, s, b in zip(self.names, self.truth, self.mean, self.std, self.bias)
            },
            "failures": [{"replication": i, "error": msg} for i, msg in self.failures],
        }

    def table(self) -> str:
        lines = [f"{'parameter':<14}{'truth':>12}{'mean':>12}{'std':>12}{'bias':>12}"]
        for n, t, m, s, b in zip(self.names, self.truth, self.mean, self.std, self.bias):
            lines.append(f"{n:<14}{t:>12.5f}{m:>12.5f}{s:>12.5f}{b:>12.5f}")
        return "\n".join(lines)


def _run_estimator(estimator, data, binding, init, opt_config, mcmc_config):
    if callable(estimator):
        return estimator(data, binding, init)
    if estimator == "mle":
        res = mle_fit(data, binding, init, opt_config)
        return res.theta.values, res.converged
    if estimator == "whittle-mle":
        cfg = replace(opt_config or OptConfig(), objective="whittle")
        res = mle_fit(data, binding, init, cfg)
        return res.theta.values, res.converged
    if estimator == "rwmh":
        res = rwmh_sample(data, binding, init, mcmc_config)
        return res.draws.mean(axis=0), True
    raise ValueError(f"unknown estimator {estimator!r}")


def monte_carlo_study(
    binding: GeneratorBinding,
    true_theta: ParameterVector,
    estimator="mle",
    replications: int = 50,
    master_seed: int = 0,
    T: int = 120,
    data_burn_in: int | None = None,
    init: ParameterVector | None = None,
    opt_config: OptConfig | None = None,
    mcmc_config: MCMCConfig | None = None,
    threads: int = 1,
) -> StudyResult:
    """Repeat simulate-then-estimate at ``true_theta``.

    Replication i uses seeds derived from ``(master_seed, i)`` for its data,
    its simulation draws and its sampler, so results do not depend on
    ``threads``.  ``estimator`` is ``"mle"``, ``"rwmh"``, ``"whittle-mle"`` or
    a callable ``(data, binding, init) -> (values, converged)``.
    A failed replication is recorded and does not stop the study.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    init = true_theta if init is None else init
    d = true_theta.d

    def one(i):
        data_seed = rng.derive_seed(master_seed, i, 0)
        rep_binding = replace(binding, base_seed=rng.derive_seed(master_seed, i, 1))
        mcfg = None
        if mcmc_config is not None or estimator == "rwmh":
            mcfg = replace(mcmc_config or MCMCConfig(), seed=rng.derive_seed(master_seed, i, 2))
        try:
            data = binding.simulate(true_theta, T, data_seed, data_burn_in)
            values, conv = _run_estimator(estimator, data, rep_binding, init, opt_config, mcfg)
            return np.asarray(values, dtype=float), bool(conv), None
        except Exception as exc:  # recorded per replication
            return np.full(d, np.nan), False, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(replications)))
    else:
        results = [one(i) for i in range(replications)]
    draws = np.array([r[0] for r in results])
    converged = np.array([r[1] for r in results])
    failures = [(i, r[2]) for i, r in enumerate(results) if r[2] is not None]
    name = estimator if isinstance(estimator, str) else getattr(estimator, "__name__", "custom")
    return StudyResult(true_theta.names, true_theta.values.copy(), draws, converged, failures, name)
