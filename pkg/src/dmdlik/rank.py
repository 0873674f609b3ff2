"""Diagnostics for choosing the rank N of the reduced VAR.

Four signals are computed on one panel and reported side by side:

* the singular spectrum and the Gavish-Donoho hard threshold,
* the Bai-Ng information criterion over the VAR residuals,
* the aggregate (cross-sectional average) R^2 of the rank-n VAR,
* the lag-one autocovariance of the VAR residuals, which should vanish at
  the right rank because innovations are serially uncorrelated.

:func:`select_rank` combines them into a :class:`RankReport`.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate, linalg, optimize

from .dfm import PanelData
from .dmd import ReducedVAR, build_snapshots, dmd_fit, truncated_svd
from .errors import EmptyResiduals

_EPS = np.finfo(float).eps


def gd_lambda(beta: float) -> float:
    """Gavish-Donoho coefficient ``lambda(beta)`` for a known noise level."""
    b = float(beta)
    return math.sqrt(2.0 * (b + 1.0) + 8.0 * b / (b + 1.0 + math.sqrt(b * b + 14.0 * b + 1.0)))


@dataclass(frozen=True)
class GDThreshold:
    tau: float
    lam: float
    beta: float
    outside_regime: bool


def gavish_donoho(M: int, T: int, sigma: float) -> GDThreshold:
    """Hard threshold ``tau = lambda(M/T) sqrt(T) sigma`` for singular values of an M x T matrix.

    The closed form is derived for aspect ratios in (0, 1]; for M > T the
    matrix is treated as its transpose and the result is flagged.
    """
    if M < 1 or T < 1:
        raise ValueError("M and T must be positive")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    outside = M > T
    short, long_ = (T, M) if outside else (M, T)
    beta = short / long_
    lam = gd_lambda(beta)
    return GDThreshold(lam * math.sqrt(long_) * sigma, lam, beta, outside)


def mp_median(beta: float) -> float:
    """Median of the Marchenko-Pastur law with ratio ``beta`` in (0, 1] and unit scale."""
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must lie in (0, 1]")
    lo, hi = (1.0 - math.sqrt(beta)) ** 2, (1.0 + math.sqrt(beta)) ** 2

    def density(x):
        return math.sqrt(max((hi - x) * (x - lo), 0.0)) / (2.0 * math.pi * beta * x)

    def cdf_gap(x):
        return integrate.quad(density, lo, x, limit=200)[0] - 0.5

    return optimize.brentq(cdf_gap, lo + 1e-12, hi)


def estimate_noise_sigma(singular_values: np.ndarray, M: int, T: int) -> float:
    """Noise level from the median singular value (unknown-sigma variant)."""
    short, long_ = min(M, T), max(M, T)
    s = np.asarray(singular_values, dtype=float)
    if s.size == 0:
        return 0.0
    return float(np.median(s) / math.sqrt(long_ * mp_median(short / long_)))


def _all_singular_values(Y: np.ndarray) -> np.ndarray:
    return linalg.svdvals(Y, check_finite=False)


def singular_spectrum(Y: np.ndarray, n_max: int) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if n_max < 1 or n_max > min(Y.shape):
        raise ValueError(f"n_max must lie in 1..{min(Y.shape)}")
    return _all_singular_values(Y)[:n_max]


def bai_ng_ic(residuals_by_rank: dict, M: int | None = None, T: int | None = None) -> dict[int, float]:
    """``IC(n) = V(n) + n (M+T)/(MT) log(MT/(M+T))``, ``V(n)`` the mean squared residual.

    ``T`` is the residual sample length; both dimensions default to the
    residual matrix shape.
    """
    if not residuals_by_rank:
        raise EmptyResiduals("no residuals supplied")
    out = {}
    for n, a in sorted(residuals_by_rank.items()):
        a = np.asarray(a, dtype=float)
        if a.size == 0:
            raise EmptyResiduals(f"residuals for n={n} are empty")
        m = a.shape[0] if M is None else M
        t = a.shape[1] if T is None else T
        V = float(np.sum(a * a)) / (m * t)
        out[int(n)] = V + int(n) * ((m + t) / (m * t)) * math.log(m * t / (m + t))
    return out


def _normalized_weights(weights, M: int) -> np.ndarray:
    if weights is None:
        return np.ones(M)
    w = np.asarray(weights, dtype=float)
    if w.shape != (M,) or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be M nonnegative numbers with positive sum")
    return w * (M / w.sum())


def _row_r2(Yt: np.ndarray, resid: np.ndarray):
    ssr = np.sum(resid * resid, axis=1)
    dev = Yt - Yt.mean(axis=1, keepdims=True)
    tss = np.sum(dev * dev, axis=1)
    flat = tss <= _EPS * max(1.0, float(np.max(np.abs(Yt))) ** 2) * Yt.shape[1]
    r2 = np.where(flat, 0.0, 1.0 - ssr / np.where(flat, 1.0, tss))
    return r2, np.flatnonzero(flat)


def aggregate_r2(panel: PanelData | np.ndarray, fits: dict[int, ReducedVAR], weights=None) -> dict[int, float]:
    """Weighted cross-sectional average of per-row VAR R^2, one value per rank.

    Rows with zero variance get R^2 = 0 and are reported with a warning.
    """
    Y = panel.Y if isinstance(panel, PanelData) else np.asarray(panel, dtype=float)
    w = _normalized_weights(weights, Y.shape[0])
    Yt = Y[:, 1:]
    out = {}
    flagged = set()
    for n, fit in sorted(fits.items()):
        r2, flat = _row_r2(Yt, fit.residuals(Y))
        flagged.update(flat.tolist())
        out[int(n)] = float(np.mean(w * r2))
    if flagged:
        warnings.warn(f"zero-variance rows given R^2 = 0: {sorted(flagged)}", RuntimeWarning, stacklevel=2)
    return out


def residual_autocov(residuals: np.ndarray, full: bool = False):
    """Max-abs entry of ``(1/L) sum_t a_{t+1} a_t'`` for an M x L residual matrix."""
    a = np.asarray(residuals, dtype=float)
    L = a.shape[1]
    if L < 2:
        raise ValueError("need at least two residual periods")
    G1 = a[:, 1:] @ a[:, :-1].T / L
    stat = float(np.max(np.abs(G1)))
    return (stat, G1) if full else stat


@dataclass
class RankConfig:
    plateau_tol: float = 0.005
    primary: str = "r2"  # r2 | ic | gd
    sigma: float | None = None
    demean: bool = False
    weights: list | None = None

    def __post_init__(self):
        if self.primary not in ("r2", "ic", "gd"):
            raise ValueError(f"unknown primary criterion {self.primary!r}")
        if self.plateau_tol <= 0:
            raise ValueError("plateau_tol must be positive")


@dataclass
class RankReport:
    singular_values: list[float]
    gd_threshold: float
    gd_rank: int
    gd_sigma: float
    gd_outside_regime: bool
    ic_values: dict[int, float]
    r2_values: dict[int, float]
    autocov_values: dict[int, float]
    chosen_N: int
    rationale: str
    ic_argmin: int
    r2_rank: int
    numerical_rank: int
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("ic_values", "r2_values", "autocov_values"):
            d[key] = {str(k): v for k, v in d[key].items()}
        return d

    def table(self) -> str:
        """Plain-text table: one column per candidate rank."""
        ns = sorted(self.r2_values)
        head = "n".ljust(18) + "".join(f"{n:>11d}" for n in ns)
        rows = [
            ("R2(n)", self.r2_values, "{:>11.4f}"),
            ("IC(n)", self.ic_values, "{:>11.4g}"),
            ("max|E[a_t+1 a_t']|", self.autocov_values, "{:>11.2e}"),
        ]
        lines = [head]
        for label, vals, fmt in rows:
            lines.append(label.ljust(18) + "".join(fmt.format(vals[n]) for n in ns))
        sv = ", ".join(f"{s:.4g}" for s in self.singular_values[: max(ns) + 1])
        lines.append(f"singular values: {sv}")
        lines.append(f"Gavish-Donoho threshold {self.gd_threshold:.4g} -> rank {self.gd_rank}")
        lines.append(f"chosen N = {self.chosen_N}: {self.rationale}")
        return "\n".join(lines)


def _r2_rank(r2: dict[int, float], tol: float, n_max: int) -> tuple[int, bool]:
    prev = 0.0
    for n in range(1, n_max + 1):
        if r2[n] - prev < tol:
            return n - 1, True
        prev = r2[n]
    return n_max, False


def select_rank(panel: PanelData | np.ndarray, n_max: int, config: RankConfig | None = None) -> RankReport:
    """Run every rank diagnostic on one panel and pick N by the configured rule.

    The default rule takes the smallest n whose R^2 gain from n to n+1 is
    below ``plateau_tol`` (with R^2 at n=0 defined as 0).  The IC argmin and
    the Gavish-Donoho count are reported as cross-checks.
    """
    cfg = config or RankConfig()
    Y = panel.Y if isinstance(panel, PanelData) else np.asarray(panel, dtype=float)
    if cfg.demean:
        Y = Y - Y.mean(axis=1, keepdims=True)
    pair = build_snapshots(Y)
    M, J = pair.M, pair.J
    if n_max < 1 or n_max > min(M, J):
        raise ValueError(f"n_max must lie in 1..{min(M, J)}")

    s_all = _all_singular_values(pair.Y)
    floor = _EPS * max(M, J) * (s_all[0] if s_all.size else 0.0)
    num_rank = int(np.sum(s_all > floor)) if s_all.size and s_all[0] > 0 else 0
    flags = []

    sigma = cfg.sigma if cfg.sigma is not None else estimate_noise_sigma(s_all, M, J)
    gd = gavish_donoho(M, J, sigma)
    if gd.outside_regime:
        flags.append("gavish-donoho: M > T, computed on the transpose (outside stated regime)")
    gd_rank = int(np.sum(s_all > max(gd.tau, floor)))

    n_eff = min(n_max, num_rank)
    residuals = {}
    fits = {}
    if n_eff >= 1:
        svd = truncated_svd(pair.Y, n_eff)
        for n in range(1, n_eff + 1):
            fits[n] = dmd_fit(pair, n, shrinkage=0.0, svd=svd)
            residuals[n] = pair.Yp - fits[n].predict(pair.Y)
        for n in range(n_eff + 1, n_max + 1):
            fits[n] = fits[n_eff]
            residuals[n] = residuals[n_eff]
        if n_eff < n_max:
            flags.append(f"numerical rank {num_rank} < n_max; larger ranks reuse the rank-{n_eff} fit")
    else:
        for n in range(1, n_max + 1):
            residuals[n] = pair.Yp
        flags.append("panel is numerically zero")

    ic = bai_ng_ic(residuals)
    w = _normalized_weights(cfg.weights, M)
    r2 = {}
    flat_rows = set()
    for n in range(1, n_max + 1):
        vals, flat = _row_r2(pair.Yp, residuals[n])
        flat_rows.update(flat.tolist())
        r2[n] = float(np.mean(w * vals))
    if flat_rows:
        flags.append(f"zero-variance rows (R^2 set to 0): {sorted(flat_rows)}")
    autocov = {n: residual_autocov(residuals[n]) for n in range(1, n_max + 1)}

    ic_argmin = min(ic, key=lambda n: (ic[n], n))
    r2_rank, plateaued = _r2_rank(r2, cfg.plateau_tol, n_max)
    if not plateaued:
        flags.append(f"R^2 still rising at n_max={n_max}")
    chosen = {"r2": r2_rank, "ic": ic_argmin, "gd": gd_rank}[cfg.primary]
    if n_eff == 0:
        chosen = 0

    parts = []
    if chosen == 0:
        parts.append("no factor structure: the rank-1 VAR adds no predictive power")
    else:
        parts.append(f"primary rule '{cfg.primary}' selects N={chosen}")
    if cfg.primary != "r2":
        parts.append(f"R^2 plateau rank {r2_rank}")
    if plateaued and r2_rank < n_max:
        gain = r2[r2_rank + 1] - (r2[r2_rank] if r2_rank >= 1 else 0.0)
        parts.append(f"R^2 gain {gain:.2g} beyond n={r2_rank} is below {cfg.plateau_tol}")
    for label, value in (("IC argmin", ic_argmin), ("Gavish-Donoho count", gd_rank)):
        parts.append(f"{label} {value} " + ("agrees" if value == chosen else "disagrees"))
    if chosen >= 2:
        before, after = autocov[chosen - 1], autocov[chosen]
        parts.append(f"residual autocovariance {before:.2e} at n={chosen - 1} vs {after:.2e} at n={chosen}")
    rationale = "; ".join(parts)

    return RankReport(
        singular_values=[float(s) for s in s_all],
        gd_threshold=float(gd.tau),
        gd_rank=gd_rank,
        gd_sigma=float(sigma),
        gd_outside_regime=gd.outside_regime,
        ic_values=ic,
        r2_values=r2,
        autocov_values=autocov,
        chosen_N=int(chosen),
        rationale=rationale,
        ic_argmin=int(ic_argmin),
        r2_rank=int(r2_rank),
        numerical_rank=num_rank,
        flags=flags,
    )
