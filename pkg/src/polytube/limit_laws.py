"""Limit objects of the weak-disorder scaling limits and comparison statistics.

Depending on the regime, the rescaled partition function converges to a
Wiener-chaos series (relevant disorder), a mean-one log-normal or the
constant 0 (marginal disorder, depending on whether the effective coupling
stays below 1), or the constant 1 (irrelevant disorder).  This module
builds those limit laws, samples the samplable ones, evaluates the chaos
limit's second moment by deterministic integration of its kernels, and
provides the Kolmogorov-Smirnov distance plus a per-horizon convergence
sweep used by the distributional trend checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import gammaincinv, ndtr
from scipy.stats import kstwo, qmc, spearmanr

from . import rng
from .environment import ModelParams, sample_field
from .errors import ConfigError, ResourceBudgetError
from .intersection import MARGINAL, RELEVANT, beta_schedule, classify_regime
from .partition import ensemble_log_z_1d, partition_exact, second_moment_exact

FULL_SPACE = "full-space"
TUBE = "tube"

_TUBE_ORDER_CAP = 8
_QMC_POINTS = 2048
_X_NODES = 64


# ---------------------------------------------------------------------------
# limit laws


@dataclass(frozen=True)
class LimitLaw:
    """One of the four distributional targets, with its parameters.

    kind: "wiener-chaos" (relevant), "log-normal" (marginal, coupling < 1),
    "point-mass-zero" (marginal, coupling >= 1), "point-mass-one"
    (irrelevant).
    """

    kind: str
    sigma_sq: float | None = None
    beta_hat: float | None = None
    a_branch: str | None = None
    R: float | None = None

    def mean(self) -> float:
        return 0.0 if self.kind == "point-mass-zero" else 1.0

    def second_moment(self) -> float:
        if self.kind == "log-normal":
            return math.exp(self.sigma_sq)
        if self.kind == "point-mass-one":
            return 1.0
        if self.kind == "point-mass-zero":
            return 0.0
        k = _TUBE_ORDER_CAP if self.a_branch == TUBE else 40
        return wiener_chaos_second_moment(self.beta_hat, self.a_branch,
                                          K=k, R=self.R)

    def cdf(self, x):
        """Distribution function; the chaos law has no closed form."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "log-normal":
            s = math.sqrt(self.sigma_sq)
            out = np.zeros_like(x)
            pos = x > 0
            if s == 0.0:
                return (x >= 1.0).astype(np.float64)
            out[pos] = ndtr((np.log(x[pos]) + self.sigma_sq / 2) / s)
            return out
        if self.kind == "point-mass-one":
            return (x >= 1.0).astype(np.float64)
        if self.kind == "point-mass-zero":
            return (x >= 0.0).astype(np.float64)
        raise ConfigError("the chaos limit has no closed-form distribution")


def limit_law_for(params: ModelParams, beta_hat: float) -> LimitLaw:
    """The distributional target for this cell at effective coupling beta_hat."""
    report = classify_regime(params, beta_hat)
    if report.regime == RELEVANT:
        branch = TUBE if params.a == 0.5 else FULL_SPACE
        return LimitLaw(kind="wiener-chaos", beta_hat=beta_hat,
                        a_branch=branch, R=params.R if branch == TUBE else None)
    if report.regime == MARGINAL:
        if beta_hat >= 1.0:
            return LimitLaw(kind="point-mass-zero", beta_hat=beta_hat)
        return LimitLaw(kind="log-normal", sigma_sq=report.sigma_sq,
                        beta_hat=beta_hat)
    return LimitLaw(kind="point-mass-one", beta_hat=beta_hat)


def sample_lognormal_limit(sigma_sq: float, n_samples: int,
                           seed: int) -> np.ndarray:
    """Draws of the mean-one log-normal limit exp(sigma*W - sigma^2/2)."""
    if sigma_sq < 0:
        raise ConfigError("sigma_sq must be nonnegative")
    if n_samples < 1:
        raise ConfigError("n_samples must be at least 1")
    if sigma_sq == 0.0:
        return np.ones(n_samples)
    gen = np.random.default_rng(rng.derive_seed(seed, 0x6C6E))
    g = gen.standard_normal(n_samples)
    return np.exp(math.sqrt(sigma_sq) * g - sigma_sq / 2)


# ---------------------------------------------------------------------------
# chaos-limit second moment


def _dirichlet_times(k: int, n_points: int) -> np.ndarray:
    """Deterministic low-discrepancy draws of ordered times 0<t_1<...<t_k<1.

    The time increments, including the final gap to 1, follow the
    Dirichlet(1/2,...,1/2,1) law that normalizes prod(dt_j)^{-1/2} on the
    simplex; sampling it absorbs that singular density into the measure.
    """
    sob = qmc.Sobol(d=k + 1, scramble=False)
    sob.fast_forward(1)  # the first point is the origin
    u = sob.random(n_points)
    u = np.clip(u, 0.5 / n_points, 1.0 - 0.5 / n_points)
    gam = np.empty_like(u)
    gam[:, :k] = gammaincinv(0.5, u[:, :k])
    gam[:, k] = -np.log1p(-u[:, k])
    deltas = gam[:, :k] / gam.sum(axis=1, keepdims=True)
    return np.cumsum(deltas, axis=1)


def _box_stay_probability(times: np.ndarray, R: float,
                          m_nodes: int) -> np.ndarray:
    """P(|B_{t_j/2}| <= R for all j) per row of ordered times.

    A Brownian path observed at the given times stays in the box iff the
    erf-smoothed, box-truncated density chain retains its mass; the chain
    uses exact Gaussian cell integrals from cell midpoints.
    """
    n_pts, k = times.shape
    edges = np.linspace(-R, R, m_nodes + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    sd = np.sqrt(0.5 * times[:, 0])[:, None]
    rho = ndtr(edges[None, 1:] / sd) - ndtr(edges[None, :-1] / sd)
    for j in range(1, k):
        sd = np.sqrt(0.5 * (times[:, j] - times[:, j - 1]))[:, None, None]
        z = (edges[None, None, :] - centers[None, :, None]) / sd
        cell = ndtr(z[..., 1:]) - ndtr(z[..., :-1])
        rho = np.einsum("pi,pic->pc", rho, cell)
    return rho.sum(axis=1)


def wiener_chaos_coefficients(a_branch: str, K: int, R: float | None = None,
                              n_points: int = _QMC_POINTS,
                              m_nodes: int = _X_NODES) -> np.ndarray:
    """V_k, k = 1..K: the chaos series' per-order variance coefficients.

    Full-space branch: the spatial integrals collapse and the ordered time
    integral of prod(pi*dt_j)^{-1/2} is exactly 1/Gamma(k/2+1).  Tube
    branch (radius R): the same collapse leaves the probability that a
    Brownian path, observed at the ordered times, stays inside [-R, R];
    that factor is averaged with deterministic low-discrepancy points.
    """
    if K < 1:
        raise ConfigError("K must be at least 1")
    ks = np.arange(1, K + 1, dtype=np.float64)
    full = np.exp(-np.vectorize(math.lgamma)(ks / 2 + 1))
    if a_branch == FULL_SPACE:
        return full
    if a_branch != TUBE:
        raise ConfigError(f"unknown branch {a_branch!r}")
    if R is None or R <= 0:
        raise ConfigError("the tube branch needs a positive radius R")
    if K > _TUBE_ORDER_CAP:
        raise ResourceBudgetError(
            f"tube-branch quadrature supports K <= {_TUBE_ORDER_CAP}")
    out = np.empty(K)
    for k in range(1, K + 1):
        times = _dirichlet_times(k, n_points)
        out[k - 1] = full[k - 1] * float(
            _box_stay_probability(times, R, m_nodes).mean())
    return out


def wiener_chaos_second_moment(beta_hat: float, a_branch: str, K: int,
                               R: float | None = None,
                               n_points: int = _QMC_POINTS,
                               m_nodes: int = _X_NODES) -> float:
    """1 + sum_{k<=K} beta_hat^{2k} V_k, the chaos limit's second moment."""
    if beta_hat < 0:
        raise ConfigError("beta_hat must be nonnegative")
    if beta_hat == 0.0:
        return 1.0
    v = wiener_chaos_coefficients(a_branch, K, R, n_points, m_nodes)
    ks = np.arange(1, K + 1)
    return 1.0 + float(np.sum(beta_hat ** (2 * ks) * v))


# ---------------------------------------------------------------------------
# distribution comparison


@dataclass(frozen=True)
class Ecdf:
    """Right-continuous empirical distribution function of a sample."""

    points: np.ndarray

    def __call__(self, x):
        return np.searchsorted(self.points, x, side="right") / self.points.size


def ecdf(samples) -> Ecdf:
    pts = np.sort(np.asarray(samples, dtype=np.float64))
    if pts.size == 0:
        raise ConfigError("samples must be nonempty")
    return Ecdf(points=pts)


def ks_statistic(samples_a, samples_b_or_cdf) -> float:
    """Kolmogorov-Smirnov distance, one-sample (against a cdf) or two-sample.

    An ``Ecdf`` second argument is treated as its underlying sample so the
    step-vs-step supremum is exact; the classical one-sample bracketing
    formula below is exact only for continuous distribution functions.
    """
    a = np.sort(np.asarray(samples_a, dtype=np.float64))
    n = a.size
    if n == 0:
        raise ConfigError("samples must be nonempty")
    if isinstance(samples_b_or_cdf, Ecdf):
        samples_b_or_cdf = samples_b_or_cdf.points
    elif callable(samples_b_or_cdf):
        f = np.asarray(samples_b_or_cdf(a), dtype=np.float64)
        up = np.arange(1, n + 1) / n - f
        dn = f - np.arange(0, n) / n
        return float(max(up.max(), dn.max(), 0.0))
    b = np.sort(np.asarray(samples_b_or_cdf, dtype=np.float64))
    m = b.size
    if m == 0:
        raise ConfigError("samples must be nonempty")
    xs = np.concatenate([a, b])
    fa = np.searchsorted(a, xs, side="right") / n
    fb = np.searchsorted(b, xs, side="right") / m
    return float(np.abs(fa - fb).max())


# ---------------------------------------------------------------------------
# convergence sweeps


@dataclass(frozen=True)
class ConvergencePoint:
    """Summary of one horizon in a convergence sweep."""

    N: int
    beta_n: float
    mean_z: float
    se_mean: float
    median_z: float
    e_z2_exact: float
    e_z2_target: float
    ks: float
    ks_pvalue: float


@dataclass
class ConvergenceReport:
    """Per-horizon summaries plus monotone-trend statistics.

    ``ks_trend`` is (Spearman rho, p-value) of the KS distance against
    log N — negative rho with small p indicates distributional approach
    to the limit law.
    """

    params: ModelParams
    beta_hat: float | None
    law: LimitLaw
    points: list
    ks_trend: tuple | None


def convergence_suite(params: ModelParams, beta_hat: float | None, N_grid,
                      n_fields: int, seed: int,
                      beta_n=None) -> ConvergenceReport:
    """Sweep horizons, comparing Z_N statistics against the limit law.

    The coupling schedule comes from the regime classification unless an
    explicit ``beta_n`` callable is given (mandatory in the irrelevant
    regime, where no schedule is prescribed).  ``n_fields = 0`` skips
    replica sampling and reports exact second moments only — the only
    option for d = 3 cells, whose transfer recursion would not fit.
    """
    grid = [int(N) for N in N_grid]
    if not grid or any(N < 1 for N in grid):
        raise ConfigError("N_grid must be a nonempty list of horizons >= 1")
    if n_fields < 0:
        raise ConfigError("n_fields must be nonnegative")
    law = limit_law_for(params, beta_hat if beta_hat is not None else 0.0)
    if beta_hat is None and law.kind != "point-mass-one":
        raise ConfigError("beta_hat is required outside the irrelevant regime")
    if beta_n is None:
        if law.kind == "point-mass-one":
            raise ConfigError(
                "the irrelevant regime prescribes no schedule; pass beta_n")
        beta_of = beta_schedule(params, beta_hat)
    else:
        beta_of = beta_n
    try:
        target = law.second_moment()
    except (ConfigError, ResourceBudgetError):
        target = math.nan
    points = []
    for N in grid:
        p_n = replace(params, N=N)
        b = float(beta_of(N))
        try:
            e2 = second_moment_exact(p_n, b).e_z2
        except (ConfigError, ResourceBudgetError):
            e2 = math.nan
        mean = se = med = ks = ks_pv = math.nan
        if n_fields > 0:
            if params.d == 1:
                z = np.exp(ensemble_log_z_1d(p_n, b, rng.derive_seed(seed, N),
                                             n_fields))
            else:
                z = np.empty(n_fields)
                for i in range(n_fields):
                    fld = sample_field(p_n, rng.derive_seed(seed, N, i))
                    z[i] = partition_exact(p_n, fld, b).z
            mean = float(z.mean())
            se = float(z.std(ddof=1) / math.sqrt(n_fields)) if n_fields > 1 \
                else math.nan
            med = float(np.median(z))
            # a KS distance to a point mass never vanishes for continuously
            # distributed replicas, so it carries no convergence signal
            if law.kind == "log-normal":
                ks = ks_statistic(z, law.cdf)
                ks_pv = float(kstwo.sf(ks, n_fields))
        points.append(ConvergencePoint(N=N, beta_n=b, mean_z=mean, se_mean=se,
                                       median_z=med, e_z2_exact=e2,
                                       e_z2_target=target, ks=ks,
                                       ks_pvalue=ks_pv))
    ks_vals = [pt.ks for pt in points]
    trend = None
    if len(grid) >= 3 and all(math.isfinite(k) for k in ks_vals):
        rho, pval = spearmanr(np.log(np.asarray(grid, dtype=np.float64)),
                              ks_vals)
        trend = (float(rho), float(pval))
    return ConvergenceReport(params=params, beta_hat=beta_hat, law=law,
                             points=points, ks_trend=trend)
