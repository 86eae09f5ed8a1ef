"""Replica overlap sums and their growth laws.

The central quantity is

    I_N = sum_{n=1}^{N} sum_x p_n(x)^2 1{(n, x) in region},

the expected number of in-region meetings of two independent walks.  Its
growth in N decides whether weak disorder survives the limit, and its exact
finite-N values calibrate every coupling-strength schedule in the package.

Exact evaluation comes in two independent flavours: a literal masked double
sum over a dense kernel table (small horizons; the oracle side of tests),
and closed binomial / rotation / streaming-DP routes that reach N ~ 10^5.
The asymptotic predictions C N^p (log N)^q with their branch constants, the
coupling schedules beta_N, the marginal-regime limit variance sigma^2 and
the relevance classifier all live here as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit
from scipy.integrate import quad
from scipy.special import zeta

from .environment import ModelParams, region_membership, region_radius
from .errors import ConfigError, ResourceBudgetError
from .walk_kernel import WalkKernel, pmf_window_1d, return_probability_curve

RELEVANT = "relevant"
MARGINAL = "marginal"
IRRELEVANT = "irrelevant"

# largest d=3 streaming-DP horizon we allow: two (n+1)^3 float64 buffers
_D3_DP_MAX_N = 320

_curve_cache: dict[int, np.ndarray] = {}


def _return_curve(d: int, n_max: int) -> np.ndarray:
    """Cached q[n] = p_{2n}(0) = sum_x p_n(x)^2, grown on demand."""
    have = _curve_cache.get(d)
    if have is None or have.size <= n_max:
        _curve_cache[d] = return_probability_curve(d, n_max)
    return _curve_cache[d][: n_max + 1]


# ---------------------------------------------------------------------------
# exact inner sums  s[n] = sum_{x in region(n)} p_n(x)^2


def _identity_cutoff(b: float, n: int) -> bool:
    """True when the ball covers the walk to floating precision.

    Either it contains the whole reachable cone (b >= n), or its radius
    exceeds 9 sqrt(n) + 8, beyond which the omitted probability mass is
    below exp(-40) of the total and invisible at double precision.
    """
    return b >= n or (n > 64 and b >= 9.0 * math.sqrt(n) + 8.0)


def _span(b2: float, off: int, guess: float) -> int:
    """Largest integer t >= 0 with off + t^2 <= b2, matching the region's
    float comparison bit for bit (integer squares are exact in float64)."""
    t = max(int(guess), 0)
    while off + (t + 1) * (t + 1) <= b2:
        t += 1
    while t > 0 and off + t * t > b2:
        t -= 1
    return t


def _inner_sums_d1(radii: np.ndarray, n_max: int) -> np.ndarray:
    ret = _return_curve(1, n_max)
    s = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        b = float(radii[n])
        if b < 0:
            continue
        if _identity_cutoff(b, n):
            s[n] = ret[n]
            continue
        w = pmf_window_1d(n, min(_span(b * b, 0, b), n))
        s[n] = float(np.dot(w, w))
    return s


def _inner_sums_d2(radii: np.ndarray, n_max: int) -> np.ndarray:
    ret = _return_curve(2, n_max)
    s = np.zeros(n_max + 1)
    for n in range(1, n_max + 1):
        b = float(radii[n])
        if b < 0:
            continue
        if _identity_cutoff(b, n):
            s[n] = ret[n]
            continue
        b2 = b * b
        lim = min(_span(b2, 0, b), n)
        # rotated-lattice factorisation p_n(x1, x2) = q_n(x1+x2) q_n(x1-x2)
        w = pmf_window_1d(n, 2 * lim)
        total = 0.0
        for x1 in range(-lim, lim + 1):
            span = _span(b2, x1 * x1, math.sqrt(max(b2 - x1 * x1, 0.0)))
            x2 = np.arange(-span, span + 1)
            vals = w[2 * lim + x1 + x2] * w[2 * lim + x1 - x2]
            total += float(np.dot(vals, vals))
        s[n] = total
    return s


@njit(cache=True)
def _octant_ball_sums_d3(n_max, b2):  # pragma: no cover - numba
    """Inner sums for d=3 via an octant-symmetric streaming layer DP.

    b2[c, n] is the squared region radius for cutoff row c at time n (< 0
    marks rows to skip); returns out[c, n] = sum_{|x|^2 <= b2[c,n]} p_n(x)^2.
    Layer values live on the first octant only; a site with k nonzero
    coordinates stands for 2^k lattice sites.  Ball accumulation is
    Kahan-compensated so row sums keep ~1e-15 relative error over 1e7 terms.
    """
    L = n_max + 1
    ncells = b2.shape[0]
    cur = np.zeros((L, L, L))
    nxt = np.zeros((L, L, L))
    cur[0, 0, 0] = 1.0
    out = np.zeros((ncells, L))
    w = 1.0 / 6.0
    for n in range(1, L):
        acc = np.zeros(ncells)
        comp = np.zeros(ncells)
        for x in range(0, n + 1):
            for y in range(0, n - x + 1):
                z0 = (n + x + y) % 2
                for z in range(z0, n - x - y + 1, 2):
                    xm = cur[x - 1, y, z] if x > 0 else cur[1, y, z]
                    xp = cur[x + 1, y, z] if x + 1 < L else 0.0
                    ym = cur[x, y - 1, z] if y > 0 else cur[x, 1, z]
                    yp = cur[x, y + 1, z] if y + 1 < L else 0.0
                    zm = cur[x, y, z - 1] if z > 0 else cur[x, y, 1]
                    zp = cur[x, y, z + 1] if z + 1 < L else 0.0
                    val = w * (xm + xp + ym + yp + zm + zp)
                    nxt[x, y, z] = val
                    if val > 0.0:
                        mult = 1.0
                        if x > 0:
                            mult *= 2.0
                        if y > 0:
                            mult *= 2.0
                        if z > 0:
                            mult *= 2.0
                        term = mult * val * val
                        r2 = float(x * x + y * y + z * z)
                        for c in range(ncells):
                            if r2 <= b2[c, n]:
                                t = term - comp[c]
                                snew = acc[c] + t
                                comp[c] = (snew - acc[c]) - t
                                acc[c] = snew
        for c in range(ncells):
            out[c, n] = acc[c]
        cur, nxt = nxt, cur
    return out


def _inner_sums_d3(radii: np.ndarray, n_max: int) -> np.ndarray:
    ret = _return_curve(3, n_max)
    s = np.zeros(n_max + 1)
    need_dp = []
    for n in range(1, n_max + 1):
        b = float(radii[n])
        if b < 0:
            continue
        if _identity_cutoff(b, n):
            s[n] = ret[n]
        elif b < 1.0:
            # the ball is the single site {0}: p_n(0)^2 at even times
            if n % 2 == 0:
                s[n] = ret[n // 2] ** 2
        else:
            need_dp.append(n)
    if not need_dp:
        return s
    top = max(need_dp)
    if top > _D3_DP_MAX_N:
        raise ResourceBudgetError(
            f"d=3 partial-ball overlap sums need a streaming DP up to n={top}; "
            f"supported only to n={_D3_DP_MAX_N}")
    b2 = np.full((1, top + 1), -1.0)
    for n in need_dp:
        b2[0, n] = float(radii[n]) ** 2
    dp = _octant_ball_sums_d3(top, b2)
    for n in need_dp:
        s[n] = dp[0, n]
    return s


def inner_square_sums(params: ModelParams, n_max: int | None = None) -> np.ndarray:
    """s[n] = sum_{x in region(n)} p_n(x)^2 for n = 0..n_max (s[0] = 0).

    Exact to floating precision.  Region radii follow params.geometry; for
    tubes the radius is tied to params.N, so n_max may not exceed it.
    """
    if n_max is None:
        n_max = params.N
    if params.geometry == "tube" and n_max > params.N:
        raise ConfigError("tube regions are only defined up to n = N")
    ns = np.arange(0, n_max + 1)
    radii = np.zeros(n_max + 1)
    radii[1:] = region_radius(params, ns[1:])
    ns_f = ns[1:].astype(np.float64)
    if np.all(ns_f * ns_f <= radii[1:] * radii[1:]):
        # the region contains every reachable site, so each inner sum is the
        # full-space collision mass: s[n] = sum_x p_n(x)^2 = p_{2n}(0)
        out = _return_curve(params.d, n_max).copy()
        out[0] = 0.0
        return out
    if params.d == 1:
        return _inner_sums_d1(radii, n_max)
    if params.d == 2:
        return _inner_sums_d2(radii, n_max)
    return _inner_sums_d3(radii, n_max)


def intersection_exact(kernel: WalkKernel, params: ModelParams, upto: int) -> float:
    """I_upto as a literal masked double sum over a stored kernel table."""
    if upto > kernel.horizon:
        raise ConfigError(f"kernel horizon {kernel.horizon} < requested {upto}")
    if kernel.d != params.d:
        raise ConfigError("kernel and params disagree on dimension")
    total = 0.0
    for n in range(1, upto + 1):
        layer = kernel.layer(n)
        ax = np.arange(-n, n + 1, dtype=np.int64)
        grids = np.meshgrid(*([ax] * params.d), indexing="ij")
        coords = np.stack(grids, axis=-1).reshape(-1, params.d)
        mask = region_membership(params, n, coords)
        total += float(np.sum((layer.reshape(-1) ** 2)[mask]))
    return total


def intersection_profile(params: ModelParams, n_values) -> np.ndarray:
    """Exact I_N along a grid of horizons, via the closed summation routes.

    For tubes with a > 0 the region radius itself depends on the horizon, so
    each grid point is evaluated under its own params(N); radius-stationary
    geometries (cones, a = 0, R = 0) share one cumulative pass.
    """
    n_values = np.atleast_1d(np.asarray(n_values, dtype=np.int64))
    if np.any(n_values < 1):
        raise ConfigError("horizons must be >= 1")
    out = np.empty(n_values.size)
    stationary = params.geometry == "cone" or params.a == 0.0 or params.R == 0.0
    if stationary:
        top = int(n_values.max())
        csum = np.cumsum(inner_square_sums(replace(params, N=top), top))
        for i, n in enumerate(n_values):
            out[i] = csum[int(n)]
    else:
        for i, n in enumerate(n_values):
            pn = replace(params, N=int(n))
            out[i] = float(np.sum(inner_square_sums(pn, int(n))))
    return out


# ---------------------------------------------------------------------------
# asymptotic branch table


@dataclass(frozen=True)
class GrowthLaw:
    """Predicted overlap growth I_N ~ constant * N^power * (log N)^log_power."""

    branch: str
    constant: float
    power: float
    log_power: int

    def at(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=np.float64)
        return self.constant * n**self.power * np.log(n) ** self.log_power

    @property
    def label(self) -> str:
        if self.power == 0 and self.log_power == 0:
            return "constant"
        parts = []
        if self.power:
            parts.append(f"N^{self.power:g}")
        if self.log_power:
            parts.append("log(N)")
        return "*".join(parts)


def half_tube_constant(R: float) -> float:
    """Leading constant for d=1, a=1/2 tubes:

        (1/pi) int_0^1 t^{-1/2} int_{|x| <= R/sqrt(t)} e^{-x^2} dx dt,

    reduced via t = u^2 to (2/sqrt(pi)) int_0^1 erf(R/u) du, which removes
    the integrable endpoint singularity before quadrature.
    """
    if R <= 0:
        raise ConfigError("half_tube_constant needs R > 0")
    val, _ = quad(lambda u: math.erf(R / u), 0.0, 1.0, epsabs=1e-12, epsrel=1e-12)
    return 2.0 / math.sqrt(math.pi) * val


_constant_cache: dict = {}


def walk_collision_constant(d: int = 3, n_cut: int = 10_000) -> float:
    """sum_{n >= 1} p_{2n}(0) for the transient walk (d >= 3).

    Partial summation to n_cut plus a tail completion: p_{2n}(0) =
    c_d n^{-d/2} (1 + e1/n + O(n^-2)) with c_d = 2 (d / (4 pi))^{d/2}, so
    the tail equals c_d (zeta(d/2, n_cut+1) + e1 zeta(d/2+1, n_cut+1)) up to
    O(n_cut^{-d/2-1}); e1 is fitted from the last computed term.  The
    completion is good to ~1e-9 and in any case certified inside
    [0, c_d zeta(d/2, n_cut+1) (1 + 1/n_cut)].
    """
    if d < 3:
        raise ConfigError("the collision series diverges for d < 3")
    key = (d, n_cut)
    if key not in _constant_cache:
        q = _return_curve(d, n_cut)
        cd = 2.0 * (d / (4.0 * math.pi)) ** (d / 2.0)
        e1 = (q[n_cut] * n_cut ** (d / 2.0) / cd - 1.0) * n_cut
        tail = cd * (zeta(d / 2.0, n_cut + 1) + e1 * zeta(d / 2.0 + 1.0, n_cut + 1))
        _constant_cache[key] = float(np.sum(q[1:])) + float(tail)
    return _constant_cache[key]


def _overlap_series(params: ModelParams, n_cut: int) -> float:
    """Partial sum of the convergent overlap series for bounded-I_N cells."""
    key = (params.d, params.geometry, params.a, params.R, n_cut)
    if key not in _constant_cache:
        pn = replace(params, N=n_cut)
        _constant_cache[key] = float(np.sum(inner_square_sums(pn, n_cut)))
    return _constant_cache[key]


def _branch(params: ModelParams) -> tuple[str, float, int]:
    """(branch name, N power, log power) of the growth law, constants aside."""
    d, a, R = params.d, params.a, params.R
    pinned = R == 0.0 or a == 0.0
    if params.geometry == "tube":
        if d == 1:
            if pinned:
                return "pinning-log", 0.0, 1
            if a < 0.5:
                return "narrow-tube", a, 1
            return ("half-tube", 0.5, 0) if a == 0.5 else ("wide-tube", 0.5, 0)
        if d == 2:
            return ("overlap-series", 0.0, 0) if pinned else ("log-plane", 0.0, 1)
        return ("collision-series", 0.0, 0) if (R > 0.0 and a > 0.0) \
            else ("overlap-series", 0.0, 0)
    if d == 1:
        if pinned:
            return "pinning-log", 0.0, 1
        if a < 0.5:
            return "cone-power", a, 0
        return ("half-cone", 0.5, 0) if a == 0.5 else ("wide-tube", 0.5, 0)
    if d == 2:
        if pinned or a < 0.5:
            return "overlap-series", 0.0, 0
        return "cone-log", 0.0, 1
    if R >= 1.0 and a == 1.0:
        return "collision-series", 0.0, 0
    return "overlap-series", 0.0, 0


def growth_law(params: ModelParams, series_cut: int = 20_000) -> GrowthLaw:
    """The asymptotic branch for one cell, constant included (may trigger a
    one-off cached quadrature or series evaluation)."""
    branch, power, logpow = _branch(params)
    d, a, R = params.d, params.a, params.R
    if branch == "pinning-log":
        c = (2 * math.floor(R) + 1) / math.pi
    elif branch == "narrow-tube":
        c = 2 * (1 - 2 * a) * R / math.pi
    elif branch == "half-tube":
        c = half_tube_constant(R)
    elif branch == "wide-tube":
        c = 2.0 / math.sqrt(math.pi)
    elif branch == "log-plane":
        c = min(2 * a, 1.0) / math.pi
    elif branch == "cone-power":
        c = 2 * R / (a * math.pi)
    elif branch == "half-cone":
        c = 2.0 / math.sqrt(math.pi) * math.erf(R)
    elif branch == "cone-log":
        c = 1.0 / math.pi if a > 0.5 else (1.0 - math.exp(-2.0 * R * R)) / math.pi
    elif branch == "collision-series":
        c = walk_collision_constant(d)
    else:  # overlap-series: converging sum of per-time ball overlaps
        if d == 3:
            cut = min(series_cut, _D3_DP_MAX_N)
        elif params.geometry == "cone" and a > 0:
            cut = min(series_cut, 4000)
        else:
            cut = min(series_cut, 20_000)
        c = _overlap_series(params, cut)
    return GrowthLaw(branch, c, power, logpow)


def intersection_asymptotic(params: ModelParams, n) -> np.ndarray:
    """Predicted I_N from the branch table (vectorised over horizons)."""
    return growth_law(params).at(n)


def cone_asymptotic(params: ModelParams, n) -> np.ndarray:
    """Predicted I_N for cone regions (growing radius R n^a)."""
    if params.geometry != "cone":
        raise ConfigError("cone_asymptotic needs geometry='cone'")
    return growth_law(params).at(n)


# ---------------------------------------------------------------------------
# regimes, schedules, limit variance


def sigma_squared(d: int, a: float, beta_hat: float) -> float:
    """Variance parameter of the marginal-regime log-normal limit.

    d=1, a in [0, 1/2):  log((1 - 2 a bhat^2) / (1 - bhat^2))
    d=2, a in (0, 1]:    log(1 / (1 - bhat^2))

    Only defined below the critical coupling bhat = 1; at bhat >= 1 the
    rescaled partition function degenerates to 0 and no variance exists.
    """
    if not 0.0 <= beta_hat < 1.0:
        raise ConfigError(f"sigma^2 requires 0 <= beta_hat < 1, got {beta_hat}")
    if d == 1 and 0.0 <= a < 0.5:
        return math.log((1.0 - 2.0 * a * beta_hat**2) / (1.0 - beta_hat**2))
    if d == 2 and 0.0 < a <= 1.0:
        return math.log(1.0 / (1.0 - beta_hat**2))
    raise ConfigError(f"no marginal-regime variance for d={d}, a={a}")


@dataclass(frozen=True)
class RegimeReport:
    """Outcome of the disorder-relevance classification for one cell."""

    params: ModelParams
    regime: str
    schedule_kind: str
    schedule_text: str
    sigma_sq: float | None
    i_n_text: str
    note: str = ""


_SCHEDULE_TEXT = {
    "quarter-power": "bhat * N^(-1/4)",
    "pinning-log": "bhat * sqrt(pi / ((2*floor(R)+1) * log(N)))",
    "narrow-tube": "bhat * sqrt(pi / (2*(1-2a)*R * N^a * log(N)))",
    "log-plane": "bhat * sqrt(pi / (min(2a,1) * log(N)))",
    "cone-log": "bhat / sqrt(C * log(N))",
    "none": "externally supplied",
}


def _regime_kind(params: ModelParams) -> tuple[str, str, str]:
    d, a, R = params.d, params.a, params.R
    pinned = R == 0.0 or a == 0.0
    if params.geometry == "tube":
        if d == 1:
            if R > 0.0 and a >= 0.5:
                return RELEVANT, "quarter-power", ""
            if pinned:
                note = ("a > 0 with R = 0 reduces to point pinning (a = 0, R < 1)"
                        if a > 0.0 else "")
                return MARGINAL, "pinning-log", note
            return MARGINAL, "narrow-tube", ""
        if d == 2 and R > 0.0 and a > 0.0:
            return MARGINAL, "log-plane", ""
        return IRRELEVANT, "none", ""
    if d == 1:
        if R > 0.0 and a >= 0.5:
            return RELEVANT, "quarter-power", ""
        if pinned:
            return MARGINAL, "pinning-log", "point pinning"
        raise ConfigError(
            "no relevance classification for cones with d=1, 0 < a < 1/2: "
            "second-moment asymptotics are too rough to settle the phase there")
    if d == 2 and R > 0.0 and a >= 0.5:
        return MARGINAL, "cone-log", ""
    return IRRELEVANT, "none", ""


def classify_regime(params: ModelParams, beta_hat: float | None = None) -> RegimeReport:
    """Relevance regime, schedule text and (marginal case) limit variance."""
    regime, kind, note = _regime_kind(params)
    sigma = None
    if regime == MARGINAL and beta_hat is not None:
        if beta_hat >= 1.0:
            note = (note + "; " if note else "") + \
                "beta_hat >= 1: rescaled partition function degenerates to 0"
        elif params.d == 1:
            a_eff = 0.0 if (params.R == 0.0 or params.a == 0.0) else params.a
            sigma = sigma_squared(1, a_eff, beta_hat)
        else:
            sigma = sigma_squared(2, params.a, beta_hat)
    branch, power, logpow = _branch(params)
    i_n_text = GrowthLaw(branch, 1.0, power, logpow).label
    return RegimeReport(params=params, regime=regime, schedule_kind=kind,
                        schedule_text=_SCHEDULE_TEXT[kind], sigma_sq=sigma,
                        i_n_text=i_n_text, note=note)


@dataclass(frozen=True)
class Schedule:
    """The coupling schedule N |-> beta_N for a relevant or marginal cell.

    Calling evaluates the printed closed form; via_overlap gives the
    equivalent normalisation beta_hat / sqrt(predicted I_N) (identical for
    the marginal cases, proportional in the relevant one, whose
    quarter-power form absorbs the branch constant into the limit object).
    """

    params: ModelParams
    beta_hat: float
    kind: str
    law: GrowthLaw = field(repr=False)

    def __call__(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=np.float64)
        if np.any(n < 2):
            raise ConfigError("schedules need N >= 2")
        p = self.params
        if self.kind == "quarter-power":
            return self.beta_hat * n**-0.25
        if self.kind == "pinning-log":
            return self.beta_hat * np.sqrt(
                math.pi / ((2 * math.floor(p.R) + 1) * np.log(n)))
        if self.kind == "narrow-tube":
            return self.beta_hat * np.sqrt(
                math.pi / (2 * (1 - 2 * p.a) * p.R * n**p.a * np.log(n)))
        if self.kind == "log-plane":
            return self.beta_hat * np.sqrt(
                math.pi / (min(2 * p.a, 1.0) * np.log(n)))
        # cone-log: no printed closed form beyond bhat / sqrt(C log N)
        return self.via_overlap(n)

    def via_overlap(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=np.float64)
        if np.any(n < 2):
            raise ConfigError("schedules need N >= 2")
        return self.beta_hat / np.sqrt(self.law.at(n))


def beta_schedule(params: ModelParams, beta_hat: float) -> Schedule:
    """Schedule factory per the cell's regime; errors for irrelevant cells,
    where beta_N carries no intrinsic normalisation and is caller-supplied."""
    if beta_hat < 0:
        raise ConfigError("beta_hat must be nonnegative")
    regime, kind, _ = _regime_kind(params)
    if regime == IRRELEVANT:
        raise ConfigError("irrelevant regime has no intrinsic schedule; "
                          "supply beta_N directly")
    return Schedule(params=params, beta_hat=beta_hat, kind=kind,
                    law=growth_law(params))
