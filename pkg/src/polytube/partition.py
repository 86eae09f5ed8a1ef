"""Quenched partition functions and their disorder moments.

The polymer weight of a path is exp(sum of beta*omega - lambda(beta) over
its in-region sites), so Z_N averages to 1 over the disorder.  This module
evaluates Z_N exactly by a space-time transfer recursion (log-rescaled per
layer so horizons of 10^5 steps stay in range), estimates it by path Monte
Carlo, and computes disorder moments: the annealed mean E[Z_N], the exact
second moment E[Z_N^2] via a collision-time decomposition of a replica
pair, and fractional moments E[Z_N^theta] under common random numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import rng, walk_kernel
from .environment import (
    DisorderField,
    ModelParams,
    _draw_sites,
    _live_mask,
    collision_gamma,
    log_mgf,
    region_radius,
    sample_field,
)
from .errors import ConfigError, ResourceBudgetError

DEFAULT_DP_BUDGET_BYTES = 1 << 30
# transition-evaluation caps for the exact pair-collision recursions
_PAIR_BAND_WORK_CAP = 4.0e10
_PAIR_SITE_WORK_CAP = 2.0e8
_RESCALE_STRIDE = 32


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class PartitionResult:
    """One evaluation of the partition function for a fixed disorder field.

    ``log_z`` is always finite; ``z`` overflows to inf only past exp's
    range.  For Monte Carlo estimates ``std_error`` is the standard error
    of the linear-domain estimate over ``n_paths`` sampled paths.
    """

    log_z: float
    params: ModelParams
    beta: float
    seed: int
    std_error: float | None = None
    n_paths: int | None = None

    @property
    def z(self) -> float:
        try:
            return math.exp(self.log_z)
        except OverflowError:
            return math.inf


@dataclass(frozen=True)
class SecondMomentResult:
    """Exact disorder second moment E[Z_N^2] (= 1 + collision mass)."""

    e_z2: float
    params: ModelParams
    beta: float
    route: str


@dataclass(frozen=True)
class MomentEstimate:
    """A sample mean with its standard error."""

    value: float
    std_error: float
    n_samples: int


@dataclass
class FractionalMomentCurve:
    """E[Z^theta] along a beta grid, one common disorder set for all betas.

    ``per_field[i, j]`` is Z(beta_j; field_i)^theta, so paired differences
    across the grid (the honest way to test monotonicity under common
    random numbers) can be formed downstream.
    """

    theta: float
    betas: np.ndarray
    values: np.ndarray
    std_errors: np.ndarray
    per_field: np.ndarray
    params: ModelParams
    seed: int


# ---------------------------------------------------------------------------
# shared helpers


def _int_span(rad: float) -> int:
    """Largest integer t >= 0 with t*t <= rad*rad.

    Bit-for-bit the same boundary as region membership, which compares
    squared norms against rad*rad in floating point.
    """
    t = max(int(math.floor(rad)), 0)
    while (t + 1.0) * (t + 1.0) <= rad * rad:
        t += 1
    while t > 0 and t * t > rad * rad:
        t -= 1
    return t


def _check_pair(params: ModelParams, field: DisorderField, beta: float) -> None:
    if field.params != params:
        raise ConfigError("disorder field was sampled for different parameters")
    if beta < 0:
        raise ConfigError("beta must be nonnegative")


def _sample_std_error(values: np.ndarray) -> float:
    n = values.size
    if n < 2:
        return math.nan
    return float(np.std(values, ddof=1)) / math.sqrt(n)


# ---------------------------------------------------------------------------
# exact transfer recursion


def partition_exact(params: ModelParams, field: DisorderField, beta: float,
                    log_domain: bool = True,
                    mem_budget: int = DEFAULT_DP_BUDGET_BYTES) -> PartitionResult:
    """Exact Z_N by the forward transfer recursion over the reachable cone.

    Layer n holds f_n(x) = E[weight of steps 1..n; S_n = x] on the full box
    |x|_inf <= n -- paths may leave the region and re-enter, so the state
    space is never clipped to the tube.  Each step averages the 2d
    neighbours, then multiplies exp(beta*omega - lambda) on in-region
    sites.  With ``log_domain`` every layer is rescaled by its maximum and
    the log offset accumulated; otherwise the recursion runs in raw linear
    arithmetic (useful only as a cross-check on short horizons).
    """
    _check_pair(params, field, beta)
    if beta == 0.0:
        return PartitionResult(log_z=0.0, params=params, beta=beta, seed=field.seed)
    peak = 2 * (2 * params.N + 1) ** params.d * 8
    if peak > mem_budget:
        raise ResourceBudgetError(
            f"transfer recursion needs {peak} bytes of layer storage, "
            f"budget is {mem_budget}")
    lam = log_mgf(params.law, beta)
    f = np.ones((1,) * params.d)
    log_off = 0.0
    for n in range(1, params.N + 1):
        f = walk_kernel._next_layer(f, params.d)
        b = field.half_width(n)
        m = min(n, b)
        blk = (slice(b - m, b + m + 1),) * params.d
        mask = field.masks[n][blk]
        if mask.any():
            mult = np.where(mask, np.exp(beta * field.layers[n][blk] - lam), 1.0)
            f[(slice(n - m, n + m + 1),) * params.d] *= mult
        if log_domain:
            s = float(f.max())
            log_off += math.log(s)
            f /= s
    log_z = log_off + math.log(float(f.sum()))
    return PartitionResult(log_z=log_z, params=params, beta=beta, seed=field.seed)


# ---------------------------------------------------------------------------
# path Monte Carlo


def partition_mc(params: ModelParams, field: DisorderField, beta: float,
                 n_paths: int, seed: int) -> PartitionResult:
    """Monte Carlo Z_N: average the polymer weight over sampled walk paths.

    All ``n_paths`` paths advance in lockstep; at beta = 0 every weight is
    identically 1, so the estimate is exactly 1 with zero standard error.
    """
    _check_pair(params, field, beta)
    if n_paths < 1:
        raise ConfigError("n_paths must be at least 1")
    if beta == 0.0:
        return PartitionResult(log_z=0.0, params=params, beta=beta,
                               seed=field.seed, std_error=0.0, n_paths=n_paths)
    lam = log_mgf(params.law, beta)
    gen = np.random.default_rng(rng.derive_seed(seed, 0x70617468))
    pos = np.zeros((n_paths, params.d), dtype=np.int64)
    log_w = np.zeros(n_paths)
    rows = np.arange(n_paths)
    radii = region_radius(params, np.arange(1, params.N + 1))
    for n in range(1, params.N + 1):
        signs = 2 * gen.integers(0, 2, n_paths, dtype=np.int64) - 1
        if params.d == 1:
            pos[:, 0] += signs
        else:
            axes = gen.integers(0, params.d, n_paths)
            pos[rows, axes] += signs
        rad = float(radii[n - 1])
        r2 = np.sum(pos.astype(np.float64) ** 2, axis=1)
        live = r2 <= rad * rad
        if live.any():
            b = field.half_width(n)
            omega = field.layers[n][tuple((pos[live] + b).T)]
            log_w[live] += beta * omega - lam
    z = np.exp(log_w)
    est = float(z.mean())
    return PartitionResult(log_z=math.log(est), params=params, beta=beta,
                           seed=field.seed, std_error=_sample_std_error(z),
                           n_paths=n_paths)


# ---------------------------------------------------------------------------
# replica ensembles (d = 1)


def ensemble_log_z_1d(params: ModelParams, beta: float, seed: int,
                      n_rep: int) -> np.ndarray:
    """log Z for ``n_rep`` independent disorder fields, one batched recursion.

    Replica r's field is counter-keyed by (seed, n, x, r), so the same seed
    reproduces the same ensemble for every beta (common random numbers come
    for free), and replica 0 coincides with ``sample_field(params, seed)``.
    All replicas share the layer loop: the state is an (n_rep, 2N+1) slab
    advanced and reweighted with vector operations.
    """
    if params.d != 1:
        raise ConfigError("batched ensembles cover d = 1 only")
    if beta < 0:
        raise ConfigError("beta must be nonnegative")
    if n_rep < 1:
        raise ConfigError("n_rep must be at least 1")
    if beta == 0.0:
        return np.zeros(n_rep)
    lam = log_mgf(params.law, beta)
    radii = region_radius(params, np.arange(1, params.N + 1))
    reps = np.arange(n_rep, dtype=np.int64)[:, None]
    c = params.N
    cur = np.zeros((n_rep, 2 * params.N + 1))
    nxt = np.zeros_like(cur)
    cur[:, c] = 1.0
    log_off = np.zeros(n_rep)
    for n in range(1, params.N + 1):
        lo, hi = c - n, c + n
        np.add(cur[:, lo:hi - 1], cur[:, lo + 2:hi + 1], out=nxt[:, lo + 1:hi])
        nxt[:, lo + 1:hi] *= 0.5
        nxt[:, lo] = 0.5 * cur[:, lo + 1]
        nxt[:, hi] = 0.5 * cur[:, hi - 1]
        m = min(_int_span(float(radii[n - 1])), n)
        xs = np.arange(-m, m + 1, dtype=np.int64)
        xs = xs[(xs + n) % 2 == 0]
        if xs.size:
            omega = _draw_sites(params.law, seed, n, [xs[None, :], reps])
            nxt[:, c + xs] *= np.exp(beta * omega - lam)
        if n % _RESCALE_STRIDE == 0 or n == params.N:
            s = nxt[:, lo:hi + 1].max(axis=1)
            log_off += np.log(s)
            nxt[:, lo:hi + 1] /= s[:, None]
        cur, nxt = nxt, cur
    return log_off + np.log(cur.sum(axis=1))


def annealed_mean(params: ModelParams, beta: float, n_fields: int,
                  seed: int) -> MomentEstimate:
    """Estimate E[Z_N] by averaging exact Z over freshly drawn fields.

    Every Z is computed by the exact recursion, so the only error is the
    field sampling; the estimate should sit within a few standard errors
    of 1 whenever the moments are finite.  d = 1 uses the batched ensemble
    driver; higher dimensions draw one field at a time.
    """
    if n_fields < 2:
        raise ConfigError("n_fields must be at least 2 for a standard error")
    if params.d == 1:
        z = np.exp(ensemble_log_z_1d(params, beta, seed, n_fields))
    else:
        z = np.empty(n_fields)
        for i in range(n_fields):
            fld = sample_field(params, rng.derive_seed(seed, i))
            z[i] = partition_exact(params, fld, beta).z
    return MomentEstimate(value=float(z.mean()),
                          std_error=_sample_std_error(z), n_samples=n_fields)


def fractional_moment_curve(params: ModelParams, theta: float,
                            beta_grid, n_fields: int,
                            seed: int) -> FractionalMomentCurve:
    """E[Z^theta] along a beta grid with the same disorder at every beta.

    Common random numbers: field i is identical for all grid points, so
    the curve's shape is not blurred by independent sampling noise and
    paired differences between adjacent betas have small variance.  At
    beta = 0 the column is exactly 1.  Requires 0 < theta < 1.
    """
    if not 0.0 < theta < 1.0:
        raise ConfigError(f"theta must lie strictly between 0 and 1, got {theta}")
    if n_fields < 2:
        raise ConfigError("n_fields must be at least 2 for a standard error")
    betas = np.asarray(beta_grid, dtype=np.float64)
    if betas.ndim != 1 or betas.size == 0:
        raise ConfigError("beta_grid must be a nonempty 1-d sequence")
    if np.any(betas < 0):
        raise ConfigError("beta grid entries must be nonnegative")
    per_field = np.empty((n_fields, betas.size))
    fields = None
    if params.d != 1:
        fields = [sample_field(params, rng.derive_seed(seed, i))
                  for i in range(n_fields)]
    for j, beta in enumerate(betas):
        if beta == 0.0:
            per_field[:, j] = 1.0
        elif params.d == 1:
            log_z = ensemble_log_z_1d(params, float(beta), seed, n_fields)
            per_field[:, j] = np.exp(theta * log_z)
        else:
            for i, fld in enumerate(fields):
                per_field[i, j] = math.exp(
                    theta * partition_exact(params, fld, float(beta)).log_z)
    values = per_field.mean(axis=0)
    std_errors = per_field.std(axis=0, ddof=1) / math.sqrt(n_fields)
    return FractionalMomentCurve(theta=theta, betas=betas, values=values,
                                 std_errors=std_errors, per_field=per_field,
                                 params=params, seed=seed)


# ---------------------------------------------------------------------------
# exact second moment via the collision-time decomposition
#
# For two independent replicas, E[Z^2] = E[prod_n (1 + gamma 1{S_n = S'_n
# in region})] with gamma = exp(lambda(2 beta) - 2 lambda(beta)) - 1.
# Expanding the product over the set of joint collision sites gives
#   U(n, x) = gamma [ p_n(x)^2 + sum_{m<n, y} U(m, y) p_{n-m}(x - y)^2 ]
# over in-region sites, and E[Z^2] = 1 + sum U.  This collapses the
# replica-pair state space to one collision site per time, which is what
# makes horizons of 2^13 steps exact rather than Monte Carlo.


@njit(cache=True)
def _collision_dp_band(psq, p2, live, gamma):
    n_rows, width = psq.shape
    s2 = width - 1  # p2 rows are indexed by (x - y) + (width - 1)
    u = np.zeros((n_rows, width))
    total = 0.0
    for n in range(1, n_rows):
        for i in range(width):
            if not live[n, i]:
                continue
            acc = psq[n, i]
            for m in range(1, n):
                row = u[m]
                p2row = p2[n - m]
                for j in range(width):
                    if row[j] != 0.0:
                        acc += row[j] * p2row[i - j + s2]
            val = gamma * acc
            u[n, i] = val
            total += val
    return total


def _second_moment_band_1d(params: ModelParams, beta: float) -> float:
    radii = region_radius(params, np.arange(1, params.N + 1))
    s = min(_int_span(float(radii.max())), params.N)
    width = 2 * s + 1
    work = 0.25 * params.N**2 * width**2
    if work > _PAIR_BAND_WORK_CAP:
        raise ResourceBudgetError(
            f"collision recursion needs ~{work:.2g} transition evaluations, "
            f"cap is {_PAIR_BAND_WORK_CAP:.2g}")
    psq = np.zeros((params.N + 1, width))
    live = np.zeros((params.N + 1, width), dtype=np.bool_)
    xs = np.arange(-s, s + 1, dtype=np.int64)
    for n in range(1, params.N + 1):
        w = walk_kernel.pmf_window_1d(n, s)
        psq[n] = w * w
        rad = float(radii[n - 1])
        live[n] = ((xs.astype(np.float64) ** 2 <= rad * rad)
                   & ((xs + n) % 2 == 0) & (np.abs(xs) <= n))
    p2 = np.zeros((params.N, 4 * s + 1))
    for dn in range(1, params.N):
        w = walk_kernel.pmf_window_1d(dn, 2 * s)
        p2[dn] = w * w
    return 1.0 + _collision_dp_band(psq, p2, live, collision_gamma(params.law, beta))


def _second_moment_sites_2d(params: ModelParams, beta: float) -> float:
    radii = region_radius(params, np.arange(1, params.N + 1))
    bs = np.floor(radii).astype(np.int64)
    sites = {}
    for n in range(1, params.N + 1):
        b = int(bs[n - 1])
        mask = _live_mask(params, n, b)
        if mask.any():
            sites[n] = np.argwhere(mask) - b
    total_sites = sum(v.shape[0] for v in sites.values())
    work = 0.5 * total_sites**2
    if work > _PAIR_SITE_WORK_CAP:
        raise ResourceBudgetError(
            f"collision recursion needs ~{work:.2g} transition evaluations, "
            f"cap is {_PAIR_SITE_WORK_CAP:.2g}")
    b_max = int(bs.max())
    off = 4 * b_max
    q = np.zeros((params.N + 1, 8 * b_max + 1))
    for n in range(params.N + 1):
        q[n] = walk_kernel.pmf_window_1d(n, off)
    gamma = collision_gamma(params.law, beta)
    u = {}
    total = 0.0
    for n, xy in sites.items():
        su, sv = xy[:, 0] + xy[:, 1], xy[:, 0] - xy[:, 1]
        acc = (q[n, su + off] * q[n, sv + off]) ** 2
        for m, yx in u.items():
            if m >= n:
                continue
            du = su[:, None] - (yx[0][:, 0] + yx[0][:, 1])[None, :]
            dv = sv[:, None] - (yx[0][:, 0] - yx[0][:, 1])[None, :]
            trans = (q[n - m, du + off] * q[n - m, dv + off]) ** 2
            acc += trans @ yx[1]
        vals = gamma * acc
        u[n] = (xy, vals)
        total += float(vals.sum())
    return 1.0 + total


def _second_moment_renewal(params: ModelParams, beta: float) -> float:
    # Region covers every reachable site, so the collision recursion closes
    # over the time coordinate alone with the return-mass curve as kernel.
    gamma = collision_gamma(params.law, beta)
    q = walk_kernel.return_probability_curve(params.d, params.N)
    u = np.zeros(params.N + 1)
    for n in range(1, params.N + 1):
        u[n] = gamma * (q[n] + float(np.dot(u[1:n], q[n - 1:0:-1])))
    return 1.0 + float(u.sum())


def _region_covers_reach(params: ModelParams) -> bool:
    ns = np.arange(1, params.N + 1, dtype=np.float64)
    rad = region_radius(params, np.arange(1, params.N + 1))
    return bool(np.all(ns * ns <= rad * rad))


def second_moment_exact(params: ModelParams, beta: float) -> SecondMomentResult:
    """Exact E[Z_N^2], the disorder average taken in closed form.

    The pair-overlap weight gamma absorbs the disorder law entirely, so no
    field is ever sampled.  Route selection: regions containing the whole
    reachable cone reduce to a scalar renewal equation in any dimension;
    d = 1 runs the banded collision recursion; d = 2 enumerates in-region
    sites and is capped by total work.  E[Z^2] >= 1 always, with equality
    at beta = 0.
    """
    if beta < 0:
        raise ConfigError("beta must be nonnegative")
    if beta == 0.0:
        return SecondMomentResult(e_z2=1.0, params=params, beta=beta,
                                  route="zero-beta")
    if _region_covers_reach(params):
        return SecondMomentResult(e_z2=_second_moment_renewal(params, beta),
                                  params=params, beta=beta, route="renewal")
    if params.d == 1:
        return SecondMomentResult(e_z2=_second_moment_band_1d(params, beta),
                                  params=params, beta=beta, route="band-1d")
    if params.d == 2:
        return SecondMomentResult(e_z2=_second_moment_sites_2d(params, beta),
                                  params=params, beta=beta, route="sites-2d")
    raise ConfigError(
        "exact second moment supports d <= 2, or any d when the region "
        "contains every reachable site")
