"""Polynomial chaos decomposition of the partition function.

Because each in-region site contributes the factor 1 + beta*xi with
xi = (exp(beta*omega - lambda) - 1)/beta, expanding the product over a
path's visits gives the exact finite decomposition

    Z_N = 1 + sum_{k=1}^{N} beta^k Z_{N,k},
    Z_{N,k} = sum_{n_1<...<n_k} sum_{x_j in-region}
              prod_j p_{n_j - n_{j-1}}(x_j - x_{j-1}) * xi(n_j, x_j).

The xi variables are centred and site-independent, so terms of distinct
order are orthogonal and Var(Z_{N,k}) = E[xi^2]^k * (an ordered sum of
squared kernels).  This module evaluates terms and exact term variances by
order-layered recursions, checks orthogonality empirically, and bounds the
truncation tail through a relaxed overlap sum with doubled region radius.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .environment import (
    DisorderField,
    ModelParams,
    NoiseTransform,
    collision_gamma,
    sample_field,
)
from .errors import ConfigError, ResourceBudgetError
from .intersection import inner_square_sums
from .walk_kernel import WalkKernel

DEFAULT_CHAOS_BUDGET_BYTES = 1 << 30
DEFAULT_TRUNCATION_ORDER = 12


@dataclass(frozen=True)
class ChaosDecomposition:
    """Term values Z_{N,1}..Z_{N,K} for one disorder field."""

    params: ModelParams
    beta: float
    terms: tuple
    field_seed: int

    @property
    def order(self) -> int:
        return len(self.terms)

    def reconstruct(self) -> float:
        """1 + sum beta^k Z_{N,k}; equals Z_N exactly when K = N."""
        z = 1.0
        for k in range(self.order, 0, -1):
            z += self.beta**k * self.terms[k - 1]
        return z


@dataclass
class OrthogonalityReport:
    """Empirical cross-moments E[Z_{N,k} Z_{N,l}] over sampled fields.

    ``moments[k-1, l-1]`` estimates E[Z_{N,k} Z_{N,l}]; ``std_errors``
    holds the matching standard errors, and ``means``/``mean_std_errors``
    the first moments (all of which should be statistically zero).
    """

    params: ModelParams
    beta: float
    n_fields: int
    seed: int
    moments: np.ndarray
    std_errors: np.ndarray
    means: np.ndarray
    mean_std_errors: np.ndarray


def _shift_average(g: np.ndarray, d: int) -> np.ndarray:
    """Neighbour average along the last d axes of a fixed-size box."""
    out = np.zeros_like(g)
    w = 1.0 / (2 * d)
    nd = g.ndim
    for axis in range(nd - d, nd):
        src_lo = [slice(None)] * nd
        dst_lo = [slice(None)] * nd
        src_lo[axis] = slice(1, None)
        dst_lo[axis] = slice(None, -1)
        out[tuple(dst_lo)] += w * g[tuple(src_lo)]
        out[tuple(src_lo)] += w * g[tuple(dst_lo)]
    return out


def chaos_terms(params: ModelParams, field: DisorderField, beta: float,
                K: int, mem_budget: int = DEFAULT_CHAOS_BUDGET_BYTES) -> ChaosDecomposition:
    """Evaluate Z_{N,1}..Z_{N,K} exactly by an order-layered recursion.

    Carries one spatial box per chaos order; stepping propagates every
    order with the walk kernel, then each in-region site promotes order
    k-1 mass to order k with weight xi(n, x).  Orders are updated highest
    first so a site never contributes twice at the same time slot.
    """
    if field.params != params:
        raise ConfigError("disorder field was sampled for different parameters")
    if beta < 0:
        raise ConfigError("beta must be nonnegative")
    if not 1 <= K <= params.N:
        raise ConfigError("truncation order K must satisfy 1 <= K <= N")
    if params.d == 3:
        raise ConfigError("chaos recursions cover d <= 2")
    side = 2 * params.N + 1
    need = 2 * (K + 1) * side**params.d * 8
    if need > mem_budget:
        raise ResourceBudgetError(
            f"order-layered recursion needs {need} bytes, budget {mem_budget}")
    transform = NoiseTransform(params.law, beta)
    c = params.N
    g = np.zeros((K + 1,) + (side,) * params.d)
    g[(0,) + (c,) * params.d] = 1.0
    for n in range(1, params.N + 1):
        g = _shift_average(g, params.d)
        b = field.half_width(n)
        m = min(n, b)
        blk = (slice(b - m, b + m + 1),) * params.d
        mask = field.masks[n][blk]
        if mask.any():
            xi = np.where(mask, transform.apply(field.layers[n][blk]), 0.0)
            box = (slice(c - m, c + m + 1),) * params.d
            for k in range(min(K, n), 0, -1):
                g[(k,) + box] += g[(k - 1,) + box] * xi
    sums = g.reshape(K + 1, -1).sum(axis=1)
    return ChaosDecomposition(params=params, beta=beta,
                              terms=tuple(float(s) for s in sums[1:]),
                              field_seed=field.seed)


# ---------------------------------------------------------------------------
# exact term variances


def _kernel_sq(kernel: WalkKernel, dn: int, dx: np.ndarray) -> np.ndarray:
    """p_dn(dx)^2 gathered from a kernel layer; out-of-reach entries are 0."""
    layer = kernel.layer(dn)
    d = kernel.d
    ok = np.all(np.abs(dx) <= dn, axis=-1)
    idx = tuple(np.where(ok[..., None], dx + dn, 0)[..., i] for i in range(d))
    vals = layer[idx]
    return np.where(ok, vals * vals, 0.0)


def _live_site_lists(params: ModelParams, kernel: WalkKernel):
    """Per-layer in-region reachable sites with their squared kernel mass."""
    from .environment import _live_mask, region_radius

    radii = region_radius(params, np.arange(1, params.N + 1))
    out = []
    for n in range(1, params.N + 1):
        b = min(int(np.floor(radii[n - 1])), n)
        mask = _live_mask(params, n, b)
        if not mask.any():
            continue
        xy = np.argwhere(mask) - b
        layer = kernel.layer(n)
        psq = layer[tuple((xy + n).T)] ** 2
        out.append((n, xy, psq))
    return out


def ordered_square_sums(params: ModelParams, kernel: WalkKernel,
                        k_max: int) -> np.ndarray:
    """S_k = sum over ordered in-region site tuples of prod p^2, k = 1..k_max.

    These are the disorder-free factors of the term variances:
    Var(Z_{N,k}) = E[xi^2]^k * S_k, and S_1 is the overlap sum I_N.  The
    recursion promotes squared-kernel mass through the same ordered-site
    structure as the terms themselves.
    """
    if k_max < 1:
        raise ConfigError("k_max must be at least 1")
    if params.d == 3:
        raise ConfigError("ordered square sums cover d <= 2")
    if kernel.d != params.d or kernel.horizon < params.N:
        raise ConfigError("kernel does not cover this model cell")
    sites = _live_site_lists(params, kernel)
    total_sites = sum(s[2].size for s in sites)
    if k_max * 0.5 * total_sites**2 > 4.0e8:
        raise ResourceBudgetError(
            "ordered square sums past the transition work cap; reduce N or k")
    sums = np.zeros(k_max)
    prev = {n: psq.copy() for n, xy, psq in sites}
    sums[0] = sum(float(v.sum()) for v in prev.values())
    for k in range(2, k_max + 1):
        cur = {}
        for i, (n, xy, _) in enumerate(sites):
            acc = None
            for m, my, _ in sites[:i]:
                if m >= n:
                    break
                w = prev.get(m)
                if w is None:
                    continue
                trans = _kernel_sq(kernel, n - m, xy[:, None, :] - my[None, :, :])
                v = trans @ w
                acc = v if acc is None else acc + v
            if acc is not None:
                cur[n] = acc
        prev = cur
        sums[k - 1] = sum(float(v.sum()) for v in prev.values())
    return sums


def chaos_term_variance_exact(params: ModelParams, kernel: WalkKernel,
                              k: int, beta: float) -> float:
    """Exact Var(Z_{N,k}): E[xi^2]^k times the ordered squared-kernel sum."""
    if beta < 0:
        raise ConfigError("beta must be nonnegative")
    s_k = ordered_square_sums(params, kernel, k)[k - 1]
    return NoiseTransform(params.law, beta).variance() ** k * s_k


# ---------------------------------------------------------------------------
# empirical orthogonality


def orthogonality_check(params: ModelParams, n_fields: int, K: int,
                        seed: int, beta: float = 0.5) -> OrthogonalityReport:
    """Estimate E[Z_{N,k} Z_{N,l}] for k, l <= K over sampled fields.

    Distinct orders are orthogonal and every order is centred, so off
    diagonals and means should sit within a few standard errors of zero
    while diagonals estimate the exact term variances.
    """
    if n_fields < 2:
        raise ConfigError("n_fields must be at least 2 for standard errors")
    terms = np.empty((n_fields, K))
    for i in range(n_fields):
        fld = sample_field(params, rng.derive_seed(seed, i))
        terms[i] = chaos_terms(params, fld, beta, K).terms
    prods = terms[:, :, None] * terms[:, None, :]
    moments = prods.mean(axis=0)
    std_errors = prods.std(axis=0, ddof=1) / np.sqrt(n_fields)
    return OrthogonalityReport(
        params=params, beta=beta, n_fields=n_fields, seed=seed,
        moments=moments, std_errors=std_errors,
        means=terms.mean(axis=0),
        mean_std_errors=terms.std(axis=0, ddof=1) / np.sqrt(n_fields))


# ---------------------------------------------------------------------------
# truncation control


def truncation_bound(params: ModelParams, beta_n: float, K: int) -> float:
    """Upper bound on sum_{k>K} beta^{2k} Var(Z_{N,k}).

    Relaxing the ordered time-space sums to independent increments inside
    the doubled-radius region bounds each term variance by (E[xi^2] *
    I-hat)^k with I-hat the overlap sum at radius 2R; the tail is then a
    geometric series with ratio beta^2 E[xi^2] I-hat.  Returns inf when
    the ratio reaches 1 (a vacuous bound, reported rather than raised).
    """
    if beta_n < 0:
        raise ConfigError("beta must be nonnegative")
    if K < 0:
        raise ConfigError("K must be nonnegative")
    if beta_n == 0.0:
        return 0.0
    relaxed = replace(params, R=2 * params.R)
    i_hat = float(inner_square_sums(relaxed)[1:].sum())
    ratio = collision_gamma(params.law, beta_n) * i_hat
    if ratio >= 1.0:
        return np.inf
    return ratio ** (K + 1) / (1.0 - ratio)
