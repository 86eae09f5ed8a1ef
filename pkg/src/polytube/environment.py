"""Model parameters, region geometry, and the random environment.

The polymer lives on time-space sites (n, x), 1 <= n <= N, x in Z^d, and is
rewarded only inside a region: a tube of fixed Euclidean radius R N^a, or a
cone of radius R n^a growing with time.  Disorder omega(n, x) is i.i.d.
standard Gaussian or Rademacher, materialised only on in-region sites that
the walk can actually reach (correct space-time parity), with one
counter-based stream per site so fields of different horizons agree on
shared sites.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ConfigError, ResourceBudgetError

DISORDER_LAWS = ("gaussian", "rademacher")
GEOMETRIES = ("tube", "cone")

DEFAULT_FIELD_BUDGET_BYTES = 1 << 29


@dataclass(frozen=True)
class ModelParams:
    """Static description of one polymer model cell."""

    d: int
    a: float
    R: float
    N: int
    law: str = "gaussian"
    geometry: str = "tube"

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigError(f"dimension must be 1, 2 or 3, got {self.d}")
        if not 0.0 <= self.a <= 1.0:
            raise ConfigError(f"tube exponent a must lie in [0, 1], got {self.a}")
        if self.R < 0:
            raise ConfigError(f"tube radius R must be nonnegative, got {self.R}")
        if self.N < 1:
            raise ConfigError(f"horizon N must be at least 1, got {self.N}")
        if self.law not in DISORDER_LAWS:
            raise ConfigError(f"unknown disorder law {self.law!r}")
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"unknown geometry {self.geometry!r}")


def region_radius(params: ModelParams, n) -> np.ndarray:
    """Euclidean radius of the region at time slot n (vectorised in n)."""
    n = np.asarray(n, dtype=np.float64)
    if params.geometry == "tube":
        return np.broadcast_to(params.R * float(params.N) ** params.a, n.shape).copy()
    return params.R * n**params.a


def region_membership(params: ModelParams, n, x) -> np.ndarray:
    """Whether sites (n, x) lie inside the region.

    ``x`` has shape (..., d) (or (d,) for a single site); ``n`` broadcasts
    against the leading axes.  Membership is |x|_2 <= radius with no
    rounding of the radius.
    """
    n_arr = np.asarray(n)
    if np.any(n_arr < 1) or np.any(n_arr > params.N):
        raise ConfigError("time slot n must satisfy 1 <= n <= N")
    x = np.asarray(x, dtype=np.int64)
    if x.shape[-1] != params.d:
        raise ConfigError(f"expected {params.d} coordinates, got shape {x.shape}")
    r2 = np.sum(x.astype(np.float64) ** 2, axis=-1)
    rad = region_radius(params, n_arr)
    return r2 <= rad * rad


def log_mgf(law: str, beta: float) -> float:
    """lambda(beta) = log E[exp(beta omega)] for the disorder law."""
    if law == "gaussian":
        return 0.5 * beta * beta
    if law == "rademacher":
        b = abs(beta)
        return b + math.log1p(math.exp(-2.0 * b)) - math.log(2.0)
    raise ConfigError(f"unknown disorder law {law!r}")


def collision_gamma(law: str, beta: float) -> float:
    """exp(lambda(2 beta) - 2 lambda(beta)) - 1, the pair-overlap weight.

    This is the exact factor a doubled environment contributes per site at
    which two replicas meet; gaussian: e^{beta^2}-1, rademacher: tanh^2 beta.
    """
    if law == "gaussian":
        return math.expm1(beta * beta)
    if law == "rademacher":
        return math.tanh(beta) ** 2
    raise ConfigError(f"unknown disorder law {law!r}")


@dataclass(frozen=True)
class NoiseTransform:
    """The centred exponential tilt xi = (exp(beta omega - lambda) - 1)/beta.

    E[xi] = 0 by construction; Var(xi) = (exp(lambda(2b)-2 lambda(b))-1)/b^2
    exactly.  At beta = 0 the transform degenerates to xi = omega.
    """

    law: str
    beta: float

    def __post_init__(self):
        if self.law not in DISORDER_LAWS:
            raise ConfigError(f"unknown disorder law {self.law!r}")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")

    def apply(self, omega: np.ndarray) -> np.ndarray:
        if self.beta == 0.0:
            return np.asarray(omega, dtype=np.float64).copy()
        lam = log_mgf(self.law, self.beta)
        return np.expm1(self.beta * np.asarray(omega, dtype=np.float64) - lam) / self.beta

    def variance(self) -> float:
        if self.beta == 0.0:
            return 1.0
        return collision_gamma(self.law, self.beta) / self.beta**2


def _live_mask(params: ModelParams, n: int, b: int) -> np.ndarray:
    """In-region, parity-reachable sites of the box [-b, b]^d at time n."""
    ax = np.arange(-b, b + 1, dtype=np.int64)
    grids = np.meshgrid(*([ax] * params.d), indexing="ij")
    r2 = sum(g.astype(np.float64) ** 2 for g in grids)
    rad = float(region_radius(params, n))
    mask = r2 <= rad * rad
    mask &= (sum(grids) + n) % 2 == 0
    # sites beyond the walk's reach at time n can never be visited
    if b > n:
        mask &= sum(np.abs(g) for g in grids) <= n
    return mask


@dataclass
class DisorderField:
    """Concrete disorder values on the live sites of one region.

    ``layers[n]`` (n = 1..N) is a dense d-dimensional array over the box
    [-b_n, b_n]^d with omega at live sites and 0.0 elsewhere; ``masks[n]``
    marks the live sites.
    """

    params: ModelParams
    seed: int
    layers: dict = field(repr=False)
    masks: dict = field(repr=False)

    def half_width(self, n: int) -> int:
        return (self.layers[n].shape[0] - 1) // 2

    def value(self, n: int, x) -> float:
        xs = np.atleast_1d(np.asarray(x, dtype=np.int64))
        b = self.half_width(n)
        if np.any(np.abs(xs) > b):
            return 0.0
        return float(self.layers[n][tuple(xs + b)])

    def site_count(self) -> int:
        return int(sum(m.sum() for m in self.masks.values()))


def _draw_sites(law: str, seed: int, ns, coords):
    if law == "gaussian":
        return rng.site_normals(seed, ns, coords)
    return rng.site_signs(seed, ns, coords)


def sample_field(params: ModelParams, seed: int,
                 mem_budget: int = DEFAULT_FIELD_BUDGET_BYTES) -> DisorderField:
    """Draw the environment for every live in-region site, counter-keyed.

    Each site's value is a pure function of (seed, n, x); fields sampled at
    different horizons therefore agree wherever their regions overlap.
    """
    radii = region_radius(params, np.arange(1, params.N + 1))
    bs = np.floor(radii).astype(np.int64)
    box_total = int(np.sum((2 * bs + 1) ** params.d))
    if box_total * 8 > mem_budget:
        raise ResourceBudgetError(
            f"field storage needs {box_total * 8} bytes, budget {mem_budget}")
    layers, masks = {}, {}
    flat_ns, flat_coords, slots = [], [[] for _ in range(params.d)], []
    for n in range(1, params.N + 1):
        b = int(bs[n - 1])
        mask = _live_mask(params, n, b)
        layers[n] = np.zeros(mask.shape)
        masks[n] = mask
        if mask.any():
            idx = np.nonzero(mask)
            flat_ns.append(np.full(idx[0].size, n, dtype=np.int64))
            for axis in range(params.d):
                flat_coords[axis].append(idx[axis].astype(np.int64) - b)
            slots.append((n, idx))
    if flat_ns:
        ns = np.concatenate(flat_ns)
        coords = [np.concatenate(c) for c in flat_coords]
        vals = _draw_sites(params.law, seed, ns, coords)
        pos = 0
        for n, idx in slots:
            k = idx[0].size
            layers[n][idx] = vals[pos:pos + k]
            pos += k
    return DisorderField(params=params, seed=seed, layers=layers, masks=masks)


def omega_matrix_1d(params: ModelParams, seed: int) -> tuple[np.ndarray, int]:
    """Fast path for d=1 tubes: dense (N, 2b+1) omega matrix, zeros off live sites.

    Returns (omega, b) with omega[n-1, x+b] the value at (n, x).  Site values
    coincide with sample_field's; used by the replica-heavy Monte Carlo loops
    where building a DisorderField per replica would dominate the run time.
    """
    if params.d != 1 or params.geometry != "tube":
        raise ConfigError("omega_matrix_1d only covers d=1 tube geometry")
    b = int(math.floor(float(region_radius(params, 1))))
    W = 2 * b + 1
    ns = np.repeat(np.arange(1, params.N + 1, dtype=np.int64), W)
    xs = np.tile(np.arange(-b, b + 1, dtype=np.int64), params.N)
    vals = _draw_sites(params.law, seed, ns, [xs]).reshape(params.N, W)
    grid_n = np.arange(1, params.N + 1, dtype=np.int64)[:, None]
    grid_x = np.arange(-b, b + 1, dtype=np.int64)[None, :]
    rad = float(region_radius(params, 1))
    live = (np.abs(grid_x) <= rad) & (np.abs(grid_x) <= grid_n) \
        & ((grid_n + grid_x) % 2 == 0)
    return np.where(live, vals, 0.0), b


def dump_field(fld: DisorderField, path) -> None:
    """Write the live sites as CSV rows (n, x_1..x_d, omega)."""
    d = fld.params.d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n"] + [f"x_{i+1}" for i in range(d)] + ["omega"])
        for n in sorted(fld.layers):
            mask = fld.masks[n]
            if not mask.any():
                continue
            b = fld.half_width(n)
            idx = np.nonzero(mask)
            vals = fld.layers[n][idx]
            for row in range(idx[0].size):
                coords = [int(idx[axis][row]) - b for axis in range(d)]
                w.writerow([n] + coords + [repr(float(vals[row]))])


def load_field(params: ModelParams, path, seed: int = -1) -> DisorderField:
    """Rebuild a DisorderField from a dump_field CSV."""
    radii = region_radius(params, np.arange(1, params.N + 1))
    bs = np.floor(radii).astype(np.int64)
    layers, masks = {}, {}
    for n in range(1, params.N + 1):
        b = int(bs[n - 1])
        masks[n] = _live_mask(params, n, b)
        layers[n] = np.zeros(masks[n].shape)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "n" or header[-1] != "omega":
            raise ConfigError(f"unrecognised field CSV header: {header}")
        for row in reader:
            n = int(row[0])
            coords = tuple(int(c) for c in row[1:-1])
            if len(coords) != params.d:
                raise ConfigError("field CSV dimension mismatch")
            b = int(bs[n - 1])
            if any(abs(c) > b for c in coords):
                raise ConfigError(f"site {coords} outside the region box at n={n}")
            layers[n][tuple(np.array(coords) + b)] = float(row[-1])
    return DisorderField(params=params, seed=seed, layers=layers, masks=masks)
