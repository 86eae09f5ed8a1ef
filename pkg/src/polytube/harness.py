"""Experiment orchestration: configs, CSV/manifest output, golden fixtures.

The harness turns a declarative experiment description (TOML file or
keyword dict) into validated work, dispatches to the owning module, and
persists flat CSV rows plus a JSON manifest.  It also re-runs small pinned
configurations against golden CSVs (``verify``) so a fresh checkout can
prove the numerical pipeline end to end.

Reproducibility contract: identical (config, seed) give byte-identical
output files at any thread count — grid cells are computed possibly in
parallel but written in submission order, and all randomness inside a cell
is keyed by (seed, site, replica) counters rather than draw order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, rng
from .environment import ModelParams, sample_field
from .errors import ConfigError, ResourceBudgetError
from .intersection import beta_schedule, classify_regime, growth_law
from .limit_laws import convergence_suite
from .partition import (
    ensemble_log_z_1d,
    fractional_moment_curve,
    partition_exact,
    second_moment_exact,
)

KINDS = ("intersect", "partition", "chaos", "regime-map", "converge",
         "fractional")

_CSV_NAMES = {
    "intersect": ("intersect.csv",),
    "partition": ("partition.csv", "second_moment.csv"),
    "chaos": ("chaos_terms.csv", "chaos_summary.csv"),
    "regime-map": ("regime_map.csv",),
    "converge": ("converge.csv",),
    "fractional": ("fractional.csv",),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one experiment run.

    ``cells`` lists (d, a, R) triples; the coupling is given either as a
    fixed ``beta``, as ``beta_hat`` (resolved through the regime's
    schedule), or as a power law beta_n_scale * N**beta_n_power.
    """

    kind: str
    cells: tuple = ()
    geometry: str = "tube"
    n_grid: tuple = ()
    law: str = "gaussian"
    beta: float | None = None
    beta_hat: float | None = None
    beta_n_power: float | None = None
    beta_n_scale: float = 1.0
    betas: tuple | None = None
    theta: float | None = None
    replicas: int = 0
    k_max: int | None = None
    seed: int = 0
    threads: int = 1
    out: str = "results"
    mem_budget: int | None = None

    def content_hash(self) -> str:
        """Short content hash over everything that shapes the numbers.

        ``out`` and ``threads`` are excluded: the destination and the
        worker count must not change any computed value.
        """
        d = asdict(self)
        d.pop("out")
        d.pop("threads")
        blob = json.dumps(d, sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def model_params(self, cell, N) -> ModelParams:
        d, a, R = cell
        return ModelParams(d=int(d), N=int(N), a=float(a), R=float(R),
                           geometry=self.geometry)


def _as_cells(raw) -> tuple:
    cells = []
    for c in raw:
        if len(c) != 3:
            raise ConfigError(f"grid cell {c!r} is not a (d, a, R) triple")
        cells.append((int(c[0]), float(c[1]), float(c[2])))
    return tuple(cells)


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build and validate a config from a plain mapping (TOML layout).

    Top-level keys: kind, seed, threads, out, law, geometry, mem_budget.
    Table ``[grid]``: cells, N.  Table ``[coupling]``: beta | beta_hat |
    beta_n_power (+ beta_n_scale), betas, theta, replicas, K.
    """
    data = dict(data)
    grid = dict(data.pop("grid", {}))
    coupling = dict(data.pop("coupling", {}))
    kw = {}
    for key in ("kind", "seed", "threads", "out", "law", "geometry",
                "mem_budget"):
        if key in data:
            kw[key] = data.pop(key)
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    if "cells" in grid:
        kw["cells"] = _as_cells(grid.pop("cells"))
    if "N" in grid:
        kw["n_grid"] = tuple(int(n) for n in grid.pop("N"))
    if grid:
        raise ConfigError(f"unknown [grid] keys: {sorted(grid)}")
    renames = {"K": "k_max"}
    for key in ("beta", "beta_hat", "beta_n_power", "beta_n_scale",
                "theta", "replicas", "K"):
        if key in coupling:
            kw[renames.get(key, key)] = coupling.pop(key)
    if "betas" in coupling:
        kw["betas"] = tuple(float(b) for b in coupling.pop("betas"))
    if coupling:
        raise ConfigError(f"unknown [coupling] keys: {sorted(coupling)}")
    if "kind" not in kw:
        raise ConfigError("config needs a 'kind'")
    cfg = ExperimentConfig(**kw)
    validate_config(cfg)
    return cfg


def load_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") \
            from exc


def config_from_toml(path) -> ExperimentConfig:
    return config_from_dict(load_toml(path))


def validate_config(cfg: ExperimentConfig) -> None:
    """Fail fast: every cell of the grid must validate before any work."""
    if cfg.kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {cfg.kind!r}; "
                          f"expected one of {KINDS}")
    if not cfg.cells:
        raise ConfigError("the experiment grid needs at least one (d, a, R) "
                          "cell")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    if cfg.replicas < 0:
        raise ConfigError("replicas must be nonnegative")
    needs_n = cfg.kind in ("intersect", "partition", "chaos", "converge",
                           "fractional")
    if needs_n and not cfg.n_grid:
        raise ConfigError(f"experiment kind {cfg.kind!r} needs an N grid")
    n_for_check = cfg.n_grid or (8,)
    for cell in cfg.cells:
        for N in n_for_check:
            cfg.model_params(cell, N)  # raises ConfigError when invalid
    if cfg.kind in ("partition", "chaos"):
        if cfg.beta is None and cfg.beta_hat is None \
                and cfg.beta_n_power is None:
            raise ConfigError(f"{cfg.kind!r} needs beta, beta_hat, or a "
                              "beta_n power law")
    if cfg.kind == "converge":
        if len(cfg.cells) != 1:
            raise ConfigError("'converge' sweeps a single (d, a, R) cell")
        if cfg.beta_hat is None and cfg.beta_n_power is None:
            raise ConfigError("'converge' needs beta_hat or a beta_n "
                              "power law")
    if cfg.kind == "fractional":
        if len(cfg.cells) != 1 or len(cfg.n_grid) != 1:
            raise ConfigError("'fractional' runs one cell at one N")
        if cfg.theta is None or not cfg.betas:
            raise ConfigError("'fractional' needs theta and a betas list")
        if cfg.replicas < 2:
            raise ConfigError("'fractional' needs at least 2 replicas")
    if cfg.kind == "chaos":
        if cfg.k_max is None or cfg.k_max < 1:
            raise ConfigError("'chaos' needs K >= 1")
        if cfg.replicas < 2:
            raise ConfigError("'chaos' needs at least 2 replicas")


def _beta_for(cfg: ExperimentConfig, params: ModelParams, N: int) -> float:
    if cfg.beta is not None:
        return float(cfg.beta)
    if cfg.beta_n_power is not None:
        return float(cfg.beta_n_scale * N**cfg.beta_n_power)
    return float(beta_schedule(params, cfg.beta_hat)(N))


# ---------------------------------------------------------------------------
# CSV plumbing


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class _Sink:
    """Serialized CSV writer; rows are flushed as they arrive."""

    def __init__(self, path: Path, header):
        self.path = path
        self.header = list(header)
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.header)
        self.rows = 0

    def write(self, row) -> None:
        if len(row) != len(self.header):
            raise ValueError(f"row width {len(row)} != header "
                             f"{len(self.header)} in {self.path.name}")
        self._writer.writerow([_fmt(v) for v in row])
        self._fh.flush()
        self.rows += 1

    def close(self) -> None:
        self._fh.close()


@dataclass
class RunResult:
    """Where one experiment run ended up on disk."""

    config: ExperimentConfig
    out_dir: Path
    csv_paths: list
    manifest_path: Path
    rows: int
    wall_seconds: float


# ---------------------------------------------------------------------------
# per-kind runners: each yields (sink index, row), rows already provenance-
# stamped by the caller


def _cell_jobs(cfg, fn, sinks):
    """Run fn over cells (possibly threaded), write in submission order."""
    if cfg.threads == 1 or len(cfg.cells) == 1:
        batches = (fn(cell) for cell in cfg.cells)
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            futures = [pool.submit(fn, cell) for cell in cfg.cells]
            batches = (f.result() for f in futures)
    for batch in batches:
        for idx, row in batch:
            sinks[idx].write(row)


def _run_intersect(cfg: ExperimentConfig, sinks, stamp) -> None:
    from .intersection import intersection_profile

    def one(cell):
        rows = []
        for N in cfg.n_grid:
            params = cfg.model_params(cell, N)
            exact = float(intersection_profile(params, [N])[0])
            predicted = float(growth_law(params).at(N))
            ratio = exact / predicted if predicted else math.inf
            rows.append((0, (*cell, cfg.geometry, N, exact, predicted,
                             ratio, *stamp)))
        return rows

    _cell_jobs(cfg, one, sinks)


def _run_partition(cfg: ExperimentConfig, sinks, stamp) -> None:
    def one(cell):
        rows = []
        for N in cfg.n_grid:
            params = cfg.model_params(cell, N)
            beta = _beta_for(cfg, params, N)
            cell_seed = rng.derive_seed(cfg.seed, *[int(1e6 * c)
                                                    for c in cell], N)
            if cfg.replicas:
                if params.d == 1:
                    logz = ensemble_log_z_1d(params, beta, cell_seed,
                                             cfg.replicas)
                else:
                    budget = {} if cfg.mem_budget is None else \
                        {"mem_budget": cfg.mem_budget}
                    logz = np.empty(cfg.replicas)
                    for r in range(cfg.replicas):
                        fld = sample_field(params,
                                           rng.derive_seed(cell_seed, r))
                        logz[r] = partition_exact(params, fld, beta,
                                                  **budget).log_z
                for r, lz in enumerate(logz):
                    rows.append((0, (*cell, cfg.geometry, cfg.law, N, beta,
                                     r, float(lz), *stamp)))
            try:
                sm = second_moment_exact(params, beta)
                rows.append((1, (*cell, cfg.geometry, cfg.law, N, beta,
                                 sm.e_z2, sm.route, *stamp)))
            except (ConfigError, ResourceBudgetError):
                pass
        return rows

    _cell_jobs(cfg, one, sinks)


def _run_chaos(cfg: ExperimentConfig, sinks, stamp) -> None:
    from .chaos import chaos_term_variance_exact, chaos_terms
    from .walk_kernel import build_kernel

    def one(cell):
        rows = []
        for N in cfg.n_grid:
            params = cfg.model_params(cell, N)
            beta = _beta_for(cfg, params, N)
            K = min(cfg.k_max, N)
            terms = np.empty((cfg.replicas, K))
            for r in range(cfg.replicas):
                fld = sample_field(params, rng.derive_seed(cfg.seed, N, r))
                dec = chaos_terms(params, fld, beta, K)
                terms[r] = dec.terms
                for k in range(1, K + 1):
                    rows.append((0, (*cell, cfg.geometry, cfg.law, N, beta,
                                     r, k, dec.terms[k - 1], *stamp)))
            kernel = build_kernel(params.d, N)
            for k in range(1, K + 1):
                var_mc = float(np.mean(terms[:, k - 1] ** 2))
                se = float(np.std(terms[:, k - 1] ** 2, ddof=1)
                           / math.sqrt(cfg.replicas))
                var_exact = chaos_term_variance_exact(params, kernel, k,
                                                      beta)
                rows.append((1, (*cell, cfg.geometry, cfg.law, N, beta, k,
                                 var_exact, var_mc, se, *stamp)))
        return rows

    _cell_jobs(cfg, one, sinks)


def _run_regime_map(cfg: ExperimentConfig, sinks, stamp) -> None:
    for cell in cfg.cells:
        params = cfg.model_params(cell, max(cfg.n_grid or (8,)))
        rep = classify_regime(params, cfg.beta_hat)
        sinks[0].write((*cell, cfg.geometry, rep.regime, rep.schedule_kind,
                        rep.sigma_sq, *stamp))


def _run_converge(cfg: ExperimentConfig, sinks, stamp) -> None:
    beta_n = None
    if cfg.beta_n_power is not None:
        power, scale = cfg.beta_n_power, cfg.beta_n_scale
        beta_n = lambda n: scale * n**power  # noqa: E731
    params = cfg.model_params(cfg.cells[0], max(cfg.n_grid))
    report = convergence_suite(params, cfg.beta_hat, cfg.n_grid,
                               cfg.replicas, cfg.seed, beta_n=beta_n)
    for pt in report.points:
        sinks[0].write((pt.N, pt.beta_n, pt.mean_z, pt.se_mean,
                        pt.e_z2_exact, pt.e_z2_target, pt.ks, pt.ks_pvalue,
                        *stamp))


def _run_fractional(cfg: ExperimentConfig, sinks, stamp) -> None:
    N = cfg.n_grid[0]
    params = cfg.model_params(cfg.cells[0], N)
    curve = fractional_moment_curve(params, cfg.theta,
                                    np.asarray(cfg.betas), cfg.replicas,
                                    cfg.seed)
    d, a, R = cfg.cells[0]
    for j, beta in enumerate(curve.betas):
        sinks[0].write((d, a, R, cfg.geometry, cfg.law, N, cfg.theta,
                        float(beta), float(curve.values[j]),
                        float(curve.std_errors[j]), cfg.replicas, *stamp))


_HEADERS = {
    "intersect.csv": ("d", "a", "R", "geometry", "N", "i_n_exact",
                      "i_n_predicted", "ratio"),
    "partition.csv": ("d", "a", "R", "geometry", "law", "N", "beta",
                      "replica", "log_z"),
    "second_moment.csv": ("d", "a", "R", "geometry", "law", "N", "beta",
                          "e_z2", "route"),
    "chaos_terms.csv": ("d", "a", "R", "geometry", "law", "N", "beta",
                        "replica", "k", "z_nk"),
    "chaos_summary.csv": ("d", "a", "R", "geometry", "law", "N", "beta",
                          "k", "var_exact", "var_mc", "se"),
    "regime_map.csv": ("d", "a", "R", "geometry", "regime", "schedule_kind",
                       "sigma_sq"),
    "converge.csv": ("N", "beta_n", "mean_z", "se_mean", "e_z2_exact",
                     "e_z2_target", "ks", "ks_pvalue"),
    "fractional.csv": ("d", "a", "R", "geometry", "law", "N", "theta",
                       "beta", "value", "std_error", "n_fields"),
}

_RUNNERS = {
    "intersect": _run_intersect,
    "partition": _run_partition,
    "chaos": _run_chaos,
    "regime-map": _run_regime_map,
    "converge": _run_converge,
    "fractional": _run_fractional,
}


def run(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Execute one experiment; returns the on-disk locations.

    CSV rows are flushed as produced, so a failure partway leaves partial
    results (without a manifest, which marks a completed run).
    """
    validate_config(cfg)
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stamp = (cfg.seed, cfg.content_hash())
    names = _CSV_NAMES[cfg.kind]
    sinks = [_Sink(out / name, _HEADERS[name] + ("seed", "config_hash"))
             for name in names]
    t0 = time.perf_counter()
    try:
        _RUNNERS[cfg.kind](cfg, sinks, stamp)
    finally:
        for s in sinks:
            s.close()
    wall = time.perf_counter() - t0
    manifest = {
        "config": asdict(cfg),
        "config_hash": cfg.content_hash(),
        "csv_files": [s.path.name for s in sinks],
        "rows": {s.path.name: s.rows for s in sinks},
        "wall_seconds": wall,
        "versions": _versions(),
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True)
                             + "\n")
    return RunResult(config=cfg, out_dir=out,
                     csv_paths=[s.path for s in sinks],
                     manifest_path=manifest_path,
                     rows=sum(s.rows for s in sinks), wall_seconds=wall)


def _versions() -> dict:
    import numpy
    import scipy

    return {"polytube": __version__, "numpy": numpy.__version__,
            "scipy": scipy.__version__}


# ---------------------------------------------------------------------------
# golden-fixture verification

# column comparison rules: "exact" = 1e-12 relative (deterministic given
# the seed), ("stat", se_col) = within 4 combined standard errors
_STAT_RULES = {
    "fractional.csv": {"value": ("stat", "std_error")},
    "chaos_summary.csv": {"var_mc": ("stat", "se")},
    "converge.csv": {"mean_z": ("stat", "se_mean")},
}

_EXACT_RTOL = 1e-12


@dataclass
class Mismatch:
    fixture: str
    file: str
    row: int
    column: str
    got: str
    want: str


@dataclass
class VerifyReport:
    """Outcome of re-running pinned configs against golden CSVs."""

    fixture_dir: Path
    checked: list = field(default_factory=list)
    mismatches: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.mismatches and not self.errors and bool(self.checked)

    def summary(self) -> str:
        lines = []
        for name in self.checked:
            bad = [m for m in self.mismatches if m.fixture == name]
            status = "PASS" if not bad else f"FAIL ({len(bad)} cells)"
            lines.append(f"[verify] {name}: {status}")
            for m in bad[:8]:
                lines.append(f"    {m.file} row {m.row} col {m.column}: "
                             f"got {m.got} want {m.want}")
        for err in self.errors:
            lines.append(f"[verify] ERROR: {err}")
        if not self.checked and not self.errors:
            lines.append("[verify] no fixtures found")
        return "\n".join(lines)


def _read_csv(path: Path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"empty fixture CSV {path}")
    return rows[0], rows[1:]


def _close(got: str, want: str, rtol: float) -> bool:
    if got == want:
        return True
    try:
        g, w = float(got), float(want)
    except ValueError:
        return False
    if math.isnan(g) and math.isnan(w):
        return True
    return abs(g - w) <= rtol * max(abs(g), abs(w), 1e-300) + 1e-300


def _diff_file(name, file_name, got_path, want_path, report) -> None:
    got_hdr, got_rows = _read_csv(got_path)
    want_hdr, want_rows = _read_csv(want_path)
    if got_hdr != want_hdr:
        report.errors.append(f"{name}/{file_name}: header mismatch "
                             f"{got_hdr} vs {want_hdr}")
        return
    if len(got_rows) != len(want_rows):
        report.errors.append(f"{name}/{file_name}: {len(got_rows)} rows "
                             f"produced vs {len(want_rows)} expected")
        return
    rules = _STAT_RULES.get(file_name, {})
    for i, (g_row, w_row) in enumerate(zip(got_rows, want_rows)):
        for j, col in enumerate(got_hdr):
            rule = rules.get(col)
            if rule is None:
                if col == "config_hash":
                    continue  # re-pinned below via config identity
                if not _close(g_row[j], w_row[j], _EXACT_RTOL):
                    report.mismatches.append(Mismatch(name, file_name, i,
                                                      col, g_row[j],
                                                      w_row[j]))
            else:
                se_j = got_hdr.index(rule[1])
                tol = 4 * (abs(float(g_row[se_j])) +
                           abs(float(w_row[se_j]))) + 1e-12
                if abs(float(g_row[j]) - float(w_row[j])) > tol:
                    report.mismatches.append(Mismatch(name, file_name, i,
                                                      col, g_row[j],
                                                      w_row[j]))


def verify(fixture_dir, work_dir=None) -> VerifyReport:
    """Re-run every pinned config below fixture_dir and diff the CSVs.

    A fixture is a directory holding ``config.toml`` plus the golden CSVs
    its run produces.  Exact columns must match to 1e-12 relative; columns
    listed as statistical match within 4 combined standard errors.
    """
    fixture_dir = Path(fixture_dir)
    report = VerifyReport(fixture_dir=fixture_dir)
    if not fixture_dir.is_dir():
        report.errors.append(f"fixture directory {fixture_dir} not found")
        return report
    import tempfile

    subdirs = sorted(p for p in fixture_dir.iterdir()
                     if (p / "config.toml").is_file())
    if not subdirs:
        report.errors.append(f"no fixtures with config.toml under "
                             f"{fixture_dir}")
        return report
    for sub in subdirs:
        name = sub.name
        try:
            cfg = config_from_toml(sub / "config.toml")
        except ConfigError as exc:
            report.errors.append(f"{name}: {exc}")
            continue
        expected = [p for p in (sub / f for f in _CSV_NAMES[cfg.kind])
                    if p.is_file()]
        if not expected:
            report.errors.append(f"{name}: no golden CSVs present")
            continue
        with tempfile.TemporaryDirectory(dir=work_dir) as tmp:
            try:
                result = run(cfg, out_dir=tmp)
            except (ConfigError, ResourceBudgetError) as exc:
                report.errors.append(f"{name}: run failed: {exc}")
                continue
            report.checked.append(name)
            for want_path in expected:
                got_path = result.out_dir / want_path.name
                if not got_path.is_file():
                    report.errors.append(f"{name}: run produced no "
                                         f"{want_path.name}")
                    continue
                _diff_file(name, want_path.name, got_path, want_path,
                           report)
    return report
