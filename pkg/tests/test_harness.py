"""Experiment configs, CSV/manifest output, determinism, fixture verify."""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from polytube import cli, harness, rng
from polytube.errors import ConfigError, ResourceBudgetError
from polytube.harness import ExperimentConfig, config_from_dict

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

# the relevance classification written out by hand, independently of the
# classifier, so the fixture and the code cannot agree by accident:
# d=1 tubes are relevant for a >= 1/2 (R > 0), marginal below (point
# pinning when a = 0 or R = 0, narrow tube for 0 < a < 1/2); d=2 tubes are
# marginal for a > 0, R > 0 and irrelevant on the axis cases; d >= 3 is
# always irrelevant.  R = 0 reduces to the a = 0 pinning column.
HAND_TABLE = [
    (1, 0.00, 0, "marginal", "pinning-log"),
    (1, 0.00, 1, "marginal", "pinning-log"),
    (1, 0.00, 2, "marginal", "pinning-log"),
    (1, 0.25, 0, "marginal", "pinning-log"),
    (1, 0.25, 1, "marginal", "narrow-tube"),
    (1, 0.25, 2, "marginal", "narrow-tube"),
    (1, 0.50, 0, "marginal", "pinning-log"),
    (1, 0.50, 1, "relevant", "quarter-power"),
    (1, 0.50, 2, "relevant", "quarter-power"),
    (1, 0.75, 0, "marginal", "pinning-log"),
    (1, 0.75, 1, "relevant", "quarter-power"),
    (1, 0.75, 2, "relevant", "quarter-power"),
    (1, 1.00, 0, "marginal", "pinning-log"),
    (1, 1.00, 1, "relevant", "quarter-power"),
    (1, 1.00, 2, "relevant", "quarter-power"),
    (2, 0.00, 0, "irrelevant", "none"),
    (2, 0.00, 1, "irrelevant", "none"),
    (2, 0.00, 2, "irrelevant", "none"),
    (2, 0.25, 0, "irrelevant", "none"),
    (2, 0.25, 1, "marginal", "log-plane"),
    (2, 0.25, 2, "marginal", "log-plane"),
    (2, 0.50, 0, "irrelevant", "none"),
    (2, 0.50, 1, "marginal", "log-plane"),
    (2, 0.50, 2, "marginal", "log-plane"),
    (2, 0.75, 0, "irrelevant", "none"),
    (2, 0.75, 1, "marginal", "log-plane"),
    (2, 0.75, 2, "marginal", "log-plane"),
    (2, 1.00, 0, "irrelevant", "none"),
    (2, 1.00, 1, "marginal", "log-plane"),
    (2, 1.00, 2, "marginal", "log-plane"),
    (3, 0.00, 0, "irrelevant", "none"),
    (3, 0.00, 2, "irrelevant", "none"),
    (3, 0.25, 0, "irrelevant", "none"),
    (3, 0.25, 2, "irrelevant", "none"),
    (3, 0.50, 0, "irrelevant", "none"),
    (3, 0.50, 2, "irrelevant", "none"),
    (3, 0.75, 0, "irrelevant", "none"),
    (3, 0.75, 2, "irrelevant", "none"),
    (3, 1.00, 0, "irrelevant", "none"),
    (3, 1.00, 2, "irrelevant", "none"),
]


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def intersect_config(**kw):
    base = dict(kind="intersect", cells=((1, 0.0, 1.0), (1, 0.5, 1.0)),
                n_grid=(16, 32), seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# configuration handling


def test_config_from_dict_roundtrip():
    cfg = config_from_dict({
        "kind": "partition", "seed": 11, "threads": 2,
        "grid": {"cells": [[1, 0.25, 1.0]], "N": [8, 12]},
        "coupling": {"beta": 0.5, "replicas": 4},
    })
    assert cfg.kind == "partition"
    assert cfg.cells == ((1, 0.25, 1.0),)
    assert cfg.n_grid == (8, 12)
    assert cfg.beta == 0.5 and cfg.replicas == 4
    assert cfg.seed == 11 and cfg.threads == 2


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        config_from_dict({"kind": "intersect", "grit": {}})
    with pytest.raises(ConfigError, match="unknown .grid. keys"):
        config_from_dict({"kind": "intersect",
                          "grid": {"cells": [[1, 0, 1]], "M": [4]}})
    with pytest.raises(ConfigError, match="kind"):
        config_from_dict({"seed": 1})


def test_config_validates_cells_before_compute():
    with pytest.raises(ConfigError):
        config_from_dict({"kind": "intersect",
                          "grid": {"cells": [[4, 0.5, 1.0]], "N": [8]}})
    with pytest.raises(ConfigError, match="triple"):
        config_from_dict({"kind": "intersect",
                          "grid": {"cells": [[1, 0.5]], "N": [8]}})
    # a > 1 is outside the model family
    with pytest.raises(ConfigError):
        config_from_dict({"kind": "intersect",
                          "grid": {"cells": [[1, 1.5, 1.0]], "N": [8]}})


def test_config_kind_requirements():
    with pytest.raises(ConfigError, match="beta"):
        config_from_dict({"kind": "partition",
                          "grid": {"cells": [[1, 0.25, 1.0]], "N": [8]}})
    with pytest.raises(ConfigError, match="single"):
        config_from_dict({"kind": "converge", "seed": 1,
                          "grid": {"cells": [[1, 0.25, 1.0], [1, 0.5, 1.0]],
                                   "N": [8]},
                          "coupling": {"beta_hat": 0.5}})
    with pytest.raises(ConfigError, match="theta"):
        config_from_dict({"kind": "fractional",
                          "grid": {"cells": [[1, 0.25, 1.0]], "N": [8]},
                          "coupling": {"replicas": 10}})
    with pytest.raises(ConfigError, match="K >= 1"):
        config_from_dict({"kind": "chaos",
                          "grid": {"cells": [[1, 0.25, 1.0]], "N": [8]},
                          "coupling": {"beta": 0.5, "replicas": 3}})
    with pytest.raises(ConfigError, match="threads"):
        harness.validate_config(intersect_config(threads=0))


def test_config_hash_tracks_content_not_destination():
    a = intersect_config()
    assert a.content_hash() == intersect_config(out="elsewhere",
                                                threads=8).content_hash()
    assert a.content_hash() != intersect_config(seed=1).content_hash()
    assert a.content_hash() != intersect_config(
        n_grid=(16, 64)).content_hash()


def test_toml_errors(tmp_path):
    missing = tmp_path / "nope.toml"
    with pytest.raises(ConfigError, match="not found"):
        harness.config_from_toml(missing)
    bad = tmp_path / "bad.toml"
    bad.write_text("kind = [unterminated\n")
    with pytest.raises(ConfigError, match="TOML"):
        harness.config_from_toml(bad)


# ---------------------------------------------------------------------------
# run(): outputs and determinism


def test_run_intersect_outputs(tmp_path):
    cfg = intersect_config()
    res = harness.run(cfg, out_dir=tmp_path)
    header, rows = read_csv(tmp_path / "intersect.csv")
    assert header == ["d", "a", "R", "geometry", "N", "i_n_exact",
                      "i_n_predicted", "ratio", "seed", "config_hash"]
    assert len(rows) == 4 and res.rows == 4
    from polytube.intersection import intersection_profile
    from polytube.environment import ModelParams
    want = intersection_profile(ModelParams(d=1, N=16, a=0.0, R=1.0), [16])
    assert float(rows[0][5]) == pytest.approx(float(want[0]), rel=1e-14)
    assert float(rows[0][7]) == pytest.approx(
        float(rows[0][5]) / float(rows[0][6]), rel=1e-12)
    assert all(r[9] == cfg.content_hash() for r in rows)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["kind"] == "intersect"
    assert manifest["config_hash"] == cfg.content_hash()
    assert manifest["rows"]["intersect.csv"] == 4
    assert set(manifest["versions"]) >= {"polytube", "numpy", "scipy"}


def test_run_partition_matches_modules(tmp_path):
    cfg = config_from_dict({
        "kind": "partition", "seed": 7,
        "grid": {"cells": [[1, 0.25, 1.0]], "N": [8]},
        "coupling": {"beta": 0.5, "replicas": 3},
    })
    harness.run(cfg, out_dir=tmp_path)
    _, rows = read_csv(tmp_path / "partition.csv")
    from polytube.partition import ensemble_log_z_1d, second_moment_exact
    from polytube.environment import ModelParams
    params = ModelParams(d=1, N=8, a=0.25, R=1.0)
    cell_seed = rng.derive_seed(7, int(1e6 * 1), int(1e6 * 0.25),
                                int(1e6 * 1.0), 8)
    want = ensemble_log_z_1d(params, 0.5, cell_seed, 3)
    got = np.array([float(r[8]) for r in rows])
    assert np.allclose(got, want, rtol=1e-12, atol=0)
    _, sm_rows = read_csv(tmp_path / "second_moment.csv")
    assert len(sm_rows) == 1
    assert float(sm_rows[0][7]) == pytest.approx(
        second_moment_exact(params, 0.5).e_z2, rel=1e-12)
    assert sm_rows[0][8] == "band-1d"


def test_run_twice_is_byte_identical(tmp_path):
    cfg = config_from_dict({
        "kind": "fractional", "seed": 3,
        "grid": {"cells": [[1, 0.25, 1.0]], "N": [16]},
        "coupling": {"theta": 0.5, "betas": [0.0, 0.4], "replicas": 50},
    })
    harness.run(cfg, out_dir=tmp_path / "a")
    harness.run(cfg, out_dir=tmp_path / "b")
    for name in ("fractional.csv",):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_threads_do_not_change_bytes(tmp_path):
    base = intersect_config(cells=((1, 0.0, 1.0), (1, 0.5, 1.0),
                                   (2, 1.0, 1.0)))
    harness.run(base, out_dir=tmp_path / "t1")
    harness.run(ExperimentConfig(**{**base.__dict__, "threads": 3}),
                out_dir=tmp_path / "t3")
    assert (tmp_path / "t1" / "intersect.csv").read_bytes() == \
        (tmp_path / "t3" / "intersect.csv").read_bytes()


def test_partial_rows_flushed_before_budget_failure(tmp_path):
    # first cell succeeds, second exceeds the transfer budget: the run
    # raises, rows for the first cell persist, and no manifest is written
    cfg = config_from_dict({
        "kind": "partition", "seed": 1, "mem_budget": 50_000,
        "grid": {"cells": [[1, 0.25, 1.0], [2, 1.0, 1.0]], "N": [64]},
        "coupling": {"beta": 0.3, "replicas": 2},
    })
    with pytest.raises(ResourceBudgetError):
        harness.run(cfg, out_dir=tmp_path)
    _, rows = read_csv(tmp_path / "partition.csv")
    assert len(rows) == 2 and rows[0][0] == "1"
    assert not (tmp_path / "manifest.json").exists()


def test_converge_runner_schema(tmp_path):
    cfg = config_from_dict({
        "kind": "converge", "seed": 5,
        "grid": {"cells": [[1, 0.25, 1.0]], "N": [16, 32]},
        "coupling": {"beta_hat": 0.5, "replicas": 30},
    })
    harness.run(cfg, out_dir=tmp_path)
    header, rows = read_csv(tmp_path / "converge.csv")
    assert header[:8] == ["N", "beta_n", "mean_z", "se_mean", "e_z2_exact",
                         "e_z2_target", "ks", "ks_pvalue"]
    assert [r[0] for r in rows] == ["16", "32"]
    assert float(rows[0][5]) == pytest.approx(7 / 6, rel=1e-12)


def test_chaos_runner_consistency(tmp_path):
    cfg = config_from_dict({
        "kind": "chaos", "seed": 3,
        "grid": {"cells": [[1, 0.25, 1.0]], "N": [8]},
        "coupling": {"beta": 0.5, "replicas": 3, "K": 2},
    })
    harness.run(cfg, out_dir=tmp_path)
    _, term_rows = read_csv(tmp_path / "chaos_terms.csv")
    assert len(term_rows) == 6  # 3 replicas x K=2
    _, sum_rows = read_csv(tmp_path / "chaos_summary.csv")
    assert len(sum_rows) == 2
    # the summary's empirical variance is the mean square of the term rows
    k1 = [float(r[9]) for r in term_rows if r[8] == "1"]
    assert float(sum_rows[0][9]) == pytest.approx(
        np.mean(np.square(k1)), rel=1e-12)


# ---------------------------------------------------------------------------
# regime-map fixture: hand transcription vs classifier


def test_regime_map_fixture_matches_hand_transcription():
    _, rows = read_csv(FIXTURES / "regime_map" / "regime_map.csv")
    assert len(rows) == len(HAND_TABLE) == 40
    for row, want in zip(rows, HAND_TABLE):
        got = (int(row[0]), float(row[1]), float(row[2]), row[4], row[5])
        assert got == (want[0], want[1], float(want[2]), want[3], want[4]), \
            f"cell {row[:3]}"


# ---------------------------------------------------------------------------
# verify()


def test_verify_passes_on_committed_fixtures():
    report = harness.verify(FIXTURES)
    assert report.ok, report.summary()
    assert len(report.checked) == 6
    assert "PASS" in report.summary()


def test_verify_flags_tampered_and_missing(tmp_path):
    import shutil
    root = tmp_path / "fixtures"
    shutil.copytree(FIXTURES / "intersect_small", root / "intersect_small")
    shutil.copytree(FIXTURES / "regime_map", root / "regime_map")
    csv_path = root / "intersect_small" / "intersect.csv"
    text = csv_path.read_text().splitlines()
    cols = text[1].split(",")
    cols[5] = repr(float(cols[5]) * 1.5)
    text[1] = ",".join(cols)
    csv_path.write_text("\r\n".join(text) + "\r\n")
    report = harness.verify(root)
    assert not report.ok
    bad = [m for m in report.mismatches if m.fixture == "intersect_small"]
    assert bad and bad[0].column == "i_n_exact" and bad[0].row == 0
    assert "FAIL" in report.summary()
    # regime_map untouched and still passing
    assert not [m for m in report.mismatches if m.fixture == "regime_map"]
    (root / "regime_map" / "regime_map.csv").unlink()
    report2 = harness.verify(root)
    assert any("no golden CSVs" in e for e in report2.errors)
    report3 = harness.verify(tmp_path / "absent")
    assert not report3.ok and report3.errors


def test_verify_seed_perturbation_changes_only_mc_columns(tmp_path):
    cfg = config_from_dict({
        "kind": "partition", "seed": 7,
        "grid": {"cells": [[1, 0.25, 1.0]], "N": [8]},
        "coupling": {"beta": 0.5, "replicas": 3},
    })
    harness.run(cfg, out_dir=tmp_path / "a")
    harness.run(ExperimentConfig(**{**cfg.__dict__, "seed": 8}),
                out_dir=tmp_path / "b")
    _, rows_a = read_csv(tmp_path / "a" / "partition.csv")
    _, rows_b = read_csv(tmp_path / "b" / "partition.csv")
    assert [r[8] for r in rows_a] != [r[8] for r in rows_b]
    _, sm_a = read_csv(tmp_path / "a" / "second_moment.csv")
    _, sm_b = read_csv(tmp_path / "b" / "second_moment.csv")
    assert sm_a[0][7] == sm_b[0][7]  # exact column is seed-independent


# ---------------------------------------------------------------------------
# CLI


def write_config(tmp_path, text):
    path = tmp_path / "config.toml"
    path.write_text(text)
    return str(path)


def test_cli_run_and_exit_codes(tmp_path, capsys):
    cfg = write_config(tmp_path, """
kind = "intersect"
seed = 0
[grid]
cells = [[1, 0.5, 1.0]]
N = [16]
""")
    out = tmp_path / "out"
    code = cli.main(["intersect", "--config", cfg, "--out", str(out)])
    assert code == 0
    assert (out / "intersect.csv").is_file()
    assert "wrote" in capsys.readouterr().out
    # subcommand must match the file's kind
    assert cli.main(["partition", "--config", cfg]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "kind" in err


def test_cli_seed_and_threads_overrides(tmp_path):
    cfg = write_config(tmp_path, """
kind = "partition"
seed = 7
[grid]
cells = [[1, 0.25, 1.0]]
N = [8]
[coupling]
beta = 0.5
replicas = 3
""")
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["partition", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["partition", "--config", cfg, "--out", str(b),
                     "--seed", "8", "--threads", "2"]) == 0
    _, rows_a = read_csv(a / "partition.csv")
    _, rows_b = read_csv(b / "partition.csv")
    assert [r[8] for r in rows_a] != [r[8] for r in rows_b]
    manifest = json.loads((b / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 8
    assert manifest["config"]["threads"] == 2


def test_cli_config_error_exit(tmp_path, capsys):
    bad = write_config(tmp_path, "kind = 'intersect'\n")
    assert cli.main(["intersect", "--config", bad]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    missing = str(tmp_path / "absent.toml")
    assert cli.main(["intersect", "--config", missing]) == cli.EXIT_CONFIG
    capsys.readouterr()


def test_cli_budget_exit(tmp_path, capsys):
    cfg = write_config(tmp_path, """
kind = "partition"
seed = 1
mem_budget = 50000
[grid]
cells = [[2, 1.0, 1.0]]
N = [64]
[coupling]
beta = 0.3
replicas = 2
""")
    code = cli.main(["partition", "--config", cfg, "--out",
                     str(tmp_path / "out")])
    assert code == cli.EXIT_BUDGET
    assert "budget" in capsys.readouterr().err


def test_cli_verify_exit_codes(tmp_path, capsys):
    assert cli.main(["verify", str(FIXTURES)]) == 0
    capsys.readouterr()
    assert cli.main(["verify", str(tmp_path / "absent")]) == cli.EXIT_VERIFY
    capsys.readouterr()
