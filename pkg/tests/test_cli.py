import csv
import json

import numpy as np
import pytest

from grushin_lab import cli
from grushin_lab.chart import SINGULAR_GUARD
from grushin_lab.config import SEED_ENV, SuiteConfig, read_config_file, resolve_config, write_config_file
from grushin_lab.errors import ConfigError
from grushin_lab.report import SCHEMA_VERSION, CheckRecord, SuiteReport, emit_report, load_report
from grushin_lab.suites import sample_points


def run(tmp_path, *args, name="r.json"):
    out = tmp_path / name
    code = cli.main([*args, "--out", str(out), "--no-runtime", "--jobs", "1"])
    return code, out


# config ---------------------------------------------------------------------

def test_config_defaults():
    cfg = SuiteConfig()
    assert (cfg.p, cfg.q, cfg.alpha, cfg.seed, cfg.points) == (3, 1, 1.0, 42, 200)
    assert cfg.suite_list == ["curvature", "cones", "conformal", "umbilic", "distance"]


def test_config_round_trip(tmp_path):
    cfg = SuiteConfig(p=4, q=2, alpha=0.5, seed=2 ** 63 + 5, points=17, tol_scale=2.5,
                      suites=["cones", "umbilic"], tolerances={"codazzi": 1e-4}, csv_dir="tabs")
    back = SuiteConfig.from_dict(read_config_file(write_config_file(cfg, tmp_path / "c.json")))
    assert back == cfg


def test_toml_config_and_flag_precedence(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('p = 4\nq = 2\nseed = 7\nsuites = ["cones"]\n')
    cfg = resolve_config({"q": 3, "seed": None}, path, environ={})
    assert (cfg.p, cfg.q, cfg.seed, cfg.suites) == (4, 3, 7, ["cones"])


def test_env_seed_is_a_fallback(tmp_path):
    assert resolve_config({}, environ={SEED_ENV: "99"}).seed == 99
    assert resolve_config({"seed": 3}, environ={SEED_ENV: "99"}).seed == 3
    with pytest.raises(ConfigError, match=SEED_ENV):
        resolve_config({}, environ={SEED_ENV: "abc"})


@pytest.mark.parametrize("data, field", [
    ({"p": 0}, "params"),
    ({"alpha": -1.0}, "params"),
    ({"points": 0}, "points"),
    ({"seed": -4}, "seed"),
    ({"tol_scale": 0.0}, "tol_scale"),
    ({"suites": ["bogus"]}, "suites"),
    ({"tolerances": {"codazzi": "tight"}}, "tolerances"),
    ({"colour": "red"}, "unknown field"),
])
def test_config_errors_name_the_field(data, field):
    with pytest.raises(ConfigError, match=field):
        SuiteConfig.from_dict(data)


def test_malformed_files_report_lines(tmp_path):
    bad_json = tmp_path / "c.json"
    bad_json.write_text('{\n  "p": 3,\n  "q": \n}\n')
    with pytest.raises(ConfigError, match="line 4"):
        read_config_file(bad_json)
    bad_toml = tmp_path / "c.toml"
    bad_toml.write_text("p = 3\nq = = 1\n")
    with pytest.raises(ConfigError, match="line 2"):
        read_config_file(bad_toml)
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.toml")


# exit codes -----------------------------------------------------------------

def test_exit_code_config_error(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text("p = [\n")
    code, out = run(tmp_path, "--config", str(path))
    assert code == cli.EXIT_CONFIG
    assert not out.exists()
    assert "config error" in capsys.readouterr().err
    assert run(tmp_path, "--p", "0")[0] == cli.EXIT_CONFIG


def test_exit_code_fail_and_repro(tmp_path):
    # a tolerance override that nothing can meet forces one failure
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"tolerances": {"christoffel_fd_vs_closed": 0.0}}))
    code, out = run(tmp_path, "--suite", "curvature", "--points", "8", "--config", str(path))
    assert code == cli.EXIT_FAIL
    rep = load_report(out)
    failed = [r for r in rep.records if r.status == "FAIL"]
    assert [r.check_id for r in failed] == ["christoffel_fd_vs_closed"]
    assert failed[0].repro.startswith("verify --suite curvature --p 3 --q 1")
    assert "--seed 42" in failed[0].repro


def test_exit_code_internal(tmp_path, monkeypatch):
    def boom(cfg):
        raise RuntimeError("boom")
    monkeypatch.setattr(cli, "run_suite", boom)
    assert run(tmp_path, "--suite", "curvature")[0] == cli.EXIT_INTERNAL


def test_default_curvature_suite_passes(tmp_path):
    code, out = run(tmp_path, "--suite", "curvature", "--points", "20")
    assert code == cli.EXIT_OK
    rep = load_report(out)
    assert rep.summary == {"pass": len(rep.records), "fail": 0, "skip": 0}
    assert {"riemann_fd_vs_closed", "scalar_unit_radius", "weyl_conformal_invariance"} <= {r.check_id for r in rep.records}
    assert all(r.anchor and r.inputs_digest for r in rep.records)


def test_p2_cones_skip_and_run_flatness(tmp_path):
    code, out = run(tmp_path, "--suite", "cones", "--p", "2", "--points", "10")
    assert code == cli.EXIT_OK
    rep = load_report(out)
    skips = {r.check_id: r.reason for r in rep.records if r.status == "SKIP"}
    assert set(skips) == {"cone_mode_agreement", "cone_step1_witness", "weyl_sectional_ratio", "cone_invariance_pattern"}
    assert set(skips.values()) == {"requires p≥3"}
    flat = [r for r in rep.records if r.check_id == "flatness_p2"]
    assert flat[0].status == "PASS" and flat[0].residual <= 1e-8


# reports --------------------------------------------------------------------

def test_empty_report_is_valid(tmp_path):
    rep = SuiteReport({"p": 3})
    data = json.loads(emit_report(rep, tmp_path / "e.json").read_text())
    assert data["schema_version"] == SCHEMA_VERSION
    assert data["records"] == [] and data["summary"] == {"pass": 0, "fail": 0, "skip": 0}
    rows = list(csv.reader(emit_report(rep, tmp_path / "e.csv", fmt="csv").open()))
    assert len(rows) == 1


def test_report_round_trip(tmp_path):
    rep = SuiteReport({"p": 3, "seed": 1}, [
        CheckRecord("curvature", "a", "anchor", "0123", 1.5e-9, "<=", 1e-6, "PASS", "", "verify", []),
        CheckRecord("cones", "b", "anchor", "4567", None, "", None, "SKIP", "requires p≥3"),
        CheckRecord("distance", "c", "anchor", "89ab", 0.3, ">=", 0.1, "PASS", "", "verify", ["t.csv"]),
    ], runtime_seconds=1.25)
    back = load_report(emit_report(rep, tmp_path / "r.json"))
    assert back == rep
    with pytest.raises(ValueError):
        emit_report(rep, tmp_path / "r.xml", fmt="xml")


def test_csv_rows_match_json(tmp_path):
    code, out = run(tmp_path, "--suite", "cones", "--points", "10", "--csv-dir", str(tmp_path / "tabs"))
    assert code == cli.EXIT_OK
    rep = load_report(out)
    rows = list(csv.DictReader((tmp_path / "tabs" / "records.csv").open()))
    assert len(rows) == len(rep.records)
    for row, rec in zip(rows, rep.records):
        assert (row["check_id"], row["status"], row["anchor"]) == (rec.check_id, rec.status, rec.anchor)
        assert float(row["residual"]) == rec.residual


def test_reports_are_byte_identical(tmp_path):
    args = ("--suite", "curvature", "--suite", "cones", "--points", "10")
    _, a = run(tmp_path, *args, name="a.json")
    _, b = run(tmp_path, *args, name="b.json")
    c = tmp_path / "c.json"
    cli.main([*args, "--out", str(c), "--no-runtime", "--jobs", "2"])
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_different_seed_changes_digests(tmp_path):
    _, a = run(tmp_path, "--suite", "curvature", "--points", "5", name="a.json")
    _, b = run(tmp_path, "--suite", "curvature", "--points", "5", "--seed", "43", name="b.json")
    da = {r.check_id: r.inputs_digest for r in load_report(a).records}
    db = {r.check_id: r.inputs_digest for r in load_report(b).records}
    assert da["riemann_fd_vs_closed"] != db["riemann_fd_vs_closed"]


def test_distance_suite_attaches_tables(tmp_path):
    tabs = tmp_path / "tabs"
    code, out = run(tmp_path, "--suite", "distance", "--points", "10", "--csv-dir", str(tabs))
    assert code == cli.EXIT_OK
    rep = load_report(out)
    for rec in rep.records:
        for art in rec.artifacts:
            assert not art.startswith("/")
            assert (tabs / art).is_file()
    names = {a for r in rep.records for a in r.artifacts}
    assert names == {"quotient_inversion.csv", "quotient_dilation.csv", "quotient_isometry.csv"}


# sampling -------------------------------------------------------------------

def test_sample_points_deterministic_and_guarded():
    cfg = SuiteConfig(p=4, q=2, alpha=0.5, points=50)
    a, b = sample_points(cfg), sample_points(cfg)
    assert len(a) == 50
    assert np.array_equal([p.coords for p in a], [p.coords for p in b])
    for pt in a:
        assert pt.xnorm >= SINGULAR_GUARD * (1 + np.linalg.norm(pt.y))
        r = pt.xnorm ** (cfg.alpha + 1)
        assert 0.5 - 1e-12 <= r <= 2 + 1e-12
    assert len(sample_points(cfg, count=7)) == 7
