import json
import shutil

import pytest

from boxoffice import cli
from boxoffice.core import load_manifest
from boxoffice.report import parse_r2_evolution_csv, parse_relative_errors_csv
from boxoffice.synthetic import bundled_fixture_dir

JA = str(bundled_fixture_dir("JA"))
OUTPUTS = ["catalog.csv", "alignment.json", "alignment_summary.json", "manifest.json", "fetch_report.json",
           "r2_evolution.csv", "relative_errors.csv", "fit.json", "evaluation.json", "r2_evolution.svg",
           "relative_errors.svg"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def ja_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ja")
    assert run("pipeline", "--fixtures", JA, "--out", out) == 0
    return out


def snapshot(out):
    return {name: (out / name).read_bytes() for name in OUTPUTS}


def test_pipeline_outputs(ja_run):
    manifest = load_manifest(ja_run / "manifest.json")
    assert len(manifest.entries) == 73
    assert json.loads((ja_run / "alignment_summary.json").read_text()) == {
        "total": 104, "aligned_auto": 71, "aligned_manual": 2, "unaligned": 31}
    assert len(parse_r2_evolution_csv((ja_run / "r2_evolution.csv").read_text())) == 49
    assert len(parse_relative_errors_csv((ja_run / "relative_errors.csv").read_text(encoding="utf-8"))) == 50
    assert len(json.loads((ja_run / "fit.json").read_text())) == 49


def test_rerun_is_byte_identical_and_uses_cache(ja_run, tmp_path, capsys):
    before = snapshot(ja_run)
    assert run("pipeline", "--fixtures", JA, "--out", ja_run) == 0
    assert snapshot(ja_run) == before
    assert "73 from cache, 35 zero-filled days, 0 provider calls" in capsys.readouterr().out
    fresh = tmp_path / "fresh"
    assert run("pipeline", "--fixtures", JA, "--out", fresh) == 0
    assert snapshot(fresh) == before


def test_fetch_report_counts_fills(ja_run):
    report = json.loads((ja_run / "fetch_report.json").read_text())["films"]
    assert len(report) == 73
    assert sum(f["filled_days"] for f in report) > 0


def test_empty_catalog(tmp_path, capsys):
    (tmp_path / "catalog.csv").write_text("title,market,release_date,revenue,screens\n")
    (tmp_path / "cfg.json").write_text(json.dumps({"catalog": "catalog.csv"}))
    code = run("align", "--fixtures", JA, "--config", tmp_path / "cfg.json", "--out", tmp_path / "out")
    assert code != 0
    assert "no films aligned" in capsys.readouterr().err


def _fixture_copy(tmp_path, drop=0):
    fx = tmp_path / "fx"
    shutil.copytree(JA, fx)
    if drop:
        data = json.loads((fx / "pageviews.json").read_text(encoding="utf-8"))
        for url in sorted(data)[:drop]:
            del data[url]
        (fx / "pageviews.json").write_text(json.dumps(data, ensure_ascii=False), encoding="utf-8")
    return fx


def test_permanent_failure_is_reported_not_fatal(tmp_path):
    fx = _fixture_copy(tmp_path, drop=1)
    out = tmp_path / "out"
    assert run("pipeline", "--fixtures", fx, "--out", out) == 0
    report = json.loads((out / "fetch_report.json").read_text())["films"]
    assert sum(f["status"] == "failed" for f in report) == 1


def test_unreachable_provider_with_cold_cache(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pageviews": None, "max_attempts": 1, "backoff_ms": 0,
                               "endpoint_template": "http://127.0.0.1:9/{project}/{article}/{start}/{end}"}))
    out = tmp_path / "out"
    assert run("align", "--fixtures", JA, "--out", out) == 0
    assert run("fetch", "--fixtures", JA, "--config", cfg, "--out", out) == 3


def test_evaluate_options(ja_run, tmp_path):
    out = tmp_path / "eval"
    shutil.copytree(ja_run, out)
    assert run("evaluate", "--fixtures", JA, "--out", out, "--cache-dir", ja_run / "cache",
               "--top-n-errors", 100, "--window-start", -30, "--no-intercept") == 0
    assert len(parse_relative_errors_csv((out / "relative_errors.csv").read_text(encoding="utf-8"))) == 73
    series = parse_r2_evolution_csv((out / "r2_evolution.csv").read_text())
    assert [t for t, _ in series] == list(range(-30, 0))
    assert json.loads((out / "evaluation.json").read_text())["with_intercept"] is False


def test_ablate_zero_matches_evaluate(ja_run):
    assert run("ablate-top", "--k", 0, "--fixtures", JA, "--out", ja_run) == 0
    for name in ("r2_evolution.csv", "relative_errors.csv", "fit.json", "evaluation.json"):
        assert (ja_run / "ablate_top_0" / name).read_bytes() == (ja_run / name).read_bytes()


def test_ablate_top_k(ja_run):
    assert run("ablate-top", "--k", 10, "--fixtures", JA, "--out", ja_run) == 0
    rows = json.loads((ja_run / "ablate_top_10" / "evaluation.json").read_text())["per_film"]
    assert len(rows) == 63
    assert run("ablate-top", "--k", 73, "--fixtures", JA, "--out", ja_run) == 2


@pytest.mark.parametrize("argv", [
    ["evaluate", "--market", "XX"],
    ["evaluate"],
    ["evaluate", "--fixtures", JA, "--loocv-day", "-60"],
    ["bogus"],
])
def test_usage_errors(argv, tmp_path):
    if argv != ["bogus"]:
        argv = argv + ["--out", tmp_path]
    assert run(*argv) == 1


def test_evaluate_without_manifest(tmp_path):
    assert run("evaluate", "--fixtures", JA, "--out", tmp_path) == 1


def test_bad_config_files(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nested": {"a": 1}}))
    assert run("align", "--config", cfg, "--market", "JA", "--out", tmp_path) == 1
    cfg.write_text("{not json")
    assert run("align", "--config", cfg, "--market", "JA", "--out", tmp_path) == 1
    assert run("align", "--config", tmp_path / "missing.json", "--out", tmp_path) == 1


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"market": "US", "loocv_day": -3, "out": "elsewhere"}))
    args = cli.build_parser().parse_args(["evaluate", "--config", str(cfg), "--market", "JA", "--loocv-day", "-5"])
    rc = cli.resolve_config(args)
    assert rc.market.value == "JA" and rc.loocv_day == -5
    assert rc.out == tmp_path / "elsewhere"
