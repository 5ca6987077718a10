import csv
import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from fri_lab import cli
from fri_lab import experiments as E
from fri_lab.experiments import ExperimentConfig

CROSSING = dict(kind="crossing", replicas=4, seed=3, N=12, N_grid=(3, 6, 12), margin=6, u=2.0, T=20.0)
VALIDATE = dict(kind="validate", replicas=4, seed=3, N=4, K_radius=1, margin=6, T=10.0, sub_replicas=3,
                thin_N=4, A_radii=(1, 2), lucky_T=4.0, alpha=0.001)


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _sorted_tuple(elem, min_size=1):
    return st.lists(elem, min_size=min_size, max_size=4).map(lambda v: tuple(sorted(v)))


pos_float = st.floats(min_value=1e-3, max_value=1e4, allow_nan=False, allow_infinity=False)
configs = st.builds(
    ExperimentConfig,
    kind=st.sampled_from(E.KINDS),
    d=st.integers(3, 6), u=pos_float, T=pos_float, N=st.integers(1, 500),
    replicas=st.integers(1, 10 ** 6), seed=st.integers(0, 2 ** 63 - 1),
    margin=st.none() | st.integers(0, 1000),
    epsilon=st.floats(1e-9, 0.999), alpha=st.floats(1e-9, 0.999),
    ci_confidence=st.floats(1e-9, 0.999),
    targets=_sorted_tuple(st.integers(0, 500)), T_grid=_sorted_tuple(pos_float),
    n_grid=_sorted_tuple(st.integers(1, 500)), horizons=_sorted_tuple(st.integers(1, 10 ** 6)),
    walks_per_env=st.integers(1, 100), site_set=st.sampled_from(E.SITE_SETS),
    lucky_T=st.none() | pos_float, strict=st.booleans(),
)


@given(configs)
def test_write_parse_roundtrip(cfg):
    text = cli.write_config(cfg)
    assert cli.parse_config_text(text) == cfg
    assert cli.write_config(cli.parse_config_text(text)) == text


def test_minimal_config_gets_defaults(tmp_path):
    p = _write(tmp_path, "[experiment]\nkind = crossing\nd = 3\nu = 1\nT = 100\nN = 32\n"
                         "replicas = 10\nseed = 7\n")
    cfg = cli.parse_config(p)
    assert (cfg.kind, cfg.d, cfg.u, cfg.T, cfg.N, cfg.replicas, cfg.seed) == ("crossing", 3, 1.0, 100.0, 32, 10, 7)
    assert cfg.margin is None and cfg.epsilon == 1e-3 and cfg.strict is False
    assert cfg.resolved_margin() > 0


@pytest.mark.parametrize("text, needle", [
    ("[experiment]\nkind = crossing\nreplicas = 0\n", "replicas"),
    ("[experiment]\nkind = crossing\nfoo = 1\n", "'foo'"),
    ("[experiment]\nkind = crossing\n\n[bogus]\nd = 3\n", "[bogus]"),
    ("[experiment]\nkind = crossing\n\n[shape]\nn_grid = 2, 4\n", "does not match"),
    ("[experiment]\nkind = crossing\nd = three\n", "'d'"),
    ("[experiment]\nkind = crossing\nstrict = maybe\n", "'strict'"),
    ("[experiment]\nd = 3\n", "kind"),
    ("[other]\nkind = crossing\n", "[experiment]"),
    ("[experiment]\nkind = crossing\nd = 3\nd = 4\n", "d"),
    ("[experiment]\nkind = nope\n", "kind"),
    ("[experiment]\nkind = crossing\nN_grid = 8, 4\n", "sorted"),
])
def test_schema_errors(text, needle):
    with pytest.raises(cli.ConfigError) as e:
        cli.parse_config_text(text)
    assert needle in str(e.value)


def test_errors_report_line_numbers():
    with pytest.raises(cli.ConfigError, match=r"'foo'.*line 4"):
        cli.parse_config_text("[experiment]\nkind = crossing\nd = 3\nfoo = 1\n")


def test_missing_file(tmp_path):
    with pytest.raises(cli.ConfigError, match="not found"):
        cli.parse_config(tmp_path / "absent.ini")


def test_bool_values_are_case_insensitive():
    cfg = cli.parse_config_text("[experiment]\nkind = crossing\nstrict = True\n")
    assert cfg.strict is True
    assert "strict = true" in cli.write_config(cfg)


def test_dispatch_valid_crossing(tmp_path):
    out = tmp_path / "run"
    assert cli.dispatch(ExperimentConfig(**CROSSING), out) == cli.EXIT_OK
    assert {p.name for p in out.iterdir()} == {"config.ini", "manifest.json", "rows.jsonl", "aggregates.json"}
    man = json.loads((out / "manifest.json").read_text())
    assert man["partial"] is False and man["exit_code"] == 0 and man["failed_checks"] == []
    assert man["config_digest"] == cli.digest((out / "config.ini").read_text())
    assert man["master_seed"] == 3 and man["version"]
    rows = (out / "rows.jsonl").read_text().splitlines()
    assert len(rows) == 4 and all(json.loads(r)["replica"] == i for i, r in enumerate(rows))
    rec = cli.load_record(out)
    assert rec.config == ExperimentConfig(**CROSSING)


def test_dispatch_strict_threshold_failure_exits_2(tmp_path, capsys):
    cfg = ExperimentConfig(**{**CROSSING, "u": 0.05, "strict": True})
    assert cli.dispatch(cfg, tmp_path / "run") == cli.EXIT_FAILED
    assert "FAILED check: lower_bound_at_max_N_0.97" in capsys.readouterr().err


def test_dispatch_unwritable_out_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.dispatch(ExperimentConfig(**CROSSING), blocker / "run") == cli.EXIT_ERROR


def test_dispatch_operational_error_marks_partial(tmp_path, capsys):
    cfg = ExperimentConfig(**{**CROSSING, "N_grid": (6, 24)})
    out = tmp_path / "run"
    assert cli.dispatch(cfg, out) == cli.EXIT_ERROR
    man = json.loads((out / "manifest.json").read_text())
    assert man["partial"] is True and "N_grid" in man["error"]
    assert "error: N_grid exceeds the window" in capsys.readouterr().err


def test_validation_gof_failure_exits_2(tmp_path, capsys):
    out = tmp_path / "run"
    code = cli.dispatch(ExperimentConfig(**VALIDATE), out)
    err = capsys.readouterr().err
    assert code == cli.EXIT_FAILED
    assert "FAILED check: hit_count" in err
    man = json.loads((out / "manifest.json").read_text())
    assert "hit_count" in man["failed_checks"]


def test_main_subcommand_with_overrides(tmp_path):
    cfgp = tmp_path / "c.ini"
    cli.write_config(ExperimentConfig(**CROSSING), cfgp)
    out = tmp_path / "run"
    code = cli.main(["crossing", "--config", str(cfgp), "--out", str(out), "--seed", "11",
                     "--replicas", "3", "--threads", "2"])
    assert code == 0
    cfg = cli.load_record(out).config
    assert cfg.seed == 11 and cfg.replicas == 3 and cfg.N_grid == (3, 6, 12)


def test_main_kind_mismatch(tmp_path, capsys):
    cfgp = tmp_path / "c.ini"
    cli.write_config(ExperimentConfig(**CROSSING), cfgp)
    assert cli.main(["shape", "--config", str(cfgp), "--out", str(tmp_path / "r")]) == 1
    assert "does not match" in capsys.readouterr().err


def test_rerun_is_byte_identical_across_threads(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.dispatch(ExperimentConfig(**CROSSING), a, threads=1) == 0
    assert cli.main(["rerun", str(a / "manifest.json"), "--out", str(b), "--threads", "3"]) == 0
    for name in ("rows.jsonl", "aggregates.json", "config.ini"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_rerun_rejects_digest_mismatch(tmp_path, capsys):
    a = tmp_path / "a"
    assert cli.dispatch(ExperimentConfig(**CROSSING), a) == 0
    (a / "config.ini").write_text((a / "config.ini").read_text().replace("seed = 3", "seed = 4"))
    assert cli.main(["rerun", str(a / "manifest.json"), "--out", str(tmp_path / "b")]) == 1
    assert "digest" in capsys.readouterr().err


def _read_csv(path):
    text = path.read_text()
    assert "\r" not in text
    return list(csv.reader(text.splitlines()))


def test_plotdata_crossing(tmp_path):
    run = tmp_path / "run"
    cfg = ExperimentConfig(**{**CROSSING, "N": 64, "N_grid": (16, 32, 64), "margin": 4, "replicas": 2})
    assert cli.dispatch(cfg, run) in (0, 2)
    assert cli.main(["plotdata", str(run), "--out", str(tmp_path / "plot")]) == 0
    rows = _read_csv(tmp_path / "plot" / "crossing.csv")
    assert rows[0] == ["N", "freq", "lo", "hi"]
    assert [r[0] for r in rows[1:]] == ["16", "32", "64"]
    for _, f, lo, hi in rows[1:]:
        assert 0 <= float(lo) <= float(f) <= float(hi) <= 1


def test_plotdata_empty_record_is_header_only(tmp_path):
    rec = E.ExperimentRecord(ExperimentConfig(**CROSSING), [], {})
    (f,) = cli.emit_plot_data(rec, "crossing", tmp_path)
    assert f.read_text() == "N,freq,lo,hi\n"


def test_plotdata_kind_mismatch(tmp_path):
    rec = E.ExperimentRecord(ExperimentConfig(**CROSSING), [], {})
    with pytest.raises(ValueError, match="not 'shape'"):
        cli.emit_plot_data(rec, "shape", tmp_path)


def test_plotdata_chemdist_has_one_series_per_target(tmp_path):
    cfg = ExperimentConfig("chemdist", replicas=3, seed=3, N=12, targets=(0, 4, 8), margin=6, u=2.0, T=20.0)
    files = cli.emit_plot_data(E.run(cfg), "chemdist", tmp_path)
    names = sorted(f.name for f in files)
    assert names == ["chemdist.csv", "chemdist_y0.csv", "chemdist_y4.csv", "chemdist_y8.csv"]
    summary = _read_csv(tmp_path / "chemdist.csv")
    assert summary[0] == ["y", "mean_ratio", "lo", "hi"] and [r[0] for r in summary[1:]] == ["0", "4", "8"]
    for k in (4, 8):
        series = _read_csv(tmp_path / f"chemdist_y{k}.csv")
        assert series[0] == ["replica", "rho", "ratio"]
        assert all(int(r[1]) >= k and float(r[2]) >= 1 for r in series[1:])


@pytest.mark.parametrize("kind", ["shape", "uniqueness", "t_sweep", "qip", "validate"])
def test_plotdata_other_kinds(tmp_path, kind):
    from test_experiments import small
    files = cli.emit_plot_data(E.run(small(kind)), kind, tmp_path)
    assert files and all(len(_read_csv(f)) >= 2 for f in files)


def test_csv_cells_use_inf_literal_and_quoting(tmp_path):
    p = cli._csv(tmp_path / "x.csv", ["a", "b"], [(math.inf, "x,y"), (None, -math.inf), (0.5, 'q"')])
    assert p.read_text() == 'a,b\ninf,"x,y"\n,-inf\n0.5,"q"""\n'


def test_strict_json():
    obj = {"a": [math.nan, math.inf, -math.inf, 1.5], "b": (1, {"c": math.nan})}
    assert cli.strict_json(obj) == {"a": [None, "inf", "-inf", 1.5], "b": [1, {"c": None}]}
    json.dumps(cli.strict_json(obj), allow_nan=False)


def test_sample_subcommand(tmp_path, capsys):
    out = tmp_path / "s"
    assert cli.main(["sample", "--box", "5", "--u", "1", "--T", "10", "--seed", "2", "--out", str(out)]) == 0
    meta = json.loads((out / "sample.json").read_text())
    assert meta["N"] == 5 and meta["seed"] == 2 and meta["trajectories"] > 0
    assert (out / "sample.fri").stat().st_size > 0 and (out / "edges.txt").exists()
    assert "trajectories" in capsys.readouterr().out


def test_threads_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("FRI_LAB_THREADS", "2")
    cfgp = tmp_path / "c.ini"
    cli.write_config(ExperimentConfig(**CROSSING), cfgp)
    assert cli.main(["crossing", "--config", str(cfgp), "--out", str(tmp_path / "r")]) == 0
    assert json.loads((tmp_path / "r" / "manifest.json").read_text())["threads"] == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["--version"])
    assert e.value.code == 0 and "fri-lab" in capsys.readouterr().out
