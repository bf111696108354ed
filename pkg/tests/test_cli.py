import csv
import io
import json

import pytest

from cookiewalk.cli import EXIT_OK, EXIT_USAGE, main


def run(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_unknown_subcommand(capsys):
    code, _, err = run(capsys, "no-such-thing")
    assert code == EXIT_USAGE
    assert "usage" in err


def test_simulate_walk_columns(capsys):
    code, out, _ = run(capsys, "simulate-walk", "--replicas", "3", "--max-level", "32", "--seed", "4")
    assert code == EXIT_OK
    r = rows(out)
    assert list(r[0]) == ["replica", "checkpoint_n", "T_n", "sup_at_n", "inf_from_n"]
    assert {x["replica"] for x in r} == {"0", "1", "2"}
    for x in r:
        n, T = int(x["checkpoint_n"]), int(x["T_n"])
        assert T >= n and int(x["sup_at_n"]) <= n


def test_simulate_walk_deterministic(capsys):
    a = run(capsys, "simulate-walk", "--trace", "--steps", "1000", "--seed", "9")[1]
    b = run(capsys, "simulate-walk", "--trace", "--steps", "1000", "--seed", "9")[1]
    c = run(capsys, "simulate-walk", "--trace", "--steps", "1000", "--seed", "10")[1]
    assert a == b != c
    assert rows(a)[0] == {"step": "0", "position": "0"}


def test_recurrent_walk_needs_cap(capsys):
    code, _, err = run(capsys, "simulate-walk", "--p", "0.5", "--max-level", "4")
    assert code == EXIT_USAGE and "step_cap" in err


def test_excursions(capsys):
    code, out, _ = run(capsys, "simulate-excursions", "--replicas", "500", "--seed", "1")
    r = rows(out)
    assert code == EXIT_OK and len(r) == 500
    assert list(r[0]) == ["replica", "sigma", "progeny", "peak", "truncated_flag"]


def test_kernel_analyze(capsys):
    code, out, _ = run(capsys, "kernel-analyze", "--N", "1024", "--n-max", "200")
    d = json.loads(out)
    assert code == EXIT_OK
    for key in ("E_sigma", "stationary_tail_fit", "survival_curve", "f1", "f2"):
        assert key in d
    assert d["f1"][2] == 0.0
    n, P, err = d["survival_curve"][0]
    assert (n, P) == (0, 1.0)


def test_genfun_eval(capsys):
    _, out, _ = run(capsys, "genfun-eval", "--what", "pgfA", "--s", "1.0")
    assert all(abs(r["value"] - 1) < 1e-14 for r in json.loads(out))
    _, out, _ = run(capsys, "genfun-eval", "--what", "J", "--N", "2048", "--s", "0.5")
    assert json.loads(out)[0]["discrepancy"] < 1e-6
    _, out, _ = run(capsys, "genfun-eval", "--what", "gamma", "--n-max", "5", "--format", "csv")
    assert len(rows(out)) == 6


def test_bessel_eval(capsys):
    code, out, _ = run(capsys, "bessel-eval", "--eta", "0.5", "--x", "1")
    d = json.loads(out)
    assert code == EXIT_OK and abs(d["K"] - 0.46106850444789454) < 1e-13
    assert d["method"] == "series"
    code, out, _ = run(capsys, "bessel-eval", "--self-test")
    assert code == EXIT_OK and json.loads(out)["ok"]
    assert run(capsys, "bessel-eval")[0] == EXIT_USAGE
    assert run(capsys, "bessel-eval", "--eta", "3", "--x", "1")[0] == EXIT_USAGE


def test_verify_stopping(capsys):
    code, out, _ = run(capsys, "verify", "--check", "stopping", "--replicas", "20000", "--lam", "0.2")
    d = json.loads(out)
    assert code == EXIT_OK and d["passed"]


def test_fit_tail_roundtrip(tmp_path, capsys):
    data = tmp_path / "s.csv"
    code, _, _ = run(capsys, "sample-law", "--law", "stable", "--nu", "0.6", "--replicas", "20000",
                     "--out", str(data))
    assert code == EXIT_OK
    code, out, _ = run(capsys, "fit-tail", "--input", str(data), "--column", "stable", "--window", "10", "1000")
    d = json.loads(out)
    assert abs(d["exponent"] - 0.6) < 0.1
    assert run(capsys, "fit-tail", "--input", str(data), "--column", "nope")[0] == EXIT_USAGE


def test_manifest_roundtrip(tmp_path, capsys):
    out = tmp_path / "exc.csv"
    run(capsys, "simulate-excursions", "--replicas", "300", "--seed", "5", "--p", "0.8", "0.8", "0.8",
        "--out", str(out))
    first = out.read_bytes()
    man = json.loads((tmp_path / "exc.csv.manifest.json").read_text())
    assert man["seed"] == 5 and man["experiment"]["subcommand"] == "simulate-excursions"
    assert man["model"] == {"M": 3, "p": [0.8, 0.8, 0.8]}
    out.unlink()
    assert main(["run", str(tmp_path / "exc.csv.manifest.json")]) == EXIT_OK
    assert out.read_bytes() == first
    # overrides change the experiment
    main(["run", str(tmp_path / "exc.csv.manifest.json"), "--set", "start=3"])
    assert out.read_bytes() != first


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"model": {"p": [0.75,\n  ]}}')
    code, _, err = run(capsys, "kernel-analyze", "--config", str(bad))
    assert code == EXIT_USAGE
    assert f"{bad}:2:" in err


def test_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"p": ["5/6", "5/6", "5/6"]}, "seed": 3,
                               "experiment": {"N": 1024, "n_max": 100}}))
    code, out, _ = run(capsys, "kernel-analyze", "--config", str(cfg))
    d = json.loads(out)
    assert code == EXIT_OK and d["alpha"] == pytest.approx(1.0) and d["N"] == 1024


def test_figure_trace(capsys):
    code, out, _ = run(capsys, "reproduce-paper", "--figure", "1")
    assert code == EXIT_OK
    assert len(rows(out)) == 100_001


def test_reproduce_exit_code(capsys):
    code, out, _ = run(capsys, "reproduce-paper", "--criteria", "8", "--format", "json")
    assert code == EXIT_OK
    assert json.loads(out)[0]["result"] == "PASS"
    assert run(capsys, "reproduce-paper")[0] == EXIT_USAGE
