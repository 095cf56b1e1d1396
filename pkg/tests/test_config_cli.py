import json

import pytest

from stopou.cli import main, run
from stopou.config import RunConfig, parse_config_text
from stopou.errors import ConfigError

SMALL = ["--set", "run.m=4000", "--set", "run.n=4"]


def test_parse_config_text_comments_and_errors():
    vals = parse_config_text("# header\nrun.T = 2.0  # horizon\n\ndomain.r=0.5\n")
    assert vals == {"run.T": "2.0", "domain.r": "0.5"}
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("run.horizon = 1")
    with pytest.raises(ConfigError, match=":1:"):
        parse_config_text("run.T 1")


def test_precedence_flags_env_file(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("run.seed = 1\nrun.T = 2.0\nrun.threads = 2\n")
    cfg = RunConfig.load(f, env={"STOPOU_SEED": "5"}, overrides={"run.T": "3.0"})
    assert (cfg.seed, cfg.T, cfg.threads) == (5, 3.0, 2)
    cfg = RunConfig.load(f, env={"STOPOU_SEED": "5"}, overrides={"run.seed": 9})
    assert cfg.seed == 9


@pytest.mark.parametrize("override", [{"run.T": "-1"}, {"run.n": "x"}, {"out.format": "xml"},
                                      {"model.preset": "heston"}, {"run.bogus": "1"}])
def test_bad_values_rejected(override):
    with pytest.raises(ConfigError):
        RunConfig.load(env={}, overrides=override)


def test_hash_ignores_threads_and_output():
    a = RunConfig.load(env={}, overrides={"run.threads": "1"})
    b = RunConfig.load(env={}, overrides={"run.threads": "4", "out.format": "json"})
    c = RunConfig.load(env={}, overrides={"run.seed": "1"})
    assert a.hash() == b.hash() != c.hash()


def test_inline_model_checks():
    cfg = RunConfig.load(env={}, overrides={"model.d": "2", "model.A": "0 0 1 0", "model.C": "1 0.5 0 0"})
    with pytest.raises(ConfigError, match="not symmetric"):
        cfg.model()
    cfg = RunConfig.load(env={}, overrides={"model.d": "2", "model.A": "0 0 1 0", "model.C": "1 0 0 0"})
    assert cfg.model().dim == 2


def test_estimate_csv_header(capsys, monkeypatch):
    monkeypatch.delenv("STOPOU_SEED", raising=False)
    assert main(["estimate", *SMALL]) == 0
    out = capsys.readouterr().out
    lines = out.splitlines()
    assert lines[0].startswith("# stopou ")
    assert "# command: estimate" in lines
    assert any(l.startswith("# config_hash: ") for l in lines)
    assert "# config: run.m = 4000" in lines
    assert "estimator,x_1,x_2,T,r,n,mean,stderr,m,seed" in out


def test_json_output(capsys):
    assert main(["estimate", "--format", "json", "--estimator", "unstopped_cm", *SMALL]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["meta"]["command"] == "estimate"
    assert doc["rows"][0]["estimator"] == "unstopped_cm"


def test_estimate_identical_across_threads(tmp_path):
    outs = []
    for threads in ("1", "3"):
        d = tmp_path / threads
        assert main(["estimate", "--threads", threads, "--out", str(d), "--set", "run.m=10000",
                     "--set", "run.n=4", "--estimator", "stopped_cm"]) == 0
        outs.append((d / "estimate.csv").read_bytes())
    assert outs[0] == outs[1]


def test_env_seed_used(capsys, monkeypatch):
    monkeypatch.setenv("STOPOU_SEED", "17")
    assert main(["estimate", *SMALL]) == 0
    assert "# seed: 17" in capsys.readouterr().out


def test_exit_codes(capsys, tmp_path):
    assert main(["check"]) == 0
    # uncontrollable pair: the Kalman rank condition fails
    assert main(["check", "--set", "model.d=2", "--set", "model.A=0 0 0 0", "--set", "model.C=1 0 0 0"]) == 1
    assert main(["estimate", "--set", "run.m=0"]) == 2
    assert main(["estimate", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["estimate", "--set", "run.x=2 2", *SMALL]) == 2
    assert main(["pde", "--set", "pde.nodes=41", "--set", "pde.dt=1.0"]) == 3
    err = capsys.readouterr().err
    assert "suggested dt" in err


@pytest.mark.parametrize("argv", [
    ["sample", "--set", "run.m=3", "--set", "run.n=2"],
    ["lambda", "--s", "0.5,1,2", "--set", "run.m=20000", "--set", "run.n=4"],
    ["gradient", "--variants", "--set", "run.m=20000", "--set", "run.n=4"],
    ["pde", "--set", "pde.nodes=41", "--set", "run.T=0.2"],
])
def test_subcommands_run(argv, capsys):
    assert main(argv) == 0
    assert capsys.readouterr().out.startswith("# stopou ")


def test_run_entry_point(capsys):
    cfg = RunConfig.load(env={}, overrides={"run.m": "3000", "run.n": "3"})
    assert run("estimate", cfg, "--estimator", "stopped_cm") == 0
    assert "stopped_cm," in capsys.readouterr().out
    bad = RunConfig.load(env={}, overrides={"model.d": "2", "model.A": "0 0 1 0", "model.C": "1 1 0 0"})
    assert run("check", bad) == 2
    assert "not symmetric" in capsys.readouterr().err
