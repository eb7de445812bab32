import json

import numpy as np
import pytest

from dpgds.cli import main, read_config_file
from dpgds.data import load_checkpoint, load_count_matrix, save_count_matrix
from dpgds.model import CountMatrix


def write_counts(tmp_path, name="data.csv", seed=0, V=5, T=12, lam=3.0):
    X = CountMatrix(entries=np.random.default_rng(seed).poisson(lam, size=(V, T)))
    p = tmp_path / name
    save_count_matrix(X, p)
    return p


def train_args(data, out, extra=()):
    return ["train", "--data", str(data), "--out", str(out),
            "--layers", "3,2", "--iters", "10", "--seed", "7",
            "--gamma0", "5.0", *extra]


# ---------------------------------------------------------------------------
# config handling


def test_read_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nlayers = 4,2\niters=6  # trailing\n\nseed=3\n")
    assert read_config_file(p) == {"layers": "4,2", "iters": "6", "seed": "3"}


def test_config_file_fills_defaults_flags_win(tmp_path):
    data = write_counts(tmp_path)
    cfg = tmp_path / "c.cfg"
    cfg.write_text("layers=3,2\niters=10\nseed=99\ngamma0=5.0\n")
    out = tmp_path / "out"
    rc = main(["train", "--data", str(data), "--out", str(out),
               "--config", str(cfg), "--seed", "7"])
    assert rc == 0
    text = (out / "config.txt").read_text()
    assert "seed=7\n" in text          # explicit flag beats the file
    assert "layers=3,2\n" in text      # file fills the untouched default
    assert "iters=10\n" in text
    assert text.startswith("version=")


def test_config_unknown_key_exits_2(tmp_path):
    data = write_counts(tmp_path)
    cfg = tmp_path / "c.cfg"
    cfg.write_text("no-such-flag=1\n")
    assert main(train_args(data, tmp_path / "o", ["--config", str(cfg)])) == 2


def test_config_malformed_line_exits_2(tmp_path):
    data = write_counts(tmp_path)
    cfg = tmp_path / "c.cfg"
    cfg.write_text("just a line\n")
    assert main(train_args(data, tmp_path / "o", ["--config", str(cfg)])) == 2


# ---------------------------------------------------------------------------
# exit codes


def test_missing_data_exits_3(tmp_path):
    assert main(train_args(tmp_path / "nope.csv", tmp_path / "o")) == 3


def test_malformed_data_exits_3(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t0,t1\n1,x\n")
    assert main(train_args(p, tmp_path / "o")) == 3


def test_bad_hyper_exits_2(tmp_path):
    data = write_counts(tmp_path)
    assert main(train_args(data, tmp_path / "o", ["--tau0", "-1.0"])) == 2


def test_stale_checkpoint_version_exits_2(tmp_path):
    data = write_counts(tmp_path)
    out = tmp_path / "o"
    assert main(train_args(data, out)) == 0
    ck = out / "checkpoint.json"
    payload = json.loads(ck.read_text())
    payload["format_version"] = 99
    ck.write_text(json.dumps(payload))
    assert main(train_args(data, tmp_path / "o2", ["--resume", str(ck)])) == 2


# ---------------------------------------------------------------------------
# training outputs and determinism


def run_train(tmp_path, out_name, extra=(), data=None):
    data = data or write_counts(tmp_path)
    out = tmp_path / out_name
    rc = main(train_args(data, out, extra))
    assert rc == 0
    return out


def test_train_outputs_exist(tmp_path):
    out = run_train(tmp_path, "o1",
                    ["--holdout-fraction", "0.2", "--eval-every", "2"])
    assert (out / "checkpoint.json").exists()
    assert (out / "config.txt").exists()
    assert (out / "metrics.log").exists()
    assert (out / "timing.log").exists()
    assert (out / "posterior_mean_rates.npy").exists()
    lines = [json.loads(l) for l in (out / "metrics.log").read_text().splitlines()]
    names = {l["metric"] for l in lines}
    assert {"mp", "mr", "final_mp", "final_mr"} <= names
    for l in lines:
        assert set(l) == {"iteration", "metric", "value"}  # no timestamps


def test_train_deterministic_across_runs(tmp_path):
    data = write_counts(tmp_path)
    extra = ["--holdout-fraction", "0.2", "--eval-every", "2"]
    o1 = run_train(tmp_path, "d1", extra, data)
    o2 = run_train(tmp_path, "d2", extra, data)
    assert (o1 / "metrics.log").read_bytes() == (o2 / "metrics.log").read_bytes()
    assert (o1 / "checkpoint.json").read_bytes() == (o2 / "checkpoint.json").read_bytes()


@pytest.mark.parametrize("engine_extra", [[], ["--engine", "sgmcmc", "--sub-t", "6"]])
def test_resume_equivalent_to_straight_run(tmp_path, engine_extra):
    data = write_counts(tmp_path)
    full = run_train(tmp_path, f"full{len(engine_extra)}", engine_extra, data)

    part = tmp_path / f"part{len(engine_extra)}"
    rc = main(train_args(data, part, [*engine_extra, "--checkpoint-every", "4"]))
    assert rc == 0
    resumed = tmp_path / f"res{len(engine_extra)}"
    rc = main(train_args(data, resumed,
                         [*engine_extra, "--resume", str(part / "checkpoint_4.json")]))
    assert rc == 0
    assert (resumed / "checkpoint.json").read_bytes() \
        == (full / "checkpoint.json").read_bytes()


def test_gibbs_resume_checkpoint_lacks_engine_state_for_sgmcmc(tmp_path):
    data = write_counts(tmp_path)
    out = run_train(tmp_path, "gfull", [], data)
    rc = main(train_args(data, tmp_path / "bad",
                         ["--engine", "sgmcmc", "--resume",
                          str(out / "checkpoint.json")]))
    assert rc == 2


# ---------------------------------------------------------------------------
# forecast / export


def test_forecast_expectation_and_pp(tmp_path):
    data = write_counts(tmp_path)
    out = run_train(tmp_path, "fo", [], data)
    fdir = tmp_path / "fc"
    rc = main(["forecast", "--checkpoint", str(out / "checkpoint.json"),
               "--out", str(fdir), "--horizon", "3", "--truth", str(data),
               "--top-m", "3"])
    assert rc == 0
    lines = (fdir / "forecast.csv").read_text().splitlines()
    assert lines[0] == "h1,h2,h3"
    assert len(lines) == 1 + 5
    pp = float((fdir / "pp.txt").read_text())
    assert 0.0 <= pp <= 1.0


def test_forecast_mc_mode(tmp_path):
    data = write_counts(tmp_path)
    out = run_train(tmp_path, "fm", [], data)
    fdir = tmp_path / "fcm"
    rc = main(["forecast", "--checkpoint", str(out / "checkpoint.json"),
               "--out", str(fdir), "--mode", "mc", "--mc-draws", "50"])
    assert rc == 0
    assert (fdir / "forecast.csv").exists()


def test_export_outputs(tmp_path):
    data = write_counts(tmp_path)
    out = run_train(tmp_path, "ex", [], data)
    edir = tmp_path / "exp"
    rc = main(["export", "--checkpoint", str(out / "checkpoint.json"),
               "--out", str(edir), "--top-topics", "2"])
    assert rc == 0
    topics = (edir / "topics.txt").read_text().splitlines()
    assert len(topics) == 3 + 2  # one line per topic per layer
    assert topics[0].startswith("layer=1 topic=1 ")
    assert (edir / "trajectories.txt").exists()
    trans = (edir / "transitions.txt").read_text().splitlines()
    assert trans[0].startswith("layer=1 topics=")
    assert len(trans) == 2 * (1 + 2)  # header plus 2x2 submatrix per layer


# ---------------------------------------------------------------------------
# synth


def test_synth_balls_round_trip(tmp_path):
    out = tmp_path / "balls"
    rc = main(["synth", "balls", "--out", str(out), "--n", "2", "--size", "16",
               "--t", "6", "--seqs", "2", "--seed", "1"])
    assert rc == 0
    X = load_count_matrix(out / "balls_0.csv", kind="binary")
    assert X.entries.shape == (256, 6)
    assert set(np.unique(X.entries)) <= {0, 1}


def test_synth_model_then_train(tmp_path):
    out = tmp_path / "sy"
    rc = main(["synth", "model", "--out", str(out), "--layers", "3,2",
               "--v", "6", "--t", "10", "--gamma0", "5.0", "--seed", "2"])
    assert rc == 0
    rc = main(train_args(out / "synthetic.csv", tmp_path / "sytr"))
    assert rc == 0


def test_checkpoint_resume_round_trips_hyper(tmp_path):
    data = write_counts(tmp_path)
    out = run_train(tmp_path, "h", ["--tau0", "2.0", "--eta0", "0.3"], data)
    ck = load_checkpoint(out / "checkpoint.json")
    assert ck.hyper.tau0 == 2.0
    assert ck.hyper.eta == [0.3, 0.3]
    assert ck.iteration == 10
