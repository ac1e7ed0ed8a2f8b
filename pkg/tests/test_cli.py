import csv
import subprocess
import sys

import pytest

from kdyn.cli import build_parser, main, resolve_config

TINY = ["--latent-dim", "8", "--action-emb-dim", "2", "--hidden", "16"]


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def lin_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "lin.kdyn"
    assert main(["gen-data", "--env", "linear", "--n-traj", "20", "--T", "120", "--seed", "0", "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def lin_ckpt(lin_data):
    out = lin_data.parent / "lin.ckpt"
    metrics = lin_data.parent / "metrics.csv"
    rc = main(["train", "--data", str(lin_data), "--out", str(out), "--metrics", str(metrics), "--epochs", "10",
               "--steps-per-epoch", "30", "--horizon", "20", "--batch-size", "16", "--lr", "0.01",
               "--latent-dim", "8", "--action-emb-dim", "4", "--hidden", "32"])
    assert rc == 0
    return out


def test_metrics_csv_written(lin_ckpt):
    rows = _rows(lin_ckpt.parent / "metrics.csv")
    assert [int(r["epoch"]) for r in rows] == list(range(1, 11))
    assert {"total", "consistency", "state", "reward", "wall_clock"} <= set(rows[0])


def test_eval_deterministic_and_trained_beats_untrained(lin_data, lin_ckpt, tmp_path):
    a, b, u = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "u.csv"
    common = ["eval", "--data", str(lin_data), "--eval-horizon", "100", "--n-samples", "100"]
    assert main(common + ["--checkpoint", str(lin_ckpt), "--out", str(a)]) == 0
    assert main(common + ["--checkpoint", str(lin_ckpt), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert main(common + ["--out", str(u), "--latent-dim", "8", "--action-emb-dim", "4", "--hidden", "32"]) == 0
    tr, un = _rows(a), _rows(u)
    assert [r["horizon"] for r in tr] == ["1", "10", "50", "100"]
    for x, y in zip(tr[:2], un[:2]):
        assert float(x["state_mse"]) < float(y["state_mse"])


def test_eval_horizon_too_long_is_config_error(lin_data, lin_ckpt, capsys):
    rc = main(["eval", "--data", str(lin_data), "--checkpoint", str(lin_ckpt), "--eval-horizon", "500"])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_missing_files_are_data_errors(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "none.kdyn"), "--out", str(tmp_path / "x")]) == 3
    assert "gen-data" in capsys.readouterr().err
    bad = tmp_path / "bad.kdyn"
    bad.write_bytes(b"garbage")
    assert main(["eval", "--data", str(bad)]) == 3


def test_bad_config_file_is_config_error(tmp_path, lin_data):
    ini = tmp_path / "c.ini"
    ini.write_text("[train]\nepochs = -3\n")
    assert main(["train", "--config", str(ini), "--data", str(lin_data), "--out", str(tmp_path / "m")]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.ini"), "--data", str(lin_data),
                 "--out", str(tmp_path / "m")]) == 2


def test_divergence_exit_code_and_partial_metrics(tmp_path, lin_data):
    metrics = tmp_path / "m.csv"
    rc = main(["train", "--data", str(lin_data), "--out", str(tmp_path / "m.ckpt"), "--metrics", str(metrics),
               "--model-type", "mlp", "--lr", "1e6", "--epochs", "30", "--horizon", "20", *TINY])
    assert rc == 4
    assert metrics.exists()


def test_resume_continues_history(tmp_path, lin_data):
    base = ["--data", str(lin_data), "--horizon", "5", "--batch-size", "8", "--steps-per-epoch", "2", *TINY]
    full, half = tmp_path / "full", tmp_path / "half"
    assert main(["train", *base, "--epochs", "3", "--out", str(full), "--metrics", str(tmp_path / "f.csv")]) == 0
    assert main(["train", *base, "--epochs", "1", "--out", str(half)]) == 0
    assert main(["train", "--data", str(lin_data), "--resume", str(half), "--epochs", "3", "--out", str(half),
                 "--metrics", str(tmp_path / "h.csv")]) == 0
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_clock"} for r in rows]
    assert strip(_rows(tmp_path / "f.csv")) == strip(_rows(tmp_path / "h.csv"))


def test_seed_precedence(monkeypatch, tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[data]\nseed = 5\n[train]\nseed = 5\n")
    parse = build_parser().parse_args
    assert resolve_config(parse(["gen-data", "--out", "x", "--config", str(ini)])).data.seed == 5
    monkeypatch.setenv("KDYN_SEED", "9")
    cfg = resolve_config(parse(["gen-data", "--out", "x", "--config", str(ini)]))
    assert cfg.data.seed == 9 and cfg.train.seed == 9
    assert resolve_config(parse(["gen-data", "--out", "x", "--config", str(ini), "--seed", "2"])).data.seed == 2
    monkeypatch.setenv("KDYN_SEED", "nine")
    assert main(["gen-data", "--out", str(tmp_path / "d")]) == 2


def test_gradcheck_and_bench_commands(tmp_path):
    out = tmp_path / "g.csv"
    assert main(["gradcheck", "--trials", "3", "--tau", "8", "--out", str(out)]) == 0
    assert out.read_text().startswith("trial,mode,k,l")
    assert main(["gradcheck", "--mode", "rollout", "--out", str(tmp_path / "r.csv")]) == 0
    b = tmp_path / "b.csv"
    assert main(["bench", "--horizons", "4", "--batch-size", "4", "--repeats", "1", "--warmup", "0", "--iters", "1",
                 *TINY, "--out", str(b), "--speedup", str(tmp_path / "s.csv")]) == 0
    assert len(_rows(b)) == 2 and len(_rows(tmp_path / "s.csv")) == 1


def test_plan_and_ablate_commands(tmp_path, lin_data):
    out, log = tmp_path / "p.csv", tmp_path / "log.csv"
    assert main(["plan", "--env", "pendulum", "--episodes", "1", "--episode-len", "5", "--population", "16",
                 "--iterations", "2", "--out", str(out), "--log", str(log)]) == 0
    assert len(_rows(out)) == 1 and len(_rows(log)) == 5
    ab = tmp_path / "a.csv"
    assert main(["ablate-init", "--data", str(lin_data), "--seeds", "0", "--epochs", "1", "--steps-per-epoch", "1",
                 "--horizon", "5", "--eval-horizon", "20", "--n-samples", "5", *TINY, "--out", str(ab)]) == 0
    assert len(_rows(ab)) == 4


def test_entry_point_module(tmp_path):
    r = subprocess.run([sys.executable, "-m", "kdyn.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "gen-data" in r.stdout
    r = subprocess.run([sys.executable, "-m", "kdyn.cli", "train"], capture_output=True, text=True)
    assert r.returncode == 2
