import pytest

from kdyn.bench import BENCH_FIELDS, estimate_iteration_bytes, fit_batch, run_bench, speedup_table
from kdyn.config import BenchConfig
from kdyn.errors import ConfigError, SizingError
from kdyn.model import ModelConfig

SMALL = ModelConfig(latent_dim=8, action_emb_dim=2, hidden=8)


def test_singleton_horizon_one_row_per_model():
    rows = run_bench(BenchConfig(horizons=(5,), batch_size=4, repeats=2, warmup=1, iters=1), SMALL)
    assert [(r["model"], r["horizon"]) for r in rows] == [("koopman", 5), ("mlp", 5)]
    for r in rows:
        assert set(r) == set(BENCH_FIELDS) and r["its_per_sec_median"] > 0
    sp = speedup_table(rows)
    assert len(sp) == 1 and sp[0]["speedup"] > 0


def test_sizing():
    need = estimate_iteration_bytes(SMALL, 256, 100)
    assert fit_batch(SMALL, 256, 100, available=need) == 256
    assert fit_batch(SMALL, 256, 100, available=need // 3) == 64
    with pytest.raises(SizingError, match="batch"):
        fit_batch(SMALL, 256, 100, available=need // 3, shrink=False)
    with pytest.raises(SizingError):
        fit_batch(SMALL, 256, 100, available=1)


def test_bench_config_validation():
    with pytest.raises(ConfigError):
        BenchConfig(horizons=())
    with pytest.raises(ConfigError):
        BenchConfig(repeats=0)
