import asyncio

import numpy as np
import pandas as pd
import pytest

from tokenfold import CheckRegistry, CheckResult
from tokenfold.domain.exceptions import ConfigError, InvariantViolation
from tokenfold.domain.services import AblationService, BenchService, CorpusService, SamplingService, VerifyService
from tokenfold.domain.services.bench import (
    DRIFT_COLUMNS,
    RUN_COLUMNS,
    STEP_COLUMNS,
    SUMMARY_COLUMNS,
    bench_trends,
    cache_summary,
)
from tokenfold.infra import IGSO3Cache, read_pdb_file, write_pdb
from tokenfold.domain.synthetic import ideal_chain

CHEAP_CHECKS = [
    "geometry.associativity",
    "geometry.relative_invariance",
    "geometry.frames_equivariance",
    "geometry.atoms_roundtrip",
    "diffusion.schedule",
]


@pytest.fixture(scope="module")
def sampling(session_cfg, models) -> SamplingService:
    service = SamplingService(session_cfg, store=None)
    service.use_models(models)
    return service


def test_registry():
    registry = CheckRegistry()
    registry.register("ok", lambda: CheckResult(id="ok", passed=True, measured=0.0, detail=""))
    registry.register("boom", lambda: 1 / 0)
    with pytest.raises(ValueError):
        registry.register("ok", lambda: None)
    with pytest.raises(KeyError):
        registry.get("missing")
    assert registry.ids == ["ok", "boom"]

    results = {r["id"]: r for r in asyncio.run(registry.run_all())}
    assert results["ok"].passed
    assert not results["boom"].passed
    assert "ZeroDivisionError" in results["boom"]["detail"]
    assert [r["id"] for r in registry.run_serial()] == ["ok", "boom"]


def test_verify_cheap_checks(cfg, tmp_path):
    service = VerifyService(cfg, store=None, igso3_cache=IGSO3Cache(tmp_path))
    assert len(service.ids) == 17
    for check_id in CHEAP_CHECKS:
        assert service.require(check_id).passed, check_id


def test_verify_checks_are_seeded(cfg, tmp_path):
    a = VerifyService(cfg, store=None, igso3_cache=IGSO3Cache(tmp_path))
    b = VerifyService(cfg, store=None, igso3_cache=IGSO3Cache(tmp_path))
    check_id = "geometry.atoms_roundtrip"
    assert a.require(check_id)["measured"] == b.require(check_id)["measured"]


def test_require_raises(cfg, tmp_path):
    service = VerifyService(cfg, store=None, igso3_cache=IGSO3Cache(tmp_path))
    service.registry.register("always.fails", lambda: CheckResult(id="always.fails", passed=False, measured=2.0, detail="x"))
    with pytest.raises(InvariantViolation) as info:
        service.require("always.fails")
    assert info.value.check_id == "always.fails"


def test_igso3_cache_reuses_file(tmp_path):
    cache = IGSO3Cache(tmp_path)
    first = cache.get_or_build([1.0, 0.5], omega_resolution=64)
    files = list((tmp_path / "igso3").glob("*.npz"))
    assert len(files) == 1
    second = cache.get_or_build([0.5, 1.0], omega_resolution=64)
    np.testing.assert_array_equal(first.cdf, second.cdf)
    assert list((tmp_path / "igso3").glob("*.npz")) == files


def test_corpus_mixes_pdb_chains(tmp_path, session_cfg):
    path = tmp_path / "helix.pdb"
    path.write_text(write_pdb(ideal_chain("H", 40)))
    short = tmp_path / "short.pdb"
    short.write_text(write_pdb(ideal_chain("E", 5)))
    corpus_cfg = session_cfg.corpus.model_copy(update={"pdb_files": [path, short]})
    chains = CorpusService(corpus_cfg, 0, read_pdb_file).load()
    assert len(chains) == 3 * corpus_cfg.n_per_class + 1
    frames, label = chains[-1]
    assert len(frames) == 40 and label == 0


def test_sampling_service(sampling):
    results = sampling.sample(2, serial=True)
    assert [r.seed for r in results] == [0, 1]
    assert all(len(r.atoms) == 16 for r in results)


def test_cache_bench(session_cfg, sampling):
    result = BenchService(session_cfg, sampling).run_cache_bench(lengths=[16], eps_sweep=[0.05], seeds=[0])
    assert list(result.steps.columns) == STEP_COLUMNS
    assert list(result.runs.columns) == RUN_COLUMNS
    assert list(result.summary.columns) == SUMMARY_COLUMNS
    assert sorted(result.runs["eps"]) == [0.0, 0.05]
    assert len(result.steps) == 2 * session_cfg.schedule.T
    assert (result.steps["pair_updates"] == result.steps["expected_pair_updates"]).all()
    baseline = result.runs[result.runs["eps"] == 0.0]
    assert float(baseline["deviation"].iloc[0]) == pytest.approx(0.0, abs=1e-6)
    assert list(result.summary["variant"]) == ["cache_off", "cache_on"]
    assert 16 in result.trends()


def test_drift_by_length(session_cfg, sampling, corpus):
    service = BenchService(session_cfg, sampling, CorpusService(session_cfg.corpus, session_cfg.seed, read_pdb_file))
    table = service.drift_by_length()
    assert list(table.columns) == DRIFT_COLUMNS
    lengths = sorted({len(f) for f, _ in corpus})
    assert list(table["length"]) == lengths
    assert int(table["n_chains"].sum()) == len(corpus)
    assert (table["drift_mean"] >= 0).all()
    assert (table["drift_max"] >= table["drift_mean"] - 1e-12).all()
    assert np.isfinite(table["drift_std"]).all()


def test_drift_by_length_needs_chains(session_cfg, sampling):
    with pytest.raises(ConfigError):
        BenchService(session_cfg, sampling).drift_by_length()
    assert BenchService(session_cfg, sampling).drift_by_length(chains=[]).empty


def test_cache_summary_falls_back_to_largest_eps():
    runs = pd.DataFrame(
        {
            "length": [32] * 6,
            "eps": [0.0, 0.02, 0.1, 0.0, 0.02, 0.1],
            "seed": [0, 0, 0, 1, 1, 1],
            "wall_s": [2.0, 1.5, 1.0, 2.0, 1.5, 1.0],
            "valid": [True, True, False, True, True, True],
        }
    )
    summary = cache_summary(runs)
    on = summary[summary["variant"] == "cache_on"].iloc[0]
    assert on["eps"] == 0.1
    assert on["validity_pct"] == 50.0
    assert summary[summary["variant"] == "cache_off"].iloc[0]["wall_s_mean"] == 2.0


def test_bench_trends():
    runs = pd.DataFrame(
        {
            "length": [32] * 4,
            "eps": [0.0, 0.05, 0.0, 0.05],
            "seed": [0, 0, 1, 1],
            "wall_s": [2.0, 1.0, 2.0, 1.2],
            "deviation": [0.0, 0.3, 0.0, 0.2],
            "rho_early": [0.9, 0.9, 0.9, 0.9],
            "rho_late": [0.8, 0.2, 0.8, 0.95],
        }
    )
    calls = bench_trends(runs)[32]
    assert calls["rho_decreasing_seeds"] == 1
    assert calls["time_nonincreasing"]
    assert calls["deviation_nondecreasing"]


def test_ablation_grids(session_cfg, sampling, corpus):
    service = AblationService(session_cfg, sampling, CorpusService(session_cfg.corpus, session_cfg.seed, read_pdb_file))
    with pytest.raises(ConfigError):
        service.run("everything")
    frame = service.run("length")
    assert list(frame.columns) == ["length", "validity_pct", "wall_s_mean", "rho_mean", "diversity"]
    assert list(frame["length"]) == session_cfg.bench.lengths
    guidance = service.run("guidance")
    assert len(guidance) == len(session_cfg.bench.guidance_sweep) * len(session_cfg.corpus.classes)
    assert guidance["class_alignment"].between(0, 1).all()
