from typing import List

import numpy as np
import pytest
import torch

from tokenfold.domain.models.config import (
    BenchConfig,
    CorpusConfig,
    DecoderConfig,
    DiTConfig,
    IPAConfig,
    PathsConfig,
    RunConfig,
    SamplerConfig,
    ScheduleConfig,
    TokenizerConfig,
    TrainingConfig,
)
from tokenfold.domain.services import CorpusService, fit_models
from tokenfold.domain.services.corpus import LabelledChain
from tokenfold.domain.services.training import fit_tokenizer
from tokenfold.infra import get_settings, read_pdb_file

T_SMALL = 20


def tiny_config(data_dir, **updates) -> RunConfig:
    cfg = RunConfig(
        seed=0,
        tokenizer=TokenizerConfig(K=8, d=8, max_iter=50),
        schedule=ScheduleConfig(T=T_SMALL, igso3_num_sigma=8, igso3_omega_resolution=512),
        dit=DiTConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, T=T_SMALL, max_len=64),
        ipa=IPAConfig(n_heads=2, d_head=4, n_query_points=2, n_value_points=2),
        decoder=DecoderConfig(hidden=32, steps=60, batch_size=64, log_every=20),
        training=TrainingConfig(steps=6, batch_size=2, lr=1e-3, log_every=2),
        sampler=SamplerConfig(T=T_SMALL, seed=0, length=16, guidance_w=1.0, frame_refresh=5),
        bench=BenchConfig(lengths=[16], eps_sweep=[0.0, 0.05], seeds=[0, 1], ablation_samples=2,
                          dimension_sweep=[4], granularity_sweep=[1], guidance_sweep=[0.0, 1.0]),
        corpus=CorpusConfig(n_per_class=4, min_length=24, max_length=32, jitter=0.02),
        paths=PathsConfig(data_dir=data_dir),
    )
    return cfg.model_copy(update=updates) if updates else cfg


@pytest.fixture(autouse=True)
def _fresh_settings(monkeypatch):
    monkeypatch.delenv("TOKENFOLD_DATA_DIR", raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def cfg(tmp_path) -> RunConfig:
    return tiny_config(tmp_path)


@pytest.fixture(scope="session")
def session_cfg(tmp_path_factory) -> RunConfig:
    return tiny_config(tmp_path_factory.mktemp("data"))


@pytest.fixture(scope="session")
def corpus(session_cfg) -> List[LabelledChain]:
    return CorpusService(session_cfg.corpus, session_cfg.seed, read_pdb_file).load()


@pytest.fixture(scope="session")
def codebook(session_cfg, corpus):
    return fit_tokenizer(session_cfg, corpus)


@pytest.fixture(scope="session")
def models(session_cfg, corpus):
    torch.manual_seed(0)
    return fit_models(session_cfg, corpus)



@pytest.fixture
def make_config():
    return tiny_config
