from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dependency_injector import containers, providers
from pydantic import ValidationError

from tokenfold import load_yaml_config

from ..domain.exceptions import ConfigError
from ..domain.models.config import RunConfig
from ..domain.services import (
    AblationService,
    BenchService,
    CorpusService,
    SamplingService,
    TrainingService,
    VerifyService,
)
from ..infra import IGSO3Cache, ModelStore, get_settings, read_pdb_file

DEFAULT_CONFIG = Path(__file__).parent.parent / "config.yaml"


def _apply(cfg: Dict[str, Any], dotted: str, value):
    *sections, key = dotted.split(".")
    for section in sections:
        cfg = cfg.setdefault(section, {})
    cfg[key] = value


def load_run_config(config_file: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    YAML config with env placeholders, ``TOKENFOLD_DATA_DIR`` and dotted
    overrides such as ``{"sampler.length": 128}`` applied, then validated.
    """
    try:
        raw = load_yaml_config(config_file or DEFAULT_CONFIG)
    except (FileNotFoundError, ValueError, yaml.YAMLError) as exc:
        raise ConfigError(str(exc)) from exc
    settings = get_settings()
    if settings.TOKENFOLD_DATA_DIR is not None:
        _apply(raw, "paths.data_dir", str(settings.TOKENFOLD_DATA_DIR))
    for dotted, value in (overrides or {}).items():
        if value is not None:
            _apply(raw, dotted, value)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


class AppContainer(containers.DeclarativeContainer):
    run_config = providers.Dependency(instance_of=RunConfig)

    model_store = providers.Singleton(ModelStore, path=run_config.provided.paths.model_path)

    igso3_cache = providers.Singleton(IGSO3Cache, cache_dir=run_config.provided.paths.cache_dir)

    corpus_service = providers.Singleton(
        CorpusService,
        cfg=run_config.provided.corpus,
        seed=run_config.provided.seed,
        pdb_reader=providers.Object(read_pdb_file),
    )

    training_service = providers.Singleton(
        TrainingService,
        cfg=run_config,
        store=model_store,
        corpus=corpus_service,
    )

    sampling_service = providers.Singleton(SamplingService, cfg=run_config, store=model_store)

    bench_service = providers.Singleton(
        BenchService,
        cfg=run_config,
        sampling=sampling_service,
        corpus=corpus_service,
    )

    ablation_service = providers.Singleton(
        AblationService,
        cfg=run_config,
        sampling=sampling_service,
        corpus=corpus_service,
    )

    verify_service = providers.Singleton(
        VerifyService,
        cfg=run_config,
        store=model_store,
        igso3_cache=igso3_cache,
    )


def build_container(cfg: RunConfig) -> AppContainer:
    return AppContainer(run_config=cfg)
