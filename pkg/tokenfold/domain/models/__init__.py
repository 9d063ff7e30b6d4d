from .config import (
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


__all__ = [
    "BenchConfig",
    "CorpusConfig",
    "DecoderConfig",
    "DiTConfig",
    "IPAConfig",
    "PathsConfig",
    "RunConfig",
    "SamplerConfig",
    "ScheduleConfig",
    "TokenizerConfig",
    "TrainingConfig",
]
