from .corpus import CorpusService
from .training import TrainingService, fit_models
from .sampling import SampleResult, SamplingService
from .bench import BenchResult, BenchService
from .ablation import AblationService
from .verify import VerifyService


__all__ = [
    "CorpusService",
    "TrainingService",
    "fit_models",
    "SampleResult",
    "SamplingService",
    "BenchResult",
    "BenchService",
    "AblationService",
    "VerifyService",
]
