import logging
from dataclasses import dataclass
from typing import List, Optional

from ..diffusion import NoiseSchedule, make_schedule
from ..geometry import AtomicBackbone
from ..metrics import MetricsReport, evaluate
from ..models.config import RunConfig, SamplerConfig
from ..sampler import SamplerModels, Trajectory, sample_many

logger = logging.getLogger(__name__)


@dataclass
class SampleResult:
    seed: int
    trajectory: Trajectory
    atoms: AtomicBackbone
    report: MetricsReport


class SamplingService:

    def __init__(self, cfg: RunConfig, store):
        self.cfg = cfg
        self.store = store
        self._models: Optional[SamplerModels] = None
        self._sched: Optional[NoiseSchedule] = None

    @property
    def schedule(self) -> NoiseSchedule:
        if self._sched is None:
            self._sched = make_schedule(self.cfg.schedule.T, self.cfg.schedule.kind)
        return self._sched

    def models(self) -> SamplerModels:
        if self._models is None:
            bundle = self.store.load()
            self._models = SamplerModels(dit=bundle.dit, decoder=bundle.decoder, codebook=bundle.codebook)
            self._models.check()
        return self._models

    def use_models(self, models: SamplerModels):
        models.check()
        self._models = models

    def sample(self, n: int, sampler: Optional[SamplerConfig] = None, reference: bool = False,
               serial: bool = False) -> List[SampleResult]:
        scfg = sampler or self.cfg.sampler
        runs = sample_many(scfg, self.models(), self.schedule, n, workers=1 if serial else scfg.workers,
                           reference=reference)
        results = [
            SampleResult(seed=scfg.seed + i, trajectory=traj, atoms=traj.atoms, report=evaluate(traj.atoms))
            for i, (traj, _) in enumerate(runs)
        ]
        valid = sum(r.report.valid for r in results)
        logger.info(f"Sampled {n} chains at L={scfg.length} eps={scfg.eps_cache}: {valid}/{n} valid")
        return results
