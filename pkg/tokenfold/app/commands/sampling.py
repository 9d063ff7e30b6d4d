import argparse
import logging
from typing import List

import pandas as pd
from dependency_injector.wiring import Provide, inject

from ...context import AppContainer
from ...domain.models.config import RunConfig
from ...domain.services import SampleResult, SamplingService
from ...infra import write_pdb
from ..dto import SampleSummary

logger = logging.getLogger(__name__)

SAMPLES_DIR = "samples"
SUMMARY_FILE = "metrics.csv"


def _summaries(results: List[SampleResult], cfg: RunConfig, write_trajectories: bool) -> List[SampleSummary]:
    out_dir = cfg.paths.outputs / SAMPLES_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    for r in results:
        pdb_file = out_dir / f"sample_{r.seed}.pdb"
        pdb_file.write_text(write_pdb(r.atoms))
        trajectory_file = None
        if write_trajectories:
            trajectory_file = out_dir / f"trajectory_{r.seed}.csv"
            pd.DataFrame(r.trajectory.as_rows()).to_csv(trajectory_file, index=False)
        summaries.append(
            SampleSummary(
                seed=r.seed,
                length=len(r.atoms),
                eps=cfg.sampler.eps_cache,
                valid=r.report.valid,
                near_ideal_fraction=r.report.near_ideal_fraction,
                clashes=r.report.clashes,
                radius_of_gyration=r.report.radius_of_gyration,
                wall_s=r.trajectory.wall_ns / 1e9,
                total_pair_updates=r.trajectory.total_pair_updates,
                pdb_file=str(pdb_file),
                trajectory_file=str(trajectory_file) if trajectory_file else None,
            )
        )
    return summaries


@inject
def sample(
    args: argparse.Namespace,
    cfg: RunConfig = Provide[AppContainer.run_config],
    sampling: SamplingService = Provide[AppContainer.sampling_service],
) -> int:
    results = sampling.sample(args.n, reference=args.reference, serial=args.serial)
    summaries = _summaries(results, cfg, write_trajectories=not args.no_trajectory)
    summary_file = cfg.paths.outputs / SAMPLES_DIR / SUMMARY_FILE
    pd.DataFrame([s.model_dump() for s in summaries]).to_csv(summary_file, index=False)
    valid = sum(s.valid for s in summaries)
    logger.info(f"Wrote {len(summaries)} structures ({valid} valid) and {summary_file}")
    return 0
