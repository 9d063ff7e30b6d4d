import argparse
import json
import logging

from dependency_injector.wiring import Provide, inject

from ...context import AppContainer
from ...domain.models.config import RunConfig
from ...domain.services import BenchService

logger = logging.getLogger(__name__)

BENCH_DIR = "bench"


@inject
def bench_cache(
    args: argparse.Namespace,
    cfg: RunConfig = Provide[AppContainer.run_config],
    bench: BenchService = Provide[AppContainer.bench_service],
) -> int:
    lengths = [args.length] if args.length is not None else None
    eps_sweep = [args.eps] if args.eps is not None else None
    seeds = [args.seed] if args.seed is not None else None
    result = bench.run_cache_bench(lengths=lengths, eps_sweep=eps_sweep, seeds=seeds)

    out_dir = cfg.paths.outputs / BENCH_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    result.steps.to_csv(out_dir / "cache_steps.csv", index=False)
    result.runs.to_csv(out_dir / "cache_runs.csv", index=False)
    result.summary.to_csv(out_dir / "cache_summary.csv", index=False)
    bench.drift_by_length().to_csv(out_dir / "drift_by_length.csv", index=False)
    trends = result.trends()
    (out_dir / "cache_trends.json").write_text(json.dumps(trends, indent=2))
    for length, calls in trends.items():
        logger.info(f"L={length}: {calls}")
    logger.info(f"Benchmark written to {out_dir}")
    return 0
