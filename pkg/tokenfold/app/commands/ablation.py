import argparse
import logging

from dependency_injector.wiring import Provide, inject

from ...context import AppContainer
from ...domain.models.config import RunConfig
from ...domain.services import AblationService

logger = logging.getLogger(__name__)

ABLATION_DIR = "ablation"


@inject
def ablate(
    args: argparse.Namespace,
    cfg: RunConfig = Provide[AppContainer.run_config],
    ablation: AblationService = Provide[AppContainer.ablation_service],
) -> int:
    frame = ablation.run(args.grid)
    out_dir = cfg.paths.outputs / ABLATION_DIR
    out_dir.mkdir(parents=True, exist_ok=True)
    out_file = out_dir / f"{args.grid}.csv"
    frame.to_csv(out_file, index=False)
    logger.info(f"Ablation '{args.grid}' ({len(frame)} rows) written to {out_file}")
    return 0
