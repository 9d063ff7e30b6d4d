import argparse
import logging

from dependency_injector.wiring import Provide, inject

from ...context import AppContainer
from ...domain.services import TrainingService

logger = logging.getLogger(__name__)


@inject
def build_codebook(
    args: argparse.Namespace,
    training: TrainingService = Provide[AppContainer.training_service],
) -> int:
    cb = training.build_codebook()
    logger.info(
        f"Codebook built: K={cb.K} d={cb.d} F={cb.F} pool={cb.pool} "
        f"min centroid gap={cb.min_centroid_gap():.4g}"
    )
    return 0


@inject
def train_decoder(
    args: argparse.Namespace,
    training: TrainingService = Provide[AppContainer.training_service],
) -> int:
    fit = training.train_decoder()
    final = f"{fit.losses[-1]:.5f}" if fit.losses else "n/a"
    logger.info(f"Decoder trained: {len(fit.losses)} logged steps, final loss {final}")
    return 0


@inject
def train_dit(
    args: argparse.Namespace,
    training: TrainingService = Provide[AppContainer.training_service],
) -> int:
    model = training.train_dit()
    n_params = sum(p.numel() for p in model.parameters())
    logger.info(f"DiT trained: {n_params} parameters")
    return 0
