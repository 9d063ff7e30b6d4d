import argparse
import logging

from dependency_injector.wiring import Provide, inject

from ...context import AppContainer
from ...domain.exceptions import ModelStoreError
from ...domain.geometry import frames_from_atoms
from ...domain.tokenizer import tokenize as tokenize_frames
from ...infra import ModelStore, read_pdb_file
from ..dto import ChainTokens

logger = logging.getLogger(__name__)


@inject
def tokenize(
    args: argparse.Namespace,
    store: ModelStore = Provide[AppContainer.model_store],
) -> int:
    cb = store.load().codebook
    if cb is None:
        raise ModelStoreError("No codebook in the model container; run build-codebook first.")
    for chain_id, bb in read_pdb_file(args.pdb).items():
        if len(bb) < 2:
            logger.warning(f"Chain {chain_id} has {len(bb)} residue(s); skipped")
            continue
        z = tokenize_frames(frames_from_atoms(bb), cb)
        print(ChainTokens(chain=chain_id, length=len(bb), tokens=z.to_text()).model_dump_json())
    return 0
