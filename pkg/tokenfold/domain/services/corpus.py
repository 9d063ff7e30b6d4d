import logging
from pathlib import Path
from typing import Callable, Dict, List, Tuple

from ..geometry import AtomicBackbone, BackboneFrames, frames_from_atoms
from ..metrics import secondary_structure_class
from ..models.config import CorpusConfig
from ..synthetic import default_specs, generate_synthetic_corpus

logger = logging.getLogger(__name__)

PdbReader = Callable[[Path], Dict[str, AtomicBackbone]]
LabelledChain = Tuple[BackboneFrames, int]


class CorpusService:
    """Synthetic fold corpus, optionally mixed with chains read from PDB files."""

    def __init__(self, cfg: CorpusConfig, seed: int, pdb_reader: PdbReader):
        self.cfg = cfg
        self.seed = seed
        self.pdb_reader = pdb_reader
        self._chains: List[LabelledChain] | None = None

    def synthetic(self) -> List[LabelledChain]:
        specs = default_specs(
            self.cfg.classes,
            self.cfg.n_per_class,
            self.cfg.min_length,
            self.cfg.max_length,
            self.cfg.jitter,
            self.seed,
        )
        return generate_synthetic_corpus(specs, self.seed)

    def from_pdb(self) -> List[LabelledChain]:
        chains: List[LabelledChain] = []
        for path in self.cfg.pdb_files:
            for chain_id, bb in self.pdb_reader(path).items():
                if len(bb) < self.cfg.min_length:
                    logger.info(f"Skipping {path}:{chain_id} with {len(bb)} residues")
                    continue
                # PDB chains carry no fold label; use the geometric class call
                chains.append((frames_from_atoms(bb), secondary_structure_class(bb)))
        return chains

    def load(self) -> List[LabelledChain]:
        if self._chains is None:
            self._chains = self.synthetic() + self.from_pdb()
            logger.info(f"Corpus ready: {len(self._chains)} chains")
        return self._chains

    def frames(self) -> List[BackboneFrames]:
        return [f for f, _ in self.load()]
