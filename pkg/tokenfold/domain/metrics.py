"""
Geometric validity metrics for generated backbones.
"""

import itertools
import logging
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel
from scipy.spatial.distance import pdist, squareform

from .constants import CA_CA_IDEAL, CA_CA_TOLERANCE, CLASH_DISTANCE
from .geometry import AtomicBackbone, aligned_rmsd

logger = logging.getLogger(__name__)

VALID_BOND_FRACTION = 0.9

# Cα(i)–Cα(i+3) distance bands
HELIX_I3_MAX = 6.0
STRAND_I3_MIN = 9.0


class MetricsReport(BaseModel):
    length: int
    ca_mean: float
    ca_min: float
    ca_max: float
    near_ideal_fraction: float
    clashes: int
    radius_of_gyration: float
    valid: bool


def clash_count(ca: np.ndarray, threshold: float = CLASH_DISTANCE) -> int:
    """Pairs with ``|i - j| > 1`` closer than ``threshold``."""
    if len(ca) < 3:
        return 0
    d = squareform(pdist(ca))
    i, j = np.triu_indices(len(ca), k=2)
    return int((d[i, j] < threshold).sum())


def radius_of_gyration(ca: np.ndarray) -> float:
    if len(ca) == 0:
        return 0.0
    return float(np.sqrt(((ca - ca.mean(axis=0)) ** 2).sum(axis=1).mean()))


def evaluate(bb: AtomicBackbone) -> MetricsReport:
    d = bb.ca_distances()
    if len(d):
        near = float((np.abs(d - CA_CA_IDEAL) <= CA_CA_TOLERANCE).mean())
        stats = float(d.mean()), float(d.min()), float(d.max())
    else:
        near, stats = 0.0, (0.0, 0.0, 0.0)
    clashes = clash_count(bb.ca)
    return MetricsReport(
        length=len(bb),
        ca_mean=stats[0],
        ca_min=stats[1],
        ca_max=stats[2],
        near_ideal_fraction=near,
        clashes=clashes,
        radius_of_gyration=radius_of_gyration(bb.ca),
        valid=bool(len(d)) and near >= VALID_BOND_FRACTION and clashes == 0,
    )


def validity_rate(reports: Sequence[MetricsReport]) -> float:
    return float(np.mean([r.valid for r in reports])) if reports else 0.0


def diversity(structures: Sequence[AtomicBackbone]) -> float:
    """Mean pairwise aligned Cα RMSD; 0 for fewer than two structures."""
    pairs = [
        aligned_rmsd(a.ca, b.ca)[0]
        for a, b in itertools.combinations(structures, 2)
        if len(a) == len(b) and len(a) >= 3
    ]
    return float(np.mean(pairs)) if pairs else 0.0


def secondary_structure_profile(bb: AtomicBackbone) -> List[str]:
    """Per-position call from the Cα(i)–Cα(i+3) distance: H, E or L."""
    ca = bb.ca
    if len(ca) < 4:
        return []
    d = np.linalg.norm(ca[3:] - ca[:-3], axis=1)
    return ["H" if x < HELIX_I3_MAX else "E" if x > STRAND_I3_MIN else "L" for x in d]


def secondary_structure_class(bb: AtomicBackbone) -> int:
    """0 helix-bundle, 1 sheet, 2 mixed."""
    profile = secondary_structure_profile(bb)
    if not profile:
        return 2
    helix = profile.count("H") / len(profile)
    strand = profile.count("E") / len(profile)
    if helix >= 0.5 and strand < 0.15:
        return 0
    if strand >= 0.4 and helix < 0.15:
        return 1
    return 2
