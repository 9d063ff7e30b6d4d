"""
Synthetic labelled fold corpus built from ideal dihedral runs.
"""

import logging
from typing import List, Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .constants import (
    CA_C_LENGTH,
    CA_C_N_ANGLE,
    C_N_CA_ANGLE,
    C_N_LENGTH,
    HELIX_PHI_PSI,
    N_CA_C_ANGLE,
    N_CA_LENGTH,
    OMEGA_TRANS,
    STRAND_PHI_PSI,
)
from .exceptions import ConfigError
from .geometry import AtomicBackbone, BackboneFrames, frames_from_atoms

logger = logging.getLogger(__name__)

# loop conformations (φ, ψ): type I and II turn positions, polyproline
LOOP_PHI_PSI = [(-60.0, -30.0), (-90.0, 0.0), (-60.0, 120.0), (80.0, 0.0), (-75.0, 145.0)]
LOOP_JITTER_DEG = 10.0


class Segment(BaseModel):
    kind: Literal["H", "E", "L"]
    length: int = Field(ge=1)


class SyntheticFoldSpec(BaseModel):
    class_id: int = Field(ge=0, le=2)
    length: int = Field(ge=2)
    segments: List[Segment]
    jitter: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _segments_tile_chain(self):
        covered = sum(s.length for s in self.segments)
        if covered != self.length:
            raise ValueError(f"segments cover {covered} residues, chain has {self.length}")
        return self

    def residue_kinds(self) -> List[str]:
        return [s.kind for s in self.segments for _ in range(s.length)]


def _plan(class_id: int, length: int, rng: np.random.Generator) -> List[Segment]:
    if class_id == 0:
        runs = [("H", (14, 20)), ("L", (3, 5))]
    elif class_id == 1:
        runs = [("E", (5, 8)), ("L", (2, 4))]
    elif class_id == 2:
        runs = [("H", (10, 14)), ("L", (3, 4)), ("E", (5, 7)), ("L", (2, 4))]
    else:
        raise ConfigError(f"Unknown fold class {class_id}.")

    segments: List[Segment] = []
    left, i = length, 0
    while left > 0:
        kind, (lo, hi) = runs[i % len(runs)]
        n = min(int(rng.integers(lo, hi + 1)), left)
        segments.append(Segment(kind=kind, length=n))
        left -= n
        i += 1
    return segments


def make_fold_spec(class_id: int, length: int, rng: np.random.Generator, jitter: float = 0.0) -> SyntheticFoldSpec:
    return SyntheticFoldSpec(class_id=class_id, length=length, segments=_plan(class_id, length, rng), jitter=jitter)


def place_atom(a, b, c, bond: float, angle_deg: float, torsion_deg: float) -> np.ndarray:
    """Atom d with |cd| = bond, angle(b, c, d) = angle and dihedral(a, b, c, d) = torsion."""
    angle, torsion = np.deg2rad(angle_deg), np.deg2rad(torsion_deg)
    bc = (c - b) / np.linalg.norm(c - b)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    return c + bond * (-np.cos(angle) * bc + np.sin(angle) * np.cos(torsion) * m + np.sin(angle) * np.sin(torsion) * n)


def build_backbone(phi: Sequence[float], psi: Sequence[float], omega: Sequence[float]) -> AtomicBackbone:
    """
    Torsion-to-coordinates chain builder with ideal bond lengths and angles.
    ``phi[0]`` and the last ``psi``/``omega`` are unused.
    """
    L = len(phi)
    n = np.zeros((L, 3))
    ca = np.zeros((L, 3))
    c = np.zeros((L, 3))
    ca[0] = [N_CA_LENGTH, 0.0, 0.0]
    theta = np.deg2rad(N_CA_C_ANGLE)
    c[0] = ca[0] + CA_C_LENGTH * np.array([-np.cos(theta), np.sin(theta), 0.0])
    for i in range(L - 1):
        n[i + 1] = place_atom(n[i], ca[i], c[i], C_N_LENGTH, CA_C_N_ANGLE, psi[i])
        ca[i + 1] = place_atom(ca[i], c[i], n[i + 1], N_CA_LENGTH, C_N_CA_ANGLE, omega[i])
        c[i + 1] = place_atom(c[i], n[i + 1], ca[i + 1], CA_C_LENGTH, N_CA_C_ANGLE, phi[i + 1])
    return AtomicBackbone(n, ca, c)


def ideal_chain(kind: str, length: int) -> AtomicBackbone:
    phi, psi = HELIX_PHI_PSI if kind == "H" else STRAND_PHI_PSI
    return build_backbone([phi] * length, [psi] * length, [OMEGA_TRANS] * length)


def build_from_spec(spec: SyntheticFoldSpec, rng: np.random.Generator) -> AtomicBackbone:
    phi, psi = [], []
    for kind in spec.residue_kinds():
        if kind == "H":
            p, s = HELIX_PHI_PSI
        elif kind == "E":
            p, s = STRAND_PHI_PSI
        else:
            p, s = LOOP_PHI_PSI[int(rng.integers(len(LOOP_PHI_PSI)))]
            p, s = p + rng.normal(0, LOOP_JITTER_DEG), s + rng.normal(0, LOOP_JITTER_DEG)
        phi.append(p)
        psi.append(s)
    bb = build_backbone(phi, psi, [OMEGA_TRANS] * spec.length)
    if spec.jitter > 0:
        bb = AtomicBackbone(
            bb.n + rng.normal(0, spec.jitter, bb.n.shape),
            bb.ca + rng.normal(0, spec.jitter, bb.ca.shape),
            bb.c + rng.normal(0, spec.jitter, bb.c.shape),
        )
    return bb


def generate_synthetic_corpus(specs: Sequence[SyntheticFoldSpec], seed: int) -> List[Tuple[BackboneFrames, int]]:
    rng = np.random.default_rng(seed)
    corpus = [(frames_from_atoms(build_from_spec(spec, rng)), spec.class_id) for spec in specs]
    logger.info(f"Generated {len(corpus)} synthetic chains (seed={seed})")
    return corpus


def default_specs(classes: Sequence[int], n_per_class: int, min_length: int, max_length: int,
                  jitter: float, seed: int) -> List[SyntheticFoldSpec]:
    rng = np.random.default_rng(seed)
    return [
        make_fold_spec(c, int(rng.integers(min_length, max_length + 1)), rng, jitter)
        for c in classes
        for _ in range(n_per_class)
    ]
