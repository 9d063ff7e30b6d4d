"""
Backbone-only PDB reader and writer using fixed column positions.
"""

import logging
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from ..domain.exceptions import FormatError, ParseError
from ..domain.geometry import AtomicBackbone

logger = logging.getLogger(__name__)

BACKBONE_ATOMS = ("N", "CA", "C")
ACCEPTED_ALTLOCS = (" ", "A")
ATOM_LINE = (
    "ATOM  {serial:5d} {name:<4}{altloc}{resname:>3} {chain}{resseq:4d}{icode}   "
    "{x}{y}{z}{occ:6.2f}{bfac:6.2f}          {element:>2}"
)
TER_LINE = "TER   {serial:5d}      {resname:>3} {chain}{resseq:4d}"


def _coordinate(line: str, start: int, end: int, line_number: int) -> float:
    field = line[start:end]
    try:
        return float(field)
    except ValueError:
        raise ParseError(f"bad coordinate field {field!r}", line_number=line_number) from None


def parse_pdb(text: str) -> Dict[str, AtomicBackbone]:
    """
    N/CA/C per residue per chain from ATOM records of the first model.
    Residues missing a backbone atom are dropped and counted.
    """
    residues: Dict[str, Dict[Tuple[str, str], Dict[str, np.ndarray]]] = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        record = line[0:6]
        if record.startswith("ENDMDL"):
            break
        if record != "ATOM  ":
            continue
        name = line[12:16].strip()
        if name not in BACKBONE_ATOMS:
            continue
        altloc = line[16:17] or " "
        if altloc not in ACCEPTED_ALTLOCS:
            continue
        chain = line[21:22] or " "
        key = (line[22:26], line[26:27])
        xyz = np.array([_coordinate(line, a, a + 8, line_number) for a in (30, 38, 46)])
        atoms = residues.setdefault(chain, {}).setdefault(key, {})
        atoms.setdefault(name, xyz)

    chains: Dict[str, AtomicBackbone] = {}
    dropped = 0
    for chain, by_residue in residues.items():
        complete = [a for a in by_residue.values() if all(n in a for n in BACKBONE_ATOMS)]
        dropped += len(by_residue) - len(complete)
        if not complete:
            continue
        chains[chain] = AtomicBackbone(
            np.stack([a["N"] for a in complete]),
            np.stack([a["CA"] for a in complete]),
            np.stack([a["C"] for a in complete]),
        )
    if dropped:
        logger.warning(f"Dropped {dropped} residues with incomplete backbone atoms")
    return chains


def read_pdb_file(path: Path) -> Dict[str, AtomicBackbone]:
    return parse_pdb(Path(path).read_text())


def _fmt(value: float) -> str:
    s = f"{value:8.3f}"
    if len(s) > 8 or abs(value) >= 10000 or not np.isfinite(value):
        raise FormatError(f"coordinate {value} does not fit the 8.3f column")
    return s


def write_pdb(bb: AtomicBackbone, chain_id: str = "A", resname: str = "GLY") -> str:
    """Fixed-column ATOM records numbered from 1 and a closing TER; empty for L = 0."""
    if len(bb) == 0:
        return ""
    lines: List[str] = []
    serial = 0
    for i in range(len(bb)):
        for name, xyz in zip(BACKBONE_ATOMS, (bb.n[i], bb.ca[i], bb.c[i])):
            serial += 1
            lines.append(
                ATOM_LINE.format(
                    serial=serial,
                    name=" " + name,
                    altloc=" ",
                    resname=resname,
                    chain=chain_id,
                    resseq=i + 1,
                    icode=" ",
                    x=_fmt(xyz[0]),
                    y=_fmt(xyz[1]),
                    z=_fmt(xyz[2]),
                    occ=1.0,
                    bfac=0.0,
                    element=name[0],
                )
            )
    lines.append(TER_LINE.format(serial=serial + 1, resname=resname, chain=chain_id, resseq=len(bb)))
    return "\n".join(lines) + "\n"
