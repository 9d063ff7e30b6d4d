"""
SE(3) / SO(3) arithmetic on residue frames.

Conventions: a frame ``(R, t)`` maps local points ``x`` to ``R @ x + t``;
``compose(a, b)`` applies ``b`` first. Rotation columns are the local basis
vectors ``e1, e2, e3`` built from the backbone atoms (``e1`` along Cα→C,
``e2`` towards N in the N-Cα-C plane), and the translation is the Cα position.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Sequence, Tuple

import numpy as np
from scipy.linalg import polar
from scipy.spatial.transform import Rotation as ScipyRotation

from .constants import IDEAL_LOCAL_C, IDEAL_LOCAL_CA, IDEAL_LOCAL_N, CA_CA_IDEAL, CA_CA_TOLERANCE
from .exceptions import DegenerateGeometry, ShapeMismatch

logger = logging.getLogger(__name__)

REORTHONORMALIZE_TOL = 1e-7
HARD_ORTHO_TOL = 1e-3
DEGENERATE_NORM = 1e-6


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.flags.writeable = False
    return arr


def _orthonormalize(m: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(m)):
        raise DegenerateGeometry("Rotation matrix has non-finite entries.")
    err = np.abs(m.T @ m - np.eye(3)).max()
    if err > HARD_ORTHO_TOL:
        raise DegenerateGeometry(f"Rotation orthogonality error {err:.3e} exceeds {HARD_ORTHO_TOL}.")
    if np.linalg.det(m) < 0:
        raise DegenerateGeometry("Rotation matrix is a reflection (det < 0).")
    if err > REORTHONORMALIZE_TOL:
        m, _ = polar(m)
    return m


@dataclass(frozen=True, eq=False)
class Rotation:
    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ShapeMismatch(f"Rotation expects a 3x3 matrix, got {m.shape}.")
        object.__setattr__(self, "m", _frozen(_orthonormalize(m)))

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3))

    def inverse(self) -> "Rotation":
        return Rotation(self.m.T)

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation(self.m @ other.m)

    def as_quaternion(self) -> np.ndarray:
        """Unit quaternion ``(w, x, y, z)`` with ``w >= 0``."""
        x, y, z, w = ScipyRotation.from_matrix(self.m).as_quat()
        q = np.array([w, x, y, z])
        return -q if q[0] < 0 else q

    @classmethod
    def from_quaternion(cls, q: Sequence[float]) -> "Rotation":
        w, x, y, z = q
        return cls(ScipyRotation.from_quat([x, y, z, w]).as_matrix())


@dataclass(frozen=True, eq=False)
class RigidFrame:
    rot: Rotation
    trans: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.trans, dtype=np.float64)
        if t.shape != (3,):
            raise ShapeMismatch(f"Translation must be a 3-vector, got {t.shape}.")
        if not np.all(np.isfinite(t)):
            raise DegenerateGeometry("Translation has non-finite entries.")
        object.__setattr__(self, "trans", _frozen(t))

    @classmethod
    def identity(cls) -> "RigidFrame":
        return cls(Rotation.identity(), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return apply(self, points)

    def apply_inverse(self, points) -> np.ndarray:
        return apply_inverse(self, points)

    def __matmul__(self, other: "RigidFrame") -> "RigidFrame":
        return compose(self, other)


def compose(a: RigidFrame, b: RigidFrame) -> RigidFrame:
    return RigidFrame(Rotation(a.rot.m @ b.rot.m), a.rot.m @ b.trans + a.trans)


def invert(f: RigidFrame) -> RigidFrame:
    rt = f.rot.m.T
    return RigidFrame(Rotation(rt), -rt @ f.trans)


def relative_frame(a: RigidFrame, b: RigidFrame) -> RigidFrame:
    """``a⁻¹ ∘ b``: pose of ``b`` expressed in the local frame of ``a``."""
    rt = a.rot.m.T
    return RigidFrame(Rotation(rt @ b.rot.m), rt @ (b.trans - a.trans))


def apply(f: RigidFrame, points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    return x @ f.rot.m.T + f.trans


def apply_inverse(f: RigidFrame, points) -> np.ndarray:
    x = np.asarray(points, dtype=np.float64)
    return (x - f.trans) @ f.rot.m


def rotation_angle(r: Rotation) -> float:
    cos = (np.trace(r.m) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def axis_angle(axis, angle: float) -> Rotation:
    u = np.asarray(axis, dtype=np.float64)
    norm = np.linalg.norm(u)
    if norm < DEGENERATE_NORM:
        raise DegenerateGeometry("Rotation axis has zero length.")
    return Rotation(ScipyRotation.from_rotvec(u / norm * angle).as_matrix())


def random_rotation(rng: np.random.Generator) -> Rotation:
    # normalized Gaussian quaternions are Haar-uniform on SO(3)
    q = rng.standard_normal(4)
    return Rotation(ScipyRotation.from_quat(q / np.linalg.norm(q)).as_matrix())


def random_rigid(rng: np.random.Generator, translation_scale: float = 10.0) -> RigidFrame:
    return RigidFrame(random_rotation(rng), rng.normal(scale=translation_scale, size=3))


class BackboneFrames:
    """
    Ordered residue frames stored as stacked ``rots (L, 3, 3)`` / ``trans (L, 3)``.
    """

    def __init__(self, rots, trans):
        rots = np.asarray(rots, dtype=np.float64)
        trans = np.asarray(trans, dtype=np.float64)
        if rots.ndim != 3 or rots.shape[1:] != (3, 3) or trans.shape != (rots.shape[0], 3):
            raise ShapeMismatch(f"Frames need (L,3,3) and (L,3), got {rots.shape} and {trans.shape}.")
        if rots.shape[0] < 1:
            raise ShapeMismatch("BackboneFrames needs at least one frame.")
        if not np.all(np.isfinite(trans)):
            raise DegenerateGeometry("Frame translations have non-finite entries.")
        rots = np.stack([_orthonormalize(r) for r in rots]) if _needs_fix(rots) else rots.copy()
        self.rots = _frozen(rots)
        self.trans = _frozen(trans)

    @classmethod
    def from_frames(cls, frames: Sequence[RigidFrame]) -> "BackboneFrames":
        return cls(np.stack([f.rot.m for f in frames]), np.stack([f.trans for f in frames]))

    def __len__(self) -> int:
        return self.rots.shape[0]

    def __getitem__(self, i: int) -> RigidFrame:
        return RigidFrame(Rotation(self.rots[i]), self.trans[i])

    def __iter__(self) -> Iterator[RigidFrame]:
        for i in range(len(self)):
            yield self[i]

    def __repr__(self) -> str:
        return f"BackboneFrames(L={len(self)})"

    def left_compose(self, g: RigidFrame) -> "BackboneFrames":
        return left_compose(g, self)

    def relative(self) -> "BackboneFrames":
        return relative_frames(self)

    @property
    def ca(self) -> np.ndarray:
        return self.trans


def _needs_fix(rots: np.ndarray) -> bool:
    eye = np.eye(3)
    err = np.abs(np.einsum("lji,ljk->lik", rots, rots) - eye).max()
    return bool(err > REORTHONORMALIZE_TOL or np.any(np.linalg.det(rots) < 0) or not np.all(np.isfinite(rots)))


def left_compose(g: RigidFrame, frames: BackboneFrames) -> BackboneFrames:
    rots = np.einsum("ij,ljk->lik", g.rot.m, frames.rots)
    trans = frames.trans @ g.rot.m.T + g.trans
    return BackboneFrames(rots, trans)


def relative_frames(frames: BackboneFrames) -> BackboneFrames:
    """Consecutive ``ΔT_i = T_i⁻¹ ∘ T_{i+1}``, length ``L - 1``."""
    if len(frames) < 2:
        raise ShapeMismatch("Relative frames need L >= 2.")
    r_i, r_j = frames.rots[:-1], frames.rots[1:]
    rots = np.einsum("lji,ljk->lik", r_i, r_j)
    trans = np.einsum("lji,lj->li", r_i, frames.trans[1:] - frames.trans[:-1])
    return BackboneFrames(rots, trans)


@dataclass(frozen=True, eq=False)
class AtomicBackbone:
    n: np.ndarray
    ca: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=np.float64).reshape(-1, 3) for a in (self.n, self.ca, self.c)]
        if not (arrays[0].shape == arrays[1].shape == arrays[2].shape):
            raise ShapeMismatch("N, CA and C arrays must have the same length.")
        for name, a in zip(("n", "ca", "c"), arrays):
            object.__setattr__(self, name, _frozen(a))

    @classmethod
    def empty(cls) -> "AtomicBackbone":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)))

    def __len__(self) -> int:
        return self.ca.shape[0]

    def transformed(self, g: RigidFrame) -> "AtomicBackbone":
        return AtomicBackbone(apply(g, self.n), apply(g, self.ca), apply(g, self.c))

    def ca_distances(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.ca, axis=0), axis=1)

    @property
    def valid_geometry(self) -> bool:
        """Diagnostic flag: every consecutive Cα-Cα distance in (2.0, 4.5) Å."""
        d = self.ca_distances()
        return bool(np.all((d > 2.0) & (d < 4.5)))

    def near_ideal_fraction(self) -> float:
        d = self.ca_distances()
        if d.size == 0:
            return 1.0
        return float(np.mean(np.abs(d - CA_CA_IDEAL) <= CA_CA_TOLERANCE))


def frames_from_atoms(bb: AtomicBackbone) -> BackboneFrames:
    v1 = bb.c - bb.ca
    v2 = bb.n - bb.ca
    n1 = np.linalg.norm(v1, axis=1)
    if np.any(n1 < DEGENERATE_NORM):
        raise DegenerateGeometry(f"Coincident C/CA atoms at residues {np.flatnonzero(n1 < DEGENERATE_NORM).tolist()}.")
    e1 = v1 / n1[:, None]
    u2 = v2 - np.sum(v2 * e1, axis=1, keepdims=True) * e1
    n2 = np.linalg.norm(u2, axis=1)
    if np.any(n2 < DEGENERATE_NORM):
        raise DegenerateGeometry(f"Collinear N/CA/C atoms at residues {np.flatnonzero(n2 < DEGENERATE_NORM).tolist()}.")
    e2 = u2 / n2[:, None]
    e3 = np.cross(e1, e2)
    return BackboneFrames(np.stack([e1, e2, e3], axis=-1), bb.ca)


def atoms_from_frames(frames: BackboneFrames) -> AtomicBackbone:
    def place(local):
        return np.einsum("lij,j->li", frames.rots, local) + frames.trans

    return AtomicBackbone(place(IDEAL_LOCAL_N), place(IDEAL_LOCAL_CA), place(IDEAL_LOCAL_C))


def kabsch(x, y) -> RigidFrame:
    """Rigid motion minimizing ``Σ ‖g·x_i − y_i‖²``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 2 or x.shape[1] != 3:
        raise ShapeMismatch(f"Point sets differ in shape: {x.shape} vs {y.shape}.")
    if x.shape[0] < 3:
        raise ShapeMismatch("Alignment needs at least 3 points.")
    mx, my = x.mean(axis=0), y.mean(axis=0)
    h = (x - mx).T @ (y - my)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T)) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidFrame(Rotation(r), my - r @ mx)


def aligned_rmsd(x, y) -> Tuple[float, RigidFrame]:
    g = kabsch(x, y)
    diff = apply(g, x) - np.asarray(y, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=1)))), g


def frames_rmsd(a: BackboneFrames, b: BackboneFrames) -> float:
    """Aligned Cα RMSD between two frame sets of equal length."""
    return aligned_rmsd(a.trans, b.trans)[0]


def frame_errors(a: BackboneFrames, b: BackboneFrames) -> Tuple[float, float]:
    """Max rotation-matrix entry error and max translation error."""
    if len(a) != len(b):
        raise ShapeMismatch(f"Frame sets differ in length: {len(a)} vs {len(b)}.")
    return float(np.abs(a.rots - b.rots).max()), float(np.abs(a.trans - b.trans).max())


__all__: List[str] = [
    "Rotation",
    "RigidFrame",
    "BackboneFrames",
    "AtomicBackbone",
    "compose",
    "invert",
    "relative_frame",
    "relative_frames",
    "apply",
    "apply_inverse",
    "rotation_angle",
    "axis_angle",
    "random_rotation",
    "random_rigid",
    "left_compose",
    "frames_from_atoms",
    "atoms_from_frames",
    "kabsch",
    "aligned_rmsd",
    "frames_rmsd",
    "frame_errors",
]
