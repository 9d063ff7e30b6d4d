import numpy as np
import pytest

from tokenfold.domain.geometry import AtomicBackbone, random_rigid
from tokenfold.domain.metrics import (
    clash_count,
    diversity,
    evaluate,
    radius_of_gyration,
    secondary_structure_class,
    secondary_structure_profile,
    validity_rate,
)
from tokenfold.domain.synthetic import ideal_chain


def _scaled(bb: AtomicBackbone, factor: float) -> AtomicBackbone:
    return AtomicBackbone(bb.n * factor, bb.ca * factor, bb.c * factor)


def test_ideal_helix_is_valid():
    report = evaluate(ideal_chain("H", 24))
    assert report.valid
    assert report.length == 24
    assert report.near_ideal_fraction == 1.0
    assert report.clashes == 0
    assert report.ca_mean == pytest.approx(3.8, abs=0.05)


def test_compressed_chain_is_invalid():
    report = evaluate(_scaled(ideal_chain("H", 24), 0.5))
    assert not report.valid
    assert report.near_ideal_fraction == 0.0
    assert report.clashes > 0


def test_single_residue_is_invalid():
    bb = ideal_chain("H", 1)
    report = evaluate(bb)
    assert not report.valid
    assert report.clashes == 0


def test_clash_count_skips_neighbours():
    ca = np.stack([np.arange(5.0), np.zeros(5), np.zeros(5)], axis=1)
    assert clash_count(ca) == 3
    assert clash_count(ca[:2]) == 0
    assert clash_count(ca, threshold=1.5) == 0


def test_radius_of_gyration():
    ca = np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    assert radius_of_gyration(ca) == pytest.approx(1.0)
    assert radius_of_gyration(np.zeros((0, 3))) == 0.0


def test_diversity(rng):
    helix, strand = ideal_chain("H", 20), ideal_chain("E", 20)
    assert diversity([helix]) == 0.0
    assert diversity([helix, helix.transformed(random_rigid(rng))]) == pytest.approx(0.0, abs=1e-6)
    assert diversity([helix, strand]) > 1.0
    # mismatched lengths are not compared
    assert diversity([helix, ideal_chain("E", 12)]) == 0.0


def test_class_calls():
    assert secondary_structure_class(ideal_chain("H", 30)) == 0
    assert secondary_structure_class(ideal_chain("E", 30)) == 1
    assert secondary_structure_class(ideal_chain("H", 3)) == 2
    assert set(secondary_structure_profile(ideal_chain("H", 30))) == {"H"}


def test_validity_rate():
    good = evaluate(ideal_chain("H", 10))
    bad = evaluate(_scaled(ideal_chain("H", 10), 0.5))
    assert validity_rate([good, bad, good, good]) == 0.75
    assert validity_rate([]) == 0.0
