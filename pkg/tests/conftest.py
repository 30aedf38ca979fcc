"""Shared fixtures: phantom volumes on disk, reused across test modules.

Everything here is deterministic; expensive phantoms and extractions are
session-scoped so the suite stays fast on a single core.
"""

from __future__ import annotations

import numpy as np
import pytest

from coroplaq import phantoms
from coroplaq.centerline import extract_centerline_two_seeds, set_markers
from coroplaq.reformat import straighten
from coroplaq.volume import write_volume
from coroplaq.wall import segment_inner_wall, segment_outer_wall


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("volumes")


@pytest.fixture(scope="session")
def tube96(data_dir):
    """Lumen 1.6 mm + wall to 2.6 mm, 96^3 at 0.4 mm, centered origin."""
    ph = phantoms.layered_tube(
        shape=(96, 96, 96),
        spacing=(0.4, 0.4, 0.4),
        layers=((1.6, 350.0), (2.6, 60.0)),
        hu_background=-80.0,
    )
    path = str(data_dir / "tube96.mhd")
    write_volume(ph.volume, path)
    return ph, path


@pytest.fixture(scope="session")
def tube96_sv(tube96):
    """Centerline, markers [4, 26], and straightened stack on the tube."""
    ph, _ = tube96
    c = extract_centerline_two_seeds(ph.volume, (0, 0, -15.0), (0, 0, 15.0))
    m = set_markers(c, 4.0, 26.0)
    sv = straighten(ph.volume, c, m)
    return ph, c, m, sv


@pytest.fixture(scope="session")
def tube96_chain(tube96_sv):
    """Surface pair on top of the straightened tube."""
    ph, c, m, sv = tube96_sv
    inner = segment_inner_wall(sv)
    outer = segment_outer_wall(sv, inner, threshold=0.3)
    return ph, c, m, inner, outer


@pytest.fixture(scope="session")
def tube128_sv(data_dir):
    """Finer tube (lumen 2.0 mm, wall to 3.0 mm, 0.2 mm voxels): the
    reference geometry for outer-wall accuracy, where the wall-to-
    background edge is well resolved."""
    ph = phantoms.layered_tube(
        shape=(128, 128, 120),
        spacing=(0.2, 0.2, 0.2),
        layers=((2.0, 350.0), (3.0, 60.0)),
        hu_background=-150.0,
    )
    c = extract_centerline_two_seeds(ph.volume, (0, 0, -9.0), (0, 0, 9.0))
    m = set_markers(c, 3.0, 15.0)
    sv = straighten(ph.volume, c, m)
    return ph, c, m, sv


@pytest.fixture(scope="session")
def tube128_chain(tube128_sv):
    ph, c, m, sv = tube128_sv
    inner = segment_inner_wall(sv)
    outer = segment_outer_wall(sv, inner, threshold=0.3)
    return ph, c, m, inner, outer


@pytest.fixture(scope="session")
def noise64(data_dir):
    """Band-limited random field: the asymmetric registration target."""
    ph = phantoms.smooth_noise(
        shape=(64, 64, 64), spacing=(0.8, 0.8, 0.8), correlation_mm=2.5, seed=7
    )
    path = str(data_dir / "noise64.mhd")
    write_volume(ph.volume, path)
    return ph, path
