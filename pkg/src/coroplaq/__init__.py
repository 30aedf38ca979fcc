"""Semi-automatic coronary plaque analysis on CCTA volumes.

Core pipeline: vesselness-guided centerline extraction between seed
points, curved-planar straightening, inner/outer wall segmentation via
exact cyclic MRF solves, plaque composition and stenosis quantification,
dual-energy tissue analysis, and perivascular fat statistics.  A session
HTTP service (`coroplaq serve`) exposes the same operations to
interactive clients; every mutation is event-logged for byte-exact
replay.

Numeric kernels run through numba when available; set COROPLAQ_NUMBA=0
to force the pure-NumPy fallback (`python -m coroplaq.benchmark`
compares the two).
"""

from . import (
    centerline,
    dualenergy,
    errors,
    perivascular,
    phantoms,
    plaque,
    project,
    reformat,
    vesselness,
    volume,
    wall,
)
from ._kernels import backend_name
from .centerline import (
    Centerline,
    SectionMarkers,
    extract_centerline_single_seed,
    extract_centerline_two_seeds,
    set_markers,
)
from .dualenergy import DePair, RigidTransform, de_index, detect_de_pair, register_rigid
from .errors import CoroplaqError
from .perivascular import FatROI, FatStats, build_fat_roi, fat_stats
from .plaque import (
    CompositionThresholds,
    LesionReport,
    PlaqueRegion,
    build_lesion_report,
    build_plaque_region,
    stenosis_and_remodeling,
)
from .project import PipelineConfig, Project, load_project, run_pipeline, save_project
from .reformat import CrossSection, StraightenedVolume, cross_section, straighten
from .vesselness import VesselnessResult, vesselness
from .volume import Volume, load_volume, write_volume
from .wall import (
    EditConstraint,
    PolarSampling,
    WallSurface,
    apply_rbf_correction,
    segment_inner_wall,
    segment_outer_wall,
)

__version__ = "0.1.0"

__all__ = [
    "Centerline",
    "CompositionThresholds",
    "CoroplaqError",
    "CrossSection",
    "DePair",
    "EditConstraint",
    "FatROI",
    "FatStats",
    "LesionReport",
    "PipelineConfig",
    "PlaqueRegion",
    "PolarSampling",
    "Project",
    "RigidTransform",
    "SectionMarkers",
    "StraightenedVolume",
    "VesselnessResult",
    "Volume",
    "WallSurface",
    "apply_rbf_correction",
    "backend_name",
    "build_fat_roi",
    "build_lesion_report",
    "build_plaque_region",
    "centerline",
    "cross_section",
    "de_index",
    "detect_de_pair",
    "dualenergy",
    "errors",
    "extract_centerline_single_seed",
    "extract_centerline_two_seeds",
    "fat_stats",
    "load_project",
    "load_volume",
    "perivascular",
    "phantoms",
    "plaque",
    "project",
    "reformat",
    "register_rigid",
    "run_pipeline",
    "save_project",
    "segment_inner_wall",
    "segment_outer_wall",
    "set_markers",
    "stenosis_and_remodeling",
    "straighten",
    "vesselness",
    "volume",
    "wall",
    "write_volume",
]
