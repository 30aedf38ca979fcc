"""Exception hierarchy shared by the library and the session service.

Every error carries a stable machine-readable ``code`` so that API clients
can switch on it without parsing messages.  The HTTP layer maps these codes
onto 4xx responses; everything else surfaces as a 500.
"""


class CoroplaqError(Exception):
    """Base class for all domain errors."""

    code = "error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ParseError(CoroplaqError):
    """Malformed input file (header, JSON document, sidecar)."""

    code = "parse_error"


class UnsupportedFormatError(CoroplaqError):
    """File is well formed but uses an element type or layout we do not read."""

    code = "unsupported_format"


class SizeMismatchError(CoroplaqError):
    """Declared dimensions do not match the number of stored voxels."""

    code = "size_mismatch"


class ParameterError(CoroplaqError):
    """A caller-supplied parameter is outside its documented range."""

    code = "parameter_error"


class OutOfDomainError(CoroplaqError):
    """A sample position lies outside the volume sampling domain."""

    code = "out_of_domain"


class ArclengthRangeError(CoroplaqError):
    """An arclength position lies outside [0, total_length] of a centerline."""

    code = "arclength_out_of_range"


class PhantomSpecError(CoroplaqError):
    """Inconsistent phantom description (e.g. negative radius, bad layers)."""

    code = "phantom_spec_error"


class NoPathError(CoroplaqError):
    """Two seeds are not connected in the search region."""

    code = "no_path"


class NoVesselError(CoroplaqError):
    """Single-seed tracking found no vessel-like signal at the seed."""

    code = "no_vessel_at_seed"


class DegenerateInputError(CoroplaqError):
    """Input collapses to a lower dimension (single point, zero-length path)."""

    code = "degenerate_input"


class CoverageError(CoroplaqError):
    """A requested span is not covered by the available sections."""

    code = "coverage_error"


class ConflictingConstraintsError(CoroplaqError):
    """Surface correction received contradictory targets at one location."""

    code = "conflicting_constraints"


class DegenerateReferenceError(CoroplaqError):
    """Stenosis reference areas are degenerate (both markers at zero area)."""

    code = "degenerate_reference"


class UndecidablePairingError(CoroplaqError):
    """Dual-energy series cannot be paired (missing metadata or ambiguous)."""

    code = "undecidable_pairing"


class RegistrationError(CoroplaqError):
    """Rigid registration could not produce a usable alignment."""

    code = "registration_error"


class NotFoundError(CoroplaqError):
    """Referenced entity (project, centerline, surface, ...) does not exist."""

    code = "not_found"


class VersionError(CoroplaqError):
    """Persisted project file has a schema version newer than this build."""

    code = "version_error"


class StaleEntityError(CoroplaqError):
    """Operation requires a derived entity that is stale after an upstream edit."""

    code = "stale_entity"


class PipelineStepError(CoroplaqError):
    """A pipeline step failed; carries which step so clients can resume."""

    code = "pipeline_step_failed"

    def __init__(self, step: int, step_name: str, message: str):
        super().__init__(f"step {step} ({step_name}): {message}")
        self.step = step
        self.step_name = step_name
