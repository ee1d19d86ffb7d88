"""Exception taxonomy shared across the package.

The CLI maps these onto distinct exit codes (see ``pairsel.cli``).
"""


class PairselError(Exception):
    """Base class for package-specific failures."""


class FormatError(PairselError):
    """Malformed or inconsistent on-disk artifact (manifest, matrix file, plan)."""


class DegenerateEmbeddingError(PairselError):
    """A zero-norm vector made a cosine similarity undefined."""


class InsufficientDataError(PairselError):
    """Fewer than two points were available for a trajectory fit."""


class DegenerateRegressionError(PairselError):
    """All checkpoint indices coincide, so a slope is unidentifiable."""


class DivergenceError(PairselError):
    """Training produced a non-finite loss, parameter, or temperature."""
