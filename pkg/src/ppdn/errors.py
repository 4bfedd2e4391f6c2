"""Exception types shared across the package."""


class PpdnError(Exception):
    """Base class for all ppdn errors."""


class UnsupportedFormatError(PpdnError):
    """Image file is not an 8-bit gray/RGB PNG."""


class PatchTooLargeError(PpdnError):
    """Requested patch size exceeds an image dimension."""


class NonSquarePatchError(PpdnError):
    """Dihedral augmentation requires a square patch."""


class ImageTooSmallError(PpdnError):
    """Image is below the minimum size an operator supports."""


class ShapeMismatchError(PpdnError):
    """Two tensors that must agree in shape do not."""


class InvalidArchError(PpdnError):
    """Network architecture config violates its invariants."""


class LengthMismatchError(PpdnError):
    """Flat parameter/gradient vectors differ in length."""


class StaleTapeError(PpdnError):
    """Gradient tape does not match the current model parameters."""


class EmptyDatasetError(PpdnError):
    """Dataset directory contains no readable images."""


class DivergedLossError(PpdnError):
    """Training loss became non-finite."""


class InsufficientSamplesError(PpdnError):
    """Monte-Carlo routine called with too few samples/trials."""


class CheckpointFormatError(PpdnError):
    """Checkpoint file has a bad magic, version, size, or CRC."""


class ConfigError(PpdnError):
    """Config file or override could not be parsed."""
