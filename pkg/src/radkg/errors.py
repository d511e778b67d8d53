"""Exception hierarchy shared by all radkg modules."""


class RadkgError(Exception):
    """Base class for all errors raised by this package."""


class GrammarViolation(RadkgError):
    """Entity text contains characters reserved by the triplet grammar."""


class EmptyCorpus(RadkgError):
    """A vocabulary or training run was requested over zero samples."""


class MissingOutput(RadkgError):
    """A training sample has no output triplets to learn from."""


class UnknownTokenError(RadkgError):
    """A token outside the vocabulary was seen while encoding in training mode."""


class ConfigError(RadkgError):
    """A configuration value violates its invariants."""


class ShapeError(RadkgError):
    """Tensor shapes are incompatible for the requested operation."""


class NonScalarLoss(RadkgError):
    """backward() was called on a tensor that is not a scalar."""


class EmptyMask(RadkgError):
    """A loss mask with no true entries makes the loss undefined."""


class LengthError(RadkgError):
    """A sequence does not fit into the model's context window."""


class NonFiniteGradient(RadkgError):
    """A NaN or infinite gradient was encountered; the optimizer step is aborted."""


class MissingFeatures(RadkgError):
    """No image feature vector is available for the requested sample id."""


class AlignmentError(RadkgError):
    """Prediction and gold collections do not cover the same sample ids."""
