"""Exception hierarchy shared by every stage of the pipeline."""


class EmosetError(Exception):
    """Base class for all errors raised by emoset."""


class ArgumentError(EmosetError, ValueError):
    """An argument is out of its documented range."""


class DecodeError(EmosetError):
    """Malformed RIFF/WAVE container."""


class UnsupportedFormat(EmosetError):
    """Well-formed container holding an encoding we do not decode."""


class ManifestError(EmosetError):
    """A filename or directory cannot be mapped to labelled utterances."""


class TooShortError(EmosetError):
    """Signal shorter than one analysis frame."""


class AllUnvoicedError(EmosetError):
    """Voice activity detection discarded every frame of an utterance."""


class DegenerateFrameError(EmosetError, ArithmeticError):
    """Linear prediction on a frame without usable energy."""


class NumericalError(EmosetError, ArithmeticError):
    """An iterative numerical routine failed to converge or diverged."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class ConvergenceWarning(UserWarning):
    """Solver stopped at its iteration cap before reaching tolerance."""
