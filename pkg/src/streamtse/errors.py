"""Exception types raised across the package."""


class StreamTSEError(Exception):
    """Base class for all package errors."""


class GranularityError(StreamTSEError, ValueError):
    """Chunk duration is not a whole number of 40 ms codec frames."""


class LengthError(StreamTSEError, ValueError):
    """Waveform length is not a whole number of codec frames."""


class ShapeError(StreamTSEError, ValueError):
    """Array shapes do not satisfy an operation's contract."""


class StepOrderError(StreamTSEError, ValueError):
    """A layout append skipped or repeated a step index."""


class EmptyReference(StreamTSEError, ValueError):
    """The reference utterance produced no frames."""


class RangeError(StreamTSEError, IndexError):
    """A cache position lies outside the valid range."""


class WavFormatError(StreamTSEError, ValueError):
    """WAV file is not PCM16 mono 16 kHz."""


class LayoutError(StreamTSEError, ValueError):
    """A layout does not match its strategy's grammar."""
