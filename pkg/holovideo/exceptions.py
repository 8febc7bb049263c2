class HolovideoError(Exception):
    """Base class for every error raised by the holovideo package."""


class ValidationError(HolovideoError, ValueError):
    """Invalid parameters, dimension or kind mismatches, out-of-range indices."""


class ConfigError(HolovideoError):
    """An experiment config could not be read or does not validate."""


class CorruptRasterError(HolovideoError):
    """A raster file has a bad magic, dtype, or payload size."""


class MaskValidationError(HolovideoError):
    """A generated mask stack failed one of its structural checks."""

    def __init__(self, report):
        self.report = report
        super().__init__(f"Mask validation failed: {', '.join(report.failures())}")


class NumericalAbort(HolovideoError):
    """The solver produced non-finite values; carries the partial trace."""

    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)
