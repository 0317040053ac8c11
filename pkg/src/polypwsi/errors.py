"""Exception hierarchy.

Everything raised for bad *data* derives from :class:`PipelineError`; the CLI
maps those to exit code 1.
"""


class PipelineError(Exception):
    """Base class for domain errors (bad input data, not bad usage)."""


class UnknownLabel(PipelineError, ValueError):
    def __init__(self, text, line=None):
        self.text = text
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown class label {text!r}{where}")


class ParseError(PipelineError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateId(PipelineError, ValueError):
    def __init__(self, record_id):
        self.record_id = record_id
        super().__init__(f"duplicate id {record_id!r}")


class EmptyDataset(PipelineError, ValueError):
    pass


class CorruptImage(PipelineError, ValueError):
    pass


class UnsupportedImage(PipelineError, ValueError):
    pass


class OutOfBounds(PipelineError, ValueError):
    pass


class InsufficientData(PipelineError, ValueError):
    pass


class ShapeError(PipelineError, ValueError):
    pass


class RangeError(PipelineError, ValueError):
    pass


class CheckpointError(PipelineError, ValueError):
    pass


class MissingPrediction(PipelineError, KeyError):
    def __init__(self, patch_id):
        self.patch_id = patch_id
        super().__init__(f"no recorded prediction for patch {patch_id!r}")

    def __str__(self):
        return self.args[0]
