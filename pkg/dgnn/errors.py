class DgnnError(Exception):
    code = "dgnn"

    def __init__(self, message=None, code=None):
        super().__init__(message)
        self.message = message
        if code is not None:
            self.code = code

    def __repr__(self):
        return "%s(message=%r, code=%s)" % (
            self.__class__.__name__,
            self.message,
            self.code,
        )

    def one_line(self):
        """Machine-parsable single line used by the CLI."""
        msg = " ".join(str(self.message or "").split())
        return f"error: {self.code}: {self.__class__.__name__}: {msg}"


class ShapeError(DgnnError):
    code = "shape"


class TapeError(DgnnError):
    code = "tape"


class GraphValidationError(DgnnError):
    code = "graph"


class GraphIndexError(DgnnError):
    code = "index"


class ConfigError(DgnnError):
    code = "config"


class NormalizerError(DgnnError):
    code = "normalizer"


class SplitInfeasibleError(DgnnError):
    code = "split"


class TrainingDivergedError(DgnnError):
    code = "diverged"

    def __init__(self, message, epoch, code=None):
        super().__init__(message, code)
        self.epoch = epoch

    def __repr__(self):
        return "%s(message=%r, code=%s, epoch=%d)" % (
            self.__class__.__name__,
            self.message,
            self.code,
            self.epoch,
        )


class OutlierDetectionError(DgnnError):
    code = "outliers"


class CheckpointError(DgnnError):
    code = "checkpoint"
