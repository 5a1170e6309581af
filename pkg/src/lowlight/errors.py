"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class LowlightError(Exception):
    kind = "error"


class ShapeError(LowlightError, ValueError):
    kind = "shape"


class ConfigError(LowlightError, ValueError):
    kind = "config"


class InputError(LowlightError, ValueError):
    kind = "input"


class CalibrationError(LowlightError):
    kind = "calibration"


class TrainingError(LowlightError):
    kind = "training"


class LoadError(LowlightError):
    kind = "load"


class FormatError(LowlightError, OSError):
    kind = "io"
