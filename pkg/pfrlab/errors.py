"""
Exception hierarchy and process exit codes for pfrlab
"""

# exit codes, one per pipeline stage
EOPTION_PARSER = 1
ECONFIG = 2
EDESIGN = 10
ERANDOMIZE = 11
ESIMULATE = 12
EFIT = 13
EMETRICS = 14
EREPORT = 15
EINTERRUPTED = 26

STAGE_EXIT_CODES = {
    "design": EDESIGN,
    "randomize": ERANDOMIZE,
    "simulate": ESIMULATE,
    "fit": EFIT,
    "metrics": EMETRICS,
    "report": EREPORT,
}


class PfrLabError(Exception):
    """Base class of every error raised by pfrlab"""


class ConfigError(PfrLabError):
    """Invalid configuration value or unreadable config file"""


class CircuitError(PfrLabError):
    """Malformed circuit text, empty randomization or mismatched frame lists"""


class DesignError(PfrLabError):
    """Invalid experiment design request"""


class InformationallyIncompleteError(PfrLabError):
    """Fiducial-pair data cannot be inverted"""

    def __init__(self, condition_number):
        self.condition_number = condition_number
        super().__init__(f"informationally incomplete data (condition number {condition_number:.3e})")


class GaugeError(PfrLabError):
    """Gauge transform is numerically singular"""


class ConvergenceError(PfrLabError):
    """Every start of a multi-start optimization failed"""


class DofError(PfrLabError):
    """Nested hypotheses do not differ in dimension"""


class StageError(PfrLabError):
    """A harness stage failed; carries the stage name and the partial manifest"""

    def __init__(self, stage, cause, manifest_path=None):
        self.stage = stage
        self.cause = cause
        self.manifest_path = manifest_path
        super().__init__(f"stage '{stage}' failed: {cause}")

    @property
    def exit_code(self):
        return STAGE_EXIT_CODES.get(self.stage, EREPORT)


class DatasetError(PfrLabError):
    """Inconsistent or unreadable shot-count data"""
