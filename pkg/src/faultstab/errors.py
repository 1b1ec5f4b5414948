"""Exception types.  Numerical failures are distinguished from bad input so
the command-line driver can map them to different exit codes."""


class ConfigError(ValueError):
    """Invalid or unsatisfiable configuration."""


class PreconditionError(ValueError):
    """A numerical precondition (e.g. a spectral gap) does not hold."""


class NumericalError(RuntimeError):
    """Base class for failures during a computation."""


class SingularityError(NumericalError):
    """Kernel evaluated where the fault point meets the evaluation point."""


class AssemblyError(NumericalError):
    pass


class SampleError(NumericalError):
    pass


class TrainingError(NumericalError):
    pass


class ReportError(NumericalError):
    pass


class DataFormatError(ValueError):
    """Malformed dataset or model file."""
