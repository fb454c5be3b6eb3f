"""Exception types shared across the package."""


class CfseError(Exception):
    """Base class for all library errors."""


class NotHermitian(CfseError):
    pass


class TraceNotOne(CfseError):
    pass


class SignatureViolation(CfseError):
    pass


class DimensionMismatch(CfseError):
    pass


class NotUnitary(CfseError):
    pass


class NonPeriodicGenerator(CfseError):
    pass


class InvalidSeed(CfseError):
    pass


class ValidationFailure(CfseError):
    pass


class NoSliceAtoms(CfseError):
    pass


class EmptySlice(CfseError):
    pass


class RootFindStall(CfseError):
    pass


class NoBracket(CfseError):
    pass


class EnsembleEmpty(CfseError):
    pass


class RegularityGateFailed(CfseError):
    pass


class NoAdmissibleStart(CfseError):
    pass


class DegenerateKernel(CfseError):
    pass


class ConstantDirection(CfseError):
    pass


class OverflowGuard(CfseError):
    pass


class ConfigError(CfseError):
    """Experiment configuration failed schema validation."""
