"""Exception hierarchy shared by all modules."""


class IrisFheError(Exception):
    """Base class; the CLI maps any subclass to exit code 1."""


class ConfigError(IrisFheError):
    """Invalid configuration (CLI exit code 2)."""


# iris_core
class ZeroOverlap(IrisFheError):
    pass


# modmat
class ModulusTooLarge(IrisFheError):
    pass


class AccumulationOverflowRisk(IrisFheError):
    pass


# emulator
class ShapeMismatch(IrisFheError):
    pass


class LevelMismatch(IrisFheError):
    pass


class ScaleMismatch(IrisFheError):
    pass


class EncodingMismatch(IrisFheError):
    pass


class ModulusExhausted(IrisFheError):
    pass


class ProfileMismatch(IrisFheError):
    pass


class NonRealMessage(IrisFheError):
    pass


class ModulusBudget(IrisFheError):
    pass


# poly_design
class IllConditioned(IrisFheError):
    pass


class NonConvergence(IrisFheError):
    pass


class TargetUnreachable(IrisFheError):
    pass


# pipeline
class GapCollapsed(IrisFheError):
    pass


# thfhe_sim
class BadThreshold(IrisFheError):
    pass


class UnknownParticipant(IrisFheError):
    pass


class RoundingAmbiguity(IrisFheError):
    pass


# analysis
class InsufficientTrials(IrisFheError):
    pass
