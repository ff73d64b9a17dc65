"""Exception hierarchy shared by all slipforge modules."""


class SlipforgeError(Exception):
    """Base class for every error raised by this package."""


class ModelDomainError(SlipforgeError, ValueError):
    """A state or input lies outside the region where the car model is defined."""


class SpeedBelowFloorError(ModelDomainError):
    pass


class WheelRateBelowFloorError(ModelDomainError):
    pass


class LoadTransferSingularityError(ModelDomainError):
    pass


class ConfigError(SlipforgeError, ValueError):
    pass


class ReferenceWindowError(SlipforgeError, ValueError):
    pass


class NonFiniteCostError(SlipforgeError, FloatingPointError):
    pass


class InversionError(SlipforgeError, ValueError):
    """Base class for failures of the force-to-input conversion."""


class InfeasibleDirectionError(InversionError):
    pass


class FrictionLimitError(InversionError):
    pass


class NoRootError(InversionError):
    pass


class TargetSlipError(InversionError):
    pass


class EmptyDatasetError(SlipforgeError, ValueError):
    pass


class BarrierDomainError(SlipforgeError, ValueError):
    pass


class DiscontinuousCourseError(SlipforgeError, ValueError):
    pass
