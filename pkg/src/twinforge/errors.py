"""Exception hierarchy shared by every twinforge module."""


class TwinError(Exception):
    """Base class for all twinforge errors."""


# store
class DuplicateRecord(TwinError):
    pass


class UnknownPt(TwinError, KeyError):
    pass


class BadFeatureVector(TwinError, ValueError):
    pass


class MissingRecord(TwinError, KeyError):
    pass


class CrossPtTemporal(TwinError, ValueError):
    pass


class NonPositiveDt(TwinError, ValueError):
    pass


class NoSuchSpatialRelation(TwinError, ValueError):
    pass


class MissingPtAt(TwinError, LookupError):
    def __init__(self, tick, pts):
        self.tick = tick
        self.pts = list(pts)
        super().__init__(f"no record at or before tick {tick} for pts {self.pts}")


class BadRange(TwinError, ValueError):
    pass


class InsufficientData(TwinError, ValueError):
    pass


# simulator
class BadTopologyArgs(TwinError, ValueError):
    pass


class OutOfRetention(TwinError, LookupError):
    pass


# agent / metrics
class ShapeMismatch(TwinError, ValueError):
    pass


class InsufficientExperience(TwinError, ValueError):
    pass


class EmptyBatch(TwinError, ValueError):
    pass


class MissingLog(TwinError, ValueError):
    pass


# cli
class ConfigError(TwinError, ValueError):
    pass


class UnknownKey(ConfigError):
    pass


class ConfigTypeError(ConfigError, TypeError):
    pass


class MissingFile(ConfigError, FileNotFoundError):
    pass
