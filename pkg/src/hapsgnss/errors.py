"""Exception hierarchy shared by all modules."""


class GnssError(Exception):
    """Base class for every error raised by hapsgnss."""


# frames
class NearSingular(GnssError):
    pass


class DegenerateGeometry(GnssError):
    pass


class InvalidPropagationTime(GnssError):
    pass


# orbits
class KeplerNonConvergence(GnssError):
    pass


class StaleEphemeris(GnssError):
    pass


class BelowMask(GnssError):
    pass


# atmosphere
class ElevationTooLow(GnssError):
    pass


# scenario
class NoSatelliteReference(UserWarning):
    """HAPS C/N0 requested without any satellite reference values."""


class ConfigError(GnssError):
    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


# solver / raim
class SingularGeometry(GnssError):
    pass


class Unavailable(GnssError):
    pass


class Diverged(GnssError):
    pass


class InvalidCovariance(GnssError):
    pass


# rinex
class MalformedHeader(GnssError):
    pass


class MalformedRecord(GnssError):
    def __init__(self, line, message=""):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class MalformedEpoch(MalformedRecord):
    pass


class NoEphemeris(GnssError):
    def __init__(self, prn):
        self.prn = prn
        super().__init__(f"no ephemeris within 4 h for PRN {prn}")


class SchemaError(GnssError):
    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class TimestampMisaligned(GnssError):
    pass


# harness
class EmptyInput(GnssError):
    pass
