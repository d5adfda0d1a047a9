"""Exception hierarchy for ldp_lab."""


class LdpLabError(Exception):
    pass


# ============================
# INPUT VALIDATION
# ============================

class InvalidParameters(LdpLabError, ValueError):
    pass


class InvalidPath(InvalidParameters):
    pass


class InvalidPartition(InvalidParameters):
    pass


class UnknownFamily(InvalidParameters):
    pass


class ConfigInvalid(InvalidParameters):
    pass


class ManifestMissing(LdpLabError, FileNotFoundError):
    pass


# ============================
# NUMERICAL FAILURES
# ============================

class NumericalError(LdpLabError):
    """Failures the runner reports with exit status 3."""


class EmptyDomain(NumericalError):
    pass


class NonConvexInput(NumericalError):
    pass


class ProbeOutsideDomain(NumericalError):
    pass


class DegenerateInterval(NumericalError):
    pass


class OverflowRisk(NumericalError):
    pass


class GridTooCoarse(NumericalError):
    pass


class TargetOutsideDomain(NumericalError):
    pass


class ZeroHits(NumericalError):
    pass


class SlopeOutsideDomain(NumericalError):
    pass


class ScanExhausted(NumericalError):
    pass
