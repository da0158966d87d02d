"""Enums for simulator choices."""

from strenum import StrEnum


class MobilityType(StrEnum):
    """How a user moves through the area."""

    CAR_PASSENGER = "car"
    BUS_PASSENGER = "bus"
    PEDESTRIAN = "pedestrian"


class ApplicationName(StrEnum):
    """Offloaded application kinds."""

    VIDEO = "video"
    AR = "ar"
    VR = "vr"


class MechanismKind(StrEnum):
    """Location obfuscation variants."""

    PLANAR_LAPLACE = "planar_laplace"
    UNIFORM_DISK = "uniform_disk"


class TraceFormat(StrEnum):
    """Supported mobility trace inputs."""

    POSITIONS_CSV = "positions-csv"
    FCD_XML = "fcd-xml"


class MobilitySource(StrEnum):
    """Where user positions come from."""

    SYNTHETIC = "synthetic"
    POSITIONS_CSV = "positions-csv"
    FCD_XML = "fcd-xml"


class DenialReason(StrEnum):
    """Why an offload request was refused."""

    LATENCY_EXCEEDED = "latency"
    THROUGHPUT_INSUFFICIENT = "throughput"
    MH_CAPACITY_EXHAUSTED = "capacity"


class RequestClass(StrEnum):
    """Outcome class of a request across all privacy levels."""

    ALWAYS_OFFLOADED = "always_offloaded"
    PRIVACY_DEPENDENT = "privacy_dependent"
    NEVER_OFFLOADED = "never_offloaded"


class DenialCategory(StrEnum):
    """Denial buckets of the per-level breakdown."""

    LATENCY_ONLY = "latency_only"
    THROUGHPUT_ONLY = "throughput_only"
    BOTH = "both"
    CAPACITY_ONLY = "capacity_only"
