"""Geo-indistinguishable location obfuscation."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import lambertw

from edge_offload_sim.enums import MechanismKind
from edge_offload_sim.exceptions import ConfigError
from edge_offload_sim.topology import Area

INF = math.inf

_LEVEL_NAMES = {INF: "none", 0.1: "medium", 0.01: "high"}


def parse_epsilon(text: str | float) -> float:
    """Parse an epsilon given as a number or as inf / none / ∞."""
    if isinstance(text, int | float):
        value = float(text)
    else:
        cleaned = text.strip().lower()
        if cleaned in ("inf", "infinity", "none", "∞"):
            return INF
        try:
            value = float(cleaned)
        except ValueError as e:
            raise ConfigError(f"Invalid epsilon: {text!r}") from e
    if not value > 0:
        raise ConfigError(f"Epsilon must be positive or inf, got {value}")
    return value


def epsilon_label(epsilon: float) -> str:
    """Shortest text that parses back to the same epsilon; used in file names and CSV columns."""
    return "inf" if math.isinf(epsilon) else repr(float(epsilon))


@dataclass(frozen=True)
class PrivacyLevel:
    """A privacy level, identified by its epsilon (per meter)."""

    epsilon: float

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError(f"Epsilon must be positive or inf, got {self.epsilon}")

    @property
    def name(self) -> str:
        return _LEVEL_NAMES.get(self.epsilon, "custom")

    @property
    def label(self) -> str:
        return epsilon_label(self.epsilon)

    @property
    def is_private(self) -> bool:
        return not math.isinf(self.epsilon)


NONE = PrivacyLevel(INF)
MEDIUM = PrivacyLevel(0.1)
HIGH = PrivacyLevel(0.01)


def planar_laplace_radius(p: np.ndarray, epsilon: float) -> np.ndarray:
    """
    Invert the planar Laplace radial CDF C(r) = 1 - (1 + eps*r) * exp(-eps*r).

    Uses the -1 branch of the Lambert W function: r = -(W_-1((p - 1) / e) + 1) / eps.
    """
    w = lambertw((np.asarray(p, dtype=np.float64) - 1.0) / math.e, k=-1)
    return -(np.real(w) + 1.0) / epsilon


def radial_cdf(r: np.ndarray, epsilon: float) -> np.ndarray:
    """Planar Laplace radial CDF."""
    er = epsilon * np.asarray(r, dtype=np.float64)
    return 1.0 - (1.0 + er) * np.exp(-er)


@dataclass(frozen=True)
class PrivacyMechanism:
    """Epsilon-parameterized obfuscator.

    Attributes:
        variant: Planar Laplace or uniform disk
        epsilon: Privacy parameter per meter; inf disables obfuscation
        radius_factor: Uniform disk radius is radius_factor / epsilon
    """

    variant: MechanismKind
    epsilon: float
    radius_factor: float = 3.0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError(f"Epsilon must be positive or inf, got {self.epsilon}")
        if not self.radius_factor > 0:
            raise ConfigError(f"Uniform disk radius factor must be positive, got {self.radius_factor}")

    @property
    def is_identity(self) -> bool:
        return math.isinf(self.epsilon)

    @property
    def disk_radius(self) -> float:
        return 0.0 if self.is_identity else self.radius_factor / self.epsilon

    def displacements(self, uniforms: np.ndarray) -> np.ndarray:
        """
        Noise vectors from uniform draws.

        Args:
            uniforms: Array (n, 2); column 0 drives the angle, column 1 the radius

        Returns:
            np.ndarray: Displacements of shape (n, 2), before any clipping
        """
        uniforms = np.asarray(uniforms, dtype=np.float64)
        if self.is_identity:
            return np.zeros((uniforms.shape[0], 2))
        theta = 2.0 * math.pi * uniforms[:, 0]
        if self.variant == MechanismKind.PLANAR_LAPLACE:
            radius = planar_laplace_radius(uniforms[:, 1], self.epsilon)
        else:
            radius = self.disk_radius * np.sqrt(uniforms[:, 1])
        return np.column_stack((radius * np.cos(theta), radius * np.sin(theta)))


def obfuscate(
    locations: np.ndarray, mechanism: PrivacyMechanism, uniforms: np.ndarray, area: Area | None = None
) -> tuple[np.ndarray, int]:
    """
    Produce the fake locations reported to the MEC provider.

    Args:
        locations: True positions, shape (n, 2)
        mechanism: Obfuscation mechanism
        uniforms: Uniform draws, shape (n, 2), keyed per (seed, user, timestep)
        area: When given, fake locations are clipped to it

    Returns:
        tuple: (fake locations, number of clipped points)
    """
    locations = np.asarray(locations, dtype=np.float64)
    if mechanism.is_identity:
        return locations.copy(), 0
    fake = locations + mechanism.displacements(uniforms)
    if area is None:
        return fake, 0
    return area.clip(fake)


@dataclass(frozen=True)
class DisplacementStats:
    """Summary of obfuscation distances in meters."""

    mean: float
    p50: float
    p95: float


def displacement_stats(mechanism: PrivacyMechanism, n_samples: int, rng: np.random.Generator) -> DisplacementStats:
    """Mean, median and 95th percentile of the displacement, before clipping."""
    if n_samples < 1:
        raise ConfigError(f"n_samples must be at least 1, got {n_samples}")
    distances = np.hypot(*mechanism.displacements(rng.random((n_samples, 2))).T)
    p50, p95 = np.percentile(distances, [50, 95])
    return DisplacementStats(mean=float(distances.mean()), p50=float(p50), p95=float(p95))
