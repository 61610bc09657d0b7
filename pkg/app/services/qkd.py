"""
BBM92 measurement model: exact polarization QBER of a two-photon state, the
intrinsic error floor, and finite-block sampling of the estimated QBER.

Singlet convention: outcomes in a shared basis are anticorrelated when the
link is compensated, so an error is a coincidence with equal outcomes.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from app.exceptions import ContractViolationError
from app.services.polcore import HADAMARD, TwoPhotonState

STATE_NORM_TOLERANCE = 1e-10

# Both photons rotated from the D/A basis into H/V
_DA_TO_HV = np.kron(HADAMARD, HADAMARD)


@dataclass(frozen=True)
class DetectionConfig:
    coincidence_rate: float = 670.0
    sift_ratio: float = 0.5
    accumulation_time: float = 2.0
    intrinsic_error: float = 0.04

    def __post_init__(self):
        if not 0 <= self.intrinsic_error < 0.5:
            raise ContractViolationError(
                f"intrinsic_error must be in [0, 0.5), got {self.intrinsic_error}"
            )
        if not 0 < self.sift_ratio <= 1:
            raise ContractViolationError(
                f"sift_ratio must be in (0, 1], got {self.sift_ratio}"
            )
        if self.accumulation_time <= 0:
            raise ContractViolationError(
                f"accumulation_time must be positive, got {self.accumulation_time}"
            )
        if self.coincidence_rate < 0:
            raise ContractViolationError(
                f"coincidence_rate must be >= 0, got {self.coincidence_rate}"
            )

    @property
    def sifted_rate(self) -> float:
        return self.coincidence_rate * self.sift_ratio

    @property
    def expected_block_size(self) -> float:
        """Mean number of sifted bits per accumulation block."""
        return self.sifted_rate * self.accumulation_time


@dataclass(frozen=True)
class QberEstimate:
    """QBER measured on one block of sifted bits."""

    value: float
    uncertainty: float
    sample_size: int

    @classmethod
    def from_counts(cls, errors: int, sample_size: int) -> "QberEstimate":
        if sample_size <= 0:
            return cls.empty()
        value = errors / sample_size
        return cls(
            value=value,
            uncertainty=math.sqrt(value * (1.0 - value) / sample_size),
            sample_size=sample_size,
        )

    @classmethod
    def empty(cls) -> "QberEstimate":
        """No sifted bits in the block: an uninformative, flagged estimate."""
        return cls(value=0.5, uncertainty=0.5, sample_size=0)

    @property
    def is_empty(self) -> bool:
        return self.sample_size == 0


def _check_normalized(state: TwoPhotonState) -> None:
    if not state.is_normalized(STATE_NORM_TOLERANCE):
        raise ContractViolationError(
            f"two-photon state must be normalized, got norm^2={state.norm_squared:.15g}"
        )


def basis_error_rates(state: TwoPhotonState) -> Tuple[float, float]:
    """Probability of equal outcomes in the H/V basis and in the D/A basis."""
    _check_normalized(state)
    hv = state.amplitudes
    da = _DA_TO_HV @ hv
    e_hv = abs(hv[0]) ** 2 + abs(hv[3]) ** 2
    e_da = abs(da[0]) ** 2 + abs(da[3]) ** 2
    return float(e_hv), float(e_da)


def polarization_qber(state: TwoPhotonState) -> float:
    """Equal-weight mean of the two per-basis error probabilities."""
    e_hv, e_da = basis_error_rates(state)
    return (e_hv + e_da) / 2.0


def true_qber(q_pol: float, cfg: DetectionConfig) -> float:
    """Mix the polarization QBER with the symmetric intrinsic error floor."""
    if not 0.0 <= q_pol <= 1.0 + 1e-12:
        raise ContractViolationError(f"q_pol must be in [0, 1], got {q_pol}")
    e0 = cfg.intrinsic_error
    return e0 + (1.0 - 2.0 * e0) * min(q_pol, 1.0)


def sample_qber_estimate(
    q_true: float, cfg: DetectionConfig, rng: np.random.Generator
) -> QberEstimate:
    """
    Draw one accumulation block: N ~ Poisson(sifted rate * T),
    errors ~ Binomial(N, q_true).
    """
    if not 0.0 <= q_true <= 1.0 + 1e-12:
        raise ContractViolationError(f"q_true must be in [0, 1], got {q_true}")
    sample_size = int(rng.poisson(cfg.expected_block_size))
    if sample_size == 0:
        return QberEstimate.empty()
    errors = int(rng.binomial(sample_size, min(q_true, 1.0)))
    return QberEstimate.from_counts(errors, sample_size)
