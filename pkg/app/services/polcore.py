"""
Polarization math: Jones vectors, two-photon states, 2x2 unitaries, retarders
and Stokes conversion.

Conventions:
    - Jones basis is (H, V); photon A is the first tensor factor.
    - Two-photon amplitudes are ordered (HH, HV, VH, VV).
    - Retarder matrix: R(theta) @ diag(1, exp(i*delta)) @ R(-theta).
    - Equality between states or unitaries is always up to a global phase.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import unitary_group

from app.exceptions import ContractViolationError

NORM_TOLERANCE = 1e-12

SQRT1_2 = 1.0 / np.sqrt(2.0)

# Pauli matrices, (H, V) basis
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY = np.eye(2, dtype=complex)

# Maps D -> H and A -> V; its own inverse
HADAMARD = SQRT1_2 * np.array([[1, 1], [1, -1]], dtype=complex)


def _frozen(values, shape) -> np.ndarray:
    array = np.array(values, dtype=complex).reshape(shape)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class JonesVector:
    """Single-photon polarization state (a_H, a_V)."""

    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", _frozen(self.amplitudes, (2,)))

    @property
    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def is_normalized(self, tol: float = NORM_TOLERANCE) -> bool:
        return abs(self.norm_squared - 1.0) <= tol

    def overlap(self, other: "JonesVector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


H = JonesVector([1.0, 0.0])
V = JonesVector([0.0, 1.0])
D = JonesVector([SQRT1_2, SQRT1_2])
A = JonesVector([SQRT1_2, -SQRT1_2])


@dataclass(frozen=True, eq=False)
class Unitary2:
    """2x2 polarization transform (fiber rotation, compensator, retarder plate)."""

    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(self.matrix, (2, 2)))

    def __matmul__(self, other):
        if isinstance(other, Unitary2):
            return Unitary2(self.matrix @ other.matrix)
        if isinstance(other, JonesVector):
            return JonesVector(self.matrix @ other.amplitudes)
        return NotImplemented

    @property
    def dagger(self) -> "Unitary2":
        return Unitary2(self.matrix.conj().T)

    @property
    def det(self) -> complex:
        return complex(np.linalg.det(self.matrix))

    def is_unitary(self, tol: float = NORM_TOLERANCE) -> bool:
        deviation = self.matrix @ self.matrix.conj().T - IDENTITY
        return bool(np.max(np.abs(deviation)) <= tol) and abs(abs(self.det) - 1.0) <= tol

    def fidelity(self, other: "Unitary2") -> float:
        """Phase-insensitive trace fidelity |tr(U^dagger V)| / 2, in [0, 1]."""
        return float(abs(np.trace(self.matrix.conj().T @ other.matrix)) / 2.0)


IDENTITY_U = Unitary2(IDENTITY)


@dataclass(frozen=True, eq=False)
class TwoPhotonState:
    """Pure two-photon polarization state, amplitudes (HH, HV, VH, VV)."""

    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", _frozen(self.amplitudes, (4,)))

    @property
    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def is_normalized(self, tol: float = NORM_TOLERANCE) -> bool:
        return abs(self.norm_squared - 1.0) <= tol

    def overlap(self, other: "TwoPhotonState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))


class StokesVector(NamedTuple):
    s0: float
    s1: float
    s2: float
    s3: float

    @property
    def degree_of_polarization(self) -> float:
        return float(np.sqrt(self.s1**2 + self.s2**2 + self.s3**2) / self.s0)


def singlet() -> TwoPhotonState:
    """|psi-> = (|HV> - |VH>) / sqrt(2)."""
    return TwoPhotonState([0.0, SQRT1_2, -SQRT1_2, 0.0])


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def waveplate(delta: float, theta: float) -> Unitary2:
    """
    Jones matrix of a linear retarder.

    Args:
        delta: retardance in radians
        theta: fast-axis angle from horizontal in radians

    Returns:
        R(theta) @ diag(1, e^{i delta}) @ R(-theta)
    """
    rotation = rotation_matrix(theta)
    retarder = np.diag([1.0, np.exp(1j * delta)])
    return Unitary2(rotation @ retarder @ rotation.T)


def axis_rotation(angle: float, axis) -> Unitary2:
    """
    exp(-i (angle/2) n.sigma): rotation of the Poincare sphere by `angle`
    about the unit Stokes axis `axis` = (n1, n2, n3).

    With the (H, V) basis, n1 is the H/V axis (sigma_z), n2 the D/A axis
    (sigma_x) and n3 the circular axis (sigma_y).
    """
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    generator = n[0] * SIGMA_Z + n[1] * SIGMA_X + n[2] * SIGMA_Y
    return Unitary2(np.cos(angle / 2) * IDENTITY - 1j * np.sin(angle / 2) * generator)


def rotation_angle(u: Unitary2) -> float:
    """Poincare-sphere rotation angle of `u`, in [0, pi]."""
    normalized = u.matrix / np.sqrt(np.linalg.det(u.matrix))
    half_trace = min(abs(np.trace(normalized)) / 2.0, 1.0)
    return float(2.0 * np.arccos(half_trace))


def apply_local(u_a: Unitary2, u_b: Unitary2, state: TwoPhotonState) -> TwoPhotonState:
    """(U_A tensor U_B) |s>."""
    return TwoPhotonState(np.kron(u_a.matrix, u_b.matrix) @ state.amplitudes)


def jones_to_stokes(v: JonesVector) -> StokesVector:
    if not v.is_normalized():
        raise ContractViolationError(
            f"Jones vector must be normalized, got norm^2={v.norm_squared:.15g}"
        )
    a_h, a_v = v.amplitudes
    cross = np.conj(a_h) * a_v
    return StokesVector(
        s0=1.0,
        s1=float(abs(a_h) ** 2 - abs(a_v) ** 2),
        s2=float(2.0 * cross.real),
        s3=float(2.0 * cross.imag),
    )


def random_unitary(rng: np.random.Generator) -> Unitary2:
    """Haar-distributed element of U(2)."""
    return Unitary2(unitary_group.rvs(2, random_state=rng))


def random_axis(rng: np.random.Generator) -> np.ndarray:
    """Uniform direction on the unit sphere."""
    direction = rng.normal(size=3)
    return direction / np.linalg.norm(direction)
