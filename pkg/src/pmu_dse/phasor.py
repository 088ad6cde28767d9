"""Complex phasor arithmetic, symmetrical components and dq decomposition."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

# Fortescue rotation operator e^{j2pi/3}
ALPHA = cmath.exp(2j * math.pi / 3)


def wrap_angle(angle):
    """Map an angle (scalar or array) into (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + math.pi, 2 * math.pi) - math.pi
    wrapped = np.where(wrapped == -math.pi, math.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Phasor:
    """Per-unit phasor stored in rectangular form."""

    re: float
    im: float

    @classmethod
    def from_polar(cls, magnitude: float, angle: float) -> "Phasor":
        if magnitude < 0:
            raise ValueError(f"phasor magnitude must be >= 0, got {magnitude}")
        z = cmath.rect(magnitude, angle)
        return cls(z.real, z.imag)

    @classmethod
    def from_complex(cls, z: complex) -> "Phasor":
        return cls(z.real, z.imag)

    @property
    def magnitude(self) -> float:
        return math.hypot(self.re, self.im)

    @property
    def angle(self) -> float:
        return wrap_angle(math.atan2(self.im, self.re))

    def __complex__(self) -> complex:
        return complex(self.re, self.im)

    def __add__(self, other: "Phasor") -> "Phasor":
        return Phasor.from_complex(complex(self) + complex(other))

    def __sub__(self, other: "Phasor") -> "Phasor":
        return Phasor.from_complex(complex(self) - complex(other))

    def __mul__(self, k) -> "Phasor":
        return Phasor.from_complex(complex(self) * complex(k))

    __rmul__ = __mul__

    def __neg__(self) -> "Phasor":
        return Phasor(-self.re, -self.im)

    def conjugate(self) -> "Phasor":
        return Phasor(self.re, -self.im)


@dataclass(frozen=True)
class ThreePhasePhasors:
    a: Phasor
    b: Phasor
    c: Phasor


def fortescue_matrix() -> np.ndarray:
    """Matrix mapping (zero, positive, negative) sequence to phases (a, b, c)."""
    a = ALPHA
    return np.array([[1, 1, 1], [1, a * a, a], [1, a, a * a]], dtype=complex)


def sequence_components(v: ThreePhasePhasors) -> tuple[complex, complex, complex]:
    """Return (zero, positive, negative) sequence components of a phase set."""
    a, b, c = complex(v.a), complex(v.b), complex(v.c)
    zero = (a + b + c) / 3
    pos = (a + ALPHA * b + ALPHA * ALPHA * c) / 3
    neg = (a + ALPHA * ALPHA * b + ALPHA * c) / 3
    return zero, pos, neg


def positive_sequence(v: ThreePhasePhasors) -> Phasor:
    return Phasor.from_complex(sequence_components(v)[1])


def positive_sequence_array(a, b, c):
    """Vectorised positive-sequence extraction for complex arrays."""
    return (np.asarray(a) + ALPHA * np.asarray(b) + ALPHA * ALPHA * np.asarray(c)) / 3


def imbalance_ratio(v: ThreePhasePhasors) -> float:
    """max(|zero|, |negative|) / |positive|; diagnostic only, never enforced."""
    zero, pos, neg = sequence_components(v)
    if abs(pos) == 0:
        return math.inf
    return max(abs(zero), abs(neg)) / abs(pos)


def dq_decompose(mag, angle, x1):
    """Split a phasor ``mag*e^{j*angle}`` into rotor-frame (d, q) parts.

    Convention: ``mag*e^{j*angle} = (d + jq)*e^{j(x1 - pi/2)}``, i.e.
    ``d = mag*sin(x1 - angle)`` and ``q = mag*cos(x1 - angle)``. Works on
    scalars and numpy arrays alike.
    """
    diff = np.subtract(x1, angle)
    return np.multiply(mag, np.sin(diff)), np.multiply(mag, np.cos(diff))


def dq_compose(d, q, x1):
    """Inverse of :func:`dq_decompose`, returning complex phasor(s)."""
    return (np.asarray(d) + 1j * np.asarray(q)) * np.exp(1j * (np.asarray(x1) - math.pi / 2))
