"""Single-step scattering of one fresh photon against m loop photons.

A photon in mode ``a`` meets ``m`` photons in the loop mode ``b`` on a
2x2 beam splitter::

    a -> u11 c + u12 d
    b -> u21 c + u22 d

Mode ``c`` goes to the detector and mode ``d`` is fed back into the loop.
The amplitude ``A[x, m]`` is the weight of ``|x>_c |m+1-x>_d`` in the
output state.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

#: Outcomes with ``|A|^2`` below this are treated as impossible.
ZERO_PROB = 1e-12

UNITARITY_TOL = 1e-10

# Above this photon number the factorial prefactor goes through lgamma.
_LOG_FACTORIAL_ABOVE = 30


class NonUnitaryError(ValueError):
    """Raised when a matrix fails the unitarity check."""

    def __init__(self, residual: float):
        super().__init__(f"matrix is not unitary: max |UU^dag - I| = {residual:.3e}")
        self.residual = residual


class Detector(str, enum.Enum):
    PNRD = "pnrd"
    THRESHOLD = "threshold"

    @classmethod
    def parse(cls, value: "str | Detector") -> "Detector":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown detector {value!r}; expected 'pnrd' or 'threshold'") from None

    def alphabet_size(self, m: int) -> int:
        """Number of distinct observations for a loop holding ``m`` photons."""
        return m + 2 if self is Detector.PNRD else 2


@dataclass(frozen=True)
class ScatteringMatrix:
    u11: complex
    u12: complex
    u21: complex
    u22: complex
    label: str = "explicit"

    def __post_init__(self):
        residual = unitarity_residual(self.as_array())
        if residual > UNITARITY_TOL:
            raise NonUnitaryError(residual)

    def as_array(self) -> np.ndarray:
        return np.array([[self.u11, self.u12], [self.u21, self.u22]], dtype=complex)

    @classmethod
    def from_array(cls, u, label: str = "explicit") -> "ScatteringMatrix":
        u = np.asarray(u, dtype=complex)
        if u.shape != (2, 2):
            raise ValueError(f"expected a 2x2 matrix, got shape {u.shape}")
        return cls(complex(u[0, 0]), complex(u[0, 1]), complex(u[1, 0]), complex(u[1, 1]), label)

    def spec_string(self) -> str:
        """Round-trippable string accepted by :func:`make_unitary`."""
        if self.label == "5050":
            return "5050"
        parts = []
        for z in (self.u11, self.u12, self.u21, self.u22):
            parts += [repr(float(z.real)), repr(float(z.imag))]
        return "explicit:" + ",".join(parts)

    @property
    def hom_suppressed(self) -> bool:
        """True when two-photon coincidence in ``c`` vanishes."""
        return abs(self.u11 * self.u22 + self.u12 * self.u21) ** 2 < ZERO_PROB


def unitarity_residual(u: np.ndarray) -> float:
    u = np.asarray(u, dtype=complex)
    return float(np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0]))))


def make_unitary(spec) -> ScatteringMatrix:
    """Build a validated scattering matrix.

    ``spec`` may be a preset name (``"5050"``, ``"identity"``), a string
    ``"explicit:re11,im11,re12,im12,re21,im21,re22,im22"``, a 2x2 array,
    or four complex entries ``(u11, u12, u21, u22)``.
    """
    if isinstance(spec, ScatteringMatrix):
        return spec
    if isinstance(spec, str):
        key = spec.strip()
        if key == "5050":
            s = 1 / math.sqrt(2)
            return ScatteringMatrix(s, 1j * s, 1j * s, s, label="5050")
        if key == "identity":
            return ScatteringMatrix(1, 0, 0, 1, label="identity")
        if key.startswith("explicit:"):
            fields = key[len("explicit:"):].split(",")
            if len(fields) != 8:
                raise ValueError(f"explicit unitary needs 8 numbers, got {len(fields)}")
            try:
                vals = [float(f) for f in fields]
            except ValueError:
                raise ValueError(f"could not parse unitary entries in {spec!r}") from None
            entries = [complex(vals[i], vals[i + 1]) for i in range(0, 8, 2)]
            return ScatteringMatrix(*entries)
        raise ValueError(f"unknown unitary spec {spec!r}")
    arr = np.asarray(spec, dtype=complex)
    if arr.shape == (4,):
        arr = arr.reshape(2, 2)
    return ScatteringMatrix.from_array(arr)


def _interior_prefactor(x: int, m: int) -> float:
    # sqrt(m! x (m+1-x) / ((x-1)! (m-x)!))
    if m <= _LOG_FACTORIAL_ABOVE:
        return math.sqrt(math.comb(m, x - 1) * (m - x + 1) * x * (m + 1 - x))
    log_val = (
        math.lgamma(m + 1) + math.log(x) + math.log(m + 1 - x)
        - math.lgamma(x) - math.lgamma(m - x + 1)
    )
    return math.exp(0.5 * log_val)


def amplitude(x: int, m: int, U: ScatteringMatrix) -> complex:
    """Amplitude ``A[x, m]`` for detecting ``x`` photons given ``m`` in the loop."""
    if m < 0 or not 0 <= x <= m + 1:
        raise ValueError(f"outcome x={x} out of range 0..{m + 1} for m={m}")
    u11, u12, u21, u22 = U.u11, U.u12, U.u21, U.u22
    if x == 0:
        return math.sqrt(m + 1) * u12 * u22**m
    if x == m + 1:
        return math.sqrt(m + 1) * u11 * u21**m
    pre = _interior_prefactor(x, m)
    return pre * u21 ** (x - 1) * u22 ** (m - x) * (u21 * u12 / x + u22 * u11 / (m - x + 1))


def amplitude_oracle(x: int, m: int, U: ScatteringMatrix) -> complex:
    """Brute-force ``A[x, m]`` by expanding the creation-operator polynomial.

    Multiplies ``(u21 c + u22 d)`` into a coefficient list ``m`` times, then
    applies ``(u11 c + u12 d)``, reads off the ``c^x d^(m+1-x)`` term and
    applies Fock normalisation. Independent of :func:`amplitude`.
    """
    if m < 0 or not 0 <= x <= m + 1:
        raise ValueError(f"outcome x={x} out of range 0..{m + 1} for m={m}")
    # coeffs[j] multiplies c^j d^(deg - j)
    coeffs = [complex(1)]
    for _ in range(m):
        nxt = [0j] * (len(coeffs) + 1)
        for j, c in enumerate(coeffs):
            nxt[j + 1] += c * U.u21
            nxt[j] += c * U.u22
        coeffs = nxt
    out = [0j] * (len(coeffs) + 1)
    for j, c in enumerate(coeffs):
        out[j + 1] += c * U.u11
        out[j] += c * U.u12
    norm = math.sqrt(math.factorial(x) * math.factorial(m + 1 - x) / math.factorial(m))
    return out[x] * norm


def amplitude_table(U: ScatteringMatrix, m_max: int) -> np.ndarray:
    """Array ``A[x, m]`` of shape ``(m_max + 2, m_max + 1)``, zero where ``x > m + 1``."""
    table = np.zeros((m_max + 2, m_max + 1), dtype=complex)
    for m in range(m_max + 1):
        for x in range(m + 2):
            table[x, m] = amplitude(x, m, U)
    return table


def emission_table(U: ScatteringMatrix, m_max: int) -> np.ndarray:
    """PNRD outcome probabilities ``P[x, m] = |A[x, m]|^2`` with sub-threshold entries zeroed."""
    probs = np.abs(amplitude_table(U, m_max)) ** 2
    probs[probs < ZERO_PROB] = 0.0
    return probs


def output_distribution(m: int, U: ScatteringMatrix, detector="pnrd") -> np.ndarray:
    """Distribution of the detector outcome for ``m`` photons in the loop.

    PNRD gives a vector of length ``m + 2`` indexed by photon count; a
    threshold detector gives ``(P(no click), P(click))``.
    """
    detector = Detector.parse(detector)
    probs = np.array([abs(amplitude(x, m, U)) ** 2 for x in range(m + 2)])
    if detector is Detector.PNRD:
        return probs
    return np.array([probs[0], 1.0 - probs[0]])
