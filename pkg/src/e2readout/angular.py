"""Angular-momentum algebra: Wigner 3j/6j symbols, Clebsch-Gordan coefficients
and the spherical basis.

Quantum numbers may be passed as ``HalfInt`` instances or as plain numbers
(int, float, Fraction) that are exact multiples of 1/2. Internally every
quantity is carried as twice its value so triangle and parity tests are exact
integer arithmetic. Symbols are evaluated with the Racah closed-form sums
using exact rational intermediates, so large arguments (2j up to ~100) do not
overflow.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import factorial, sqrt
from typing import Union

import numpy as np

__all__ = [
    "HalfInt",
    "SphericalVector",
    "wigner3j",
    "wigner6j",
    "clebsch_gordan",
    "to_spherical",
    "from_spherical",
    "spherical_basis",
]


@dataclass(frozen=True, order=True)
class HalfInt:
    """An exact half-integer, stored as twice its value."""

    twice_value: int

    @classmethod
    def of(cls, value: "HalfLike") -> "HalfInt":
        return cls(_twice(value))

    @property
    def value(self) -> float:
        return self.twice_value / 2

    def __float__(self) -> float:
        return self.twice_value / 2

    def __repr__(self) -> str:
        if self.twice_value % 2 == 0:
            return f"HalfInt({self.twice_value // 2})"
        return f"HalfInt({self.twice_value}/2)"


HalfLike = Union[HalfInt, int, float, Fraction]


def _twice(x: HalfLike) -> int:
    if isinstance(x, HalfInt):
        return x.twice_value
    if isinstance(x, (int, np.integer)):
        return 2 * int(x)
    d = 2 * x
    n = int(round(float(d)))
    if abs(float(d) - n) > 1e-9:
        raise ValueError(f"{x!r} is not a multiple of 1/2")
    return n


def _triangle(a: int, b: int, c: int) -> bool:
    """Triangle and integer-perimeter rule on doubled arguments."""
    return (
        a >= 0 and b >= 0 and c >= 0
        and c <= a + b and a <= b + c and b <= a + c
        and (a + b + c) % 2 == 0
    )


def _delta_sq(a: int, b: int, c: int) -> Fraction:
    # doubled arguments; all combinations are even when the triangle holds
    return Fraction(
        factorial((a + b - c) // 2) * factorial((a - b + c) // 2) * factorial((-a + b + c) // 2),
        factorial((a + b + c) // 2 + 1),
    )


def _signed_sqrt(prefactor_sq: Fraction, total: Fraction) -> float:
    if total == 0:
        return 0.0
    mag = sqrt(float(prefactor_sq * total * total))
    return mag if total > 0 else -mag


@lru_cache(maxsize=200_000)
def _wigner3j_twice(j1: int, j2: int, j3: int, m1: int, m2: int, m3: int) -> float:
    if m1 + m2 + m3 != 0:
        return 0.0
    if not _triangle(j1, j2, j3):
        return 0.0
    for j, m in ((j1, m1), (j2, m2), (j3, m3)):
        if abs(m) > j or (j - m) % 2:
            return 0.0

    pre = _delta_sq(j1, j2, j3) * (
        factorial((j1 + m1) // 2) * factorial((j1 - m1) // 2)
        * factorial((j2 + m2) // 2) * factorial((j2 - m2) // 2)
        * factorial((j3 + m3) // 2) * factorial((j3 - m3) // 2)
    )
    # summation bounds, undoubled
    a1 = (j3 - j2 + m1) // 2
    a2 = (j3 - j1 - m2) // 2
    b1 = (j1 + j2 - j3) // 2
    b2 = (j1 - m1) // 2
    b3 = (j2 + m2) // 2
    kmin = max(0, -a1, -a2)
    kmax = min(b1, b2, b3)
    total = Fraction(0)
    for k in range(kmin, kmax + 1):
        den = (
            factorial(k) * factorial(a1 + k) * factorial(a2 + k)
            * factorial(b1 - k) * factorial(b2 - k) * factorial(b3 - k)
        )
        total += Fraction(-1 if k % 2 else 1, den)
    phase_exp = (j1 - j2 - m3) // 2
    if phase_exp % 2:
        total = -total
    return _signed_sqrt(pre, total)


def wigner3j(j1: HalfLike, j2: HalfLike, j3: HalfLike,
             m1: HalfLike, m2: HalfLike, m3: HalfLike) -> float:
    """Wigner 3j symbol ``(j1 j2 j3; m1 m2 m3)``; zero when selection rules fail."""
    return _wigner3j_twice(_twice(j1), _twice(j2), _twice(j3),
                           _twice(m1), _twice(m2), _twice(m3))


@lru_cache(maxsize=200_000)
def _wigner6j_twice(j1: int, j2: int, j3: int, j4: int, j5: int, j6: int) -> float:
    triads = ((j1, j2, j3), (j1, j5, j6), (j4, j2, j6), (j4, j5, j3))
    if not all(_triangle(*t) for t in triads):
        return 0.0
    pre = Fraction(1)
    for t in triads:
        pre *= _delta_sq(*t)
    a = [sum(t) // 2 for t in triads]
    b = [(j1 + j2 + j4 + j5) // 2, (j2 + j3 + j5 + j6) // 2, (j3 + j1 + j6 + j4) // 2]
    total = Fraction(0)
    for t in range(max(a), min(b) + 1):
        den = 1
        for ai in a:
            den *= factorial(t - ai)
        for bi in b:
            den *= factorial(bi - t)
        total += Fraction((-1 if t % 2 else 1) * factorial(t + 1), den)
    return _signed_sqrt(pre, total)


def wigner6j(j1: HalfLike, j2: HalfLike, j3: HalfLike,
             j4: HalfLike, j5: HalfLike, j6: HalfLike) -> float:
    """Wigner 6j symbol ``{j1 j2 j3; j4 j5 j6}``; zero when a triad is violated."""
    return _wigner6j_twice(_twice(j1), _twice(j2), _twice(j3),
                           _twice(j4), _twice(j5), _twice(j6))


def clebsch_gordan(j1: HalfLike, m1: HalfLike, j2: HalfLike, m2: HalfLike,
                   J: HalfLike, M: HalfLike) -> float:
    """Condon-Shortley coefficient ``<j1 m1; j2 m2 | J M>``."""
    tj1, tj2, tJ = _twice(j1), _twice(j2), _twice(J)
    tm1, tm2, tM = _twice(m1), _twice(m2), _twice(M)
    if tm1 + tm2 != tM:
        return 0.0
    w = _wigner3j_twice(tj1, tj2, tJ, tm1, tm2, -tM)
    if w == 0.0:
        return 0.0
    phase_exp = (tj1 - tj2 + tM) // 2
    sign = -1.0 if phase_exp % 2 else 1.0
    return sign * sqrt(tJ + 1) * w


# -- spherical basis ---------------------------------------------------------

_SQ2 = sqrt(2.0)
# rows are e_{-1}, e_0, e_{+1}; e_{+-1} = -+(x +- iy)/sqrt2 (Condon-Shortley)
_BASIS = np.array(
    [
        [1 / _SQ2, -1j / _SQ2, 0.0],
        [0.0, 0.0, 1.0],
        [-1 / _SQ2, -1j / _SQ2, 0.0],
    ],
    dtype=complex,
)


def spherical_basis() -> np.ndarray:
    """Unit vectors ``(e_-1, e_0, e_+1)`` as rows of a 3x3 complex array."""
    return _BASIS.copy()


@dataclass(frozen=True)
class SphericalVector:
    """Components of a vector in the expansion ``v = sum_q v_q e_q``."""

    q_minus1: complex
    q_0: complex
    q_plus1: complex

    def __getitem__(self, q: int) -> complex:
        return (self.q_minus1, self.q_0, self.q_plus1)[q + 1]

    def as_array(self) -> np.ndarray:
        return np.array([self.q_minus1, self.q_0, self.q_plus1], dtype=complex)

    def norm2(self) -> float:
        return float(np.sum(np.abs(self.as_array()) ** 2))


def to_spherical(v) -> SphericalVector:
    """Spherical components ``v_q = e_q* . v`` of a Cartesian (complex) 3-vector."""
    v = np.asarray(v, dtype=complex).reshape(3)
    comps = _BASIS.conj() @ v
    return SphericalVector(complex(comps[0]), complex(comps[1]), complex(comps[2]))


def from_spherical(s: SphericalVector) -> np.ndarray:
    """Inverse of :func:`to_spherical`."""
    return s.as_array() @ _BASIS
