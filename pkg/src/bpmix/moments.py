"""Ordinary and canonical moments of probability distributions on [0, 1].

The canonical moment ``c_k`` places ``m_k`` inside the interval of values
attainable given ``m_1..m_{k-1}``::

    c_k = (m_k - m_k^-) / (m_k^+ - m_k^-)

so any point of the box ``[0, 1]^K`` corresponds to a point of the
(curved) moment space.  Conversions use the product recursion

    zeta_1 = c_1,  zeta_k = c_k (1 - c_{k-1}),
    S_{0,j} = 1,   S_{i,j} = S_{i,j-1} + zeta_{j-i+1} S_{i-1,j},   m_k = S_{k,k}.

Every entry of the table is linear in the newest ``zeta_j``, which gives the
moment range and the inverse map in a single ``O(K^2)`` sweep.

The routines only use ``+ - * /`` on the input elements, so they work
unchanged on ``fractions.Fraction`` or ``mpmath.mpf`` values.  That matters
for the inverse map: the width of the range of ``m_k`` is
``prod_{j<k} c_j (1 - c_j)``, which quickly falls far below the float64
resolution of ``m_k`` itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

__all__ = [
    "CanonicalMoments",
    "MomentRange",
    "MomentSpaceError",
    "canonical_to_ordinary",
    "ordinary_to_canonical",
    "moment_bounds",
    "scale_moments",
    "log_jacobian_canonical_to_ordinary",
    "is_in_moment_space",
    "clamp_canonical",
    "EPS",
]

# Sampler states are kept this far away from the boundary of [0, 1].
EPS = 1e-12


class MomentSpaceError(ValueError):
    """Moment vector outside the truncated moment space.

    ``index`` is the 1-based position of the first violated moment.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class CanonicalMoments:
    """Canonical moments ``c_1..c_K``.

    When ``terminated`` is set the last entry is 0 or 1: the distribution is
    determined by its first ``len(values)`` moments and later canonical
    moments are undefined.
    """

    values: np.ndarray
    terminated: bool = False

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


class MomentRange(NamedTuple):
    lower: float
    upper: float


def _elements(x) -> list:
    """Python-number list from an array-like, keeping exact element types."""
    if isinstance(x, CanonicalMoments):
        x = x.values
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d sequence, got shape {arr.shape}")
    if arr.dtype == object:
        return list(arr)
    return [float(v) for v in arr.astype(float)]


def _pack(values: list) -> np.ndarray:
    if all(type(v) is float for v in values):
        return np.array(values, dtype=float)
    out = np.empty(len(values), dtype=object)
    out[:] = values
    return out


def _next_column(S, zetas, j):
    """Coefficients of column ``j`` as ``A_i + B_i * zeta_j``, ``i = 0..j``.

    ``S`` holds column ``j - 1`` (``S[i] = S_{i,j-1}``, ``i < j``) and
    ``zetas[i]`` holds ``zeta_i`` for ``i < j``.
    """
    zero = S[0] - S[0]
    one = S[0]
    A = [one, S[1] if j > 1 else zero]
    B = [zero, one]
    for i in range(2, j + 1):
        z = zetas[j - i + 1]
        A.append((S[i] if i < j else zero) + z * A[i - 1])
        B.append(z * B[i - 1])
    return A, B


def canonical_to_ordinary(c) -> np.ndarray:
    """Map canonical moments ``c_1..c_K`` to ordinary moments ``m_1..m_K``.

    >>> canonical_to_ordinary([0.5, 0.5, 0.5, 0.5]).tolist()
    [0.5, 0.375, 0.3125, 0.2734375]
    """
    cs = _elements(c)
    for k, ck in enumerate(cs, start=1):
        if not 0 <= ck <= 1:
            raise ValueError(f"canonical moment c_{k} = {ck!r} is outside [0, 1]")
    return _pack(_forward(cs))


def _forward(cs: list) -> list:
    """Unchecked forward map on a list of numbers."""
    if not cs:
        return []
    one = cs[0] - cs[0] + 1
    zero = one - one
    S = [one]
    zetas = [None]
    c_prev = zero
    out = []
    for j, cj in enumerate(cs, start=1):
        zetas.append(cj * (one - c_prev))
        col = [one]
        for i in range(1, j):
            col.append(S[i] + zetas[j - i + 1] * col[i - 1])
        col.append(zetas[1] * col[j - 1])  # S_{j,j-1} = 0
        S = col
        out.append(col[j])
        c_prev = cj
    return out


def _invert(ms, tol):
    """Canonical moments of ``ms``; returns ``(c, terminated, next_range)``.

    ``next_range`` is the attainable range of the following moment, or
    ``None`` once the sequence has terminated.
    """
    if not ms:
        return [], False, (0.0, 1.0)
    one = ms[0] - ms[0] + 1
    zero = one - one
    S = [one]
    zetas = [None]
    c_prev = zero
    cs = []
    terminated = False
    for j, mj in enumerate(ms, start=1):
        A, B = _next_column(S, zetas, j)
        lower = A[j]
        width = B[j] * (one - c_prev)
        upper = lower + width
        # Membership is checked on m itself: c_k is badly conditioned once
        # the width falls below the rounding error of m_k.
        if mj - lower < -tol or mj - upper > tol:
            raise MomentSpaceError(
                f"m_{j} = {float(mj):.6g} is outside its attainable range "
                f"[{float(lower):.6g}, {float(upper):.6g}]", index=j)
        if terminated:
            cj = zero  # width is zero from here on; any value continues the table
        else:
            cj = (mj - lower) / width if width > 0 else zero
            cj = min(max(cj, zero), one)
            cs.append(cj)
        zeta = cj * (one - c_prev)
        zetas.append(zeta)
        S = [a + b * zeta for a, b in zip(A, B)]
        c_prev = cj
        if cj == zero or cj == one:
            terminated = True
    if terminated:
        return cs, True, None
    j = len(ms) + 1
    A, B = _next_column(S, zetas, j)
    return cs, False, (A[j], A[j] + B[j] * (one - c_prev))


def ordinary_to_canonical(m, tol: float = 1e-12) -> CanonicalMoments:
    """Canonical moments of the ordinary moment vector ``m``.

    Points on the boundary of the moment space give a shorter sequence
    ending in 0 or 1 with ``terminated=True``; the remaining moments are
    checked against the values that boundary point determines.

    Raises :class:`MomentSpaceError` naming the first violated index when
    ``m`` is not a moment sequence of a distribution on [0, 1].
    """
    cs, terminated, _ = _invert(_elements(m), tol)
    return CanonicalMoments(_pack(cs), terminated)


def moment_bounds(m_prefix, tol: float = 1e-12) -> MomentRange:
    """Range ``[m_{k+1}^-, m_{k+1}^+]`` attainable given ``m_1..m_k``."""
    ms = _elements(m_prefix)
    cs, terminated, nxt = _invert(ms, tol)
    if terminated:
        # The distribution is fixed: extend with an arbitrary canonical moment.
        value = canonical_to_ordinary(list(cs) + [0] * (len(ms) + 1 - len(cs)))[-1]
        return MomentRange(value, value)
    return MomentRange(*nxt)


def scale_moments(m, u: float) -> np.ndarray:
    """Moments ``u^k m_k`` of the distribution rescaled from [0, 1] to [0, u]."""
    if not u > 0:
        raise ValueError(f"scale u must be positive, got {u!r}")
    m = np.asarray(m, dtype=float)
    return m * float(u) ** np.arange(1, len(m) + 1)


def log_jacobian_canonical_to_ordinary(c) -> float:
    """``log |det dm/dc|``.

    ``m_k`` is affine in ``c_k`` with slope ``prod_{j<k} c_j (1 - c_j)`` and
    does not depend on later ``c``'s, so the Jacobian is triangular and

        log det = sum_{j=1}^{K-1} (K - j) log(c_j (1 - c_j)).
    """
    cs = _elements(c)
    K = len(cs)
    total = 0.0
    for j, cj in enumerate(cs, start=1):
        if not 0 < cj < 1:
            raise ValueError(f"c_{j} = {cj!r} is on the boundary; the Jacobian is degenerate")
        if j < K:
            total += (K - j) * (math.log(cj) + math.log1p(-cj))
    return total


def is_in_moment_space(m, tol: float = 1e-12) -> bool:
    """Whether ``m`` is the moment vector of some distribution on [0, 1]."""
    try:
        ms = _elements(m)
        if not all(math.isfinite(float(v)) for v in ms):
            return False
        _invert(ms, tol)
    except (MomentSpaceError, ValueError, TypeError):
        return False
    return True


def clamp_canonical(c, eps: float = EPS) -> np.ndarray:
    """Clip canonical moments into ``[eps, 1 - eps]``."""
    return np.clip(np.asarray(c, dtype=float), eps, 1.0 - eps)
