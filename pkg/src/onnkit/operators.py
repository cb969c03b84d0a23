"""Operator library: nodal, pool and activation operators with their
analytic derivatives, plus operator-set enumeration.

An operator set is a (pool, activation, nodal) triple addressed by a single
library index::

    index = pool * 14 + act * 7 + nodal

Index 0 is the native CNN set (sum, tanh, mul): an all-index-0 network is an
ordinary convolutional network.

All operator functions accept scalars or NumPy arrays (broadcasting applies)
and are evaluated in double precision.  The transcendental nodals carry
numerical guards -- see :class:`OperatorConstants`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NODAL_NAMES = ("mul", "cubic", "sin", "exp", "sinh", "sinc", "chirp")
POOL_NAMES = ("sum", "median")
ACT_NAMES = ("tanh", "lincut")

N_NODAL = len(NODAL_NAMES)
N_ACT = len(ACT_NAMES)
N_POOL = len(POOL_NAMES)
N_SETS = N_POOL * N_ACT * N_NODAL  # 28

POOL_SUM, POOL_MEDIAN = 0, 1
ACT_TANH, ACT_LINCUT = 0, 1


@dataclass(frozen=True)
class OperatorConstants:
    """Numerical constants frozen per model instance.

    k_nodal:    scale K inside cubic/sin/sinh/sinc.
    k_chirp:    scale inside the chirp nodal.
    cut:        knee of the lincut activation.
    sinc_guard: the sinc denominator is replaced by sign(y)*max(|y|, guard)
                so the operator is total; derivatives use the same guarded y.
    arg_clip:   exp/sinh arguments are clipped to [-arg_clip, arg_clip];
                their gradients are zero beyond the clip (flat region).
    """

    k_nodal: float = math.pi
    k_chirp: float = math.pi
    cut: float = 10.0
    sinc_guard: float = 1e-4
    arg_clip: float = 20.0

    def __post_init__(self):
        if not (self.k_nodal > 0 and self.k_chirp > 0):
            raise ValueError("nodal scales must be positive")
        if not (self.sinc_guard > 0 and self.arg_clip > 0 and self.cut > 0):
            raise ValueError("guards must be positive")

    def to_dict(self) -> dict:
        return {
            "k_nodal": self.k_nodal,
            "k_chirp": self.k_chirp,
            "cut": self.cut,
            "sinc_guard": self.sinc_guard,
            "arg_clip": self.arg_clip,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorConstants":
        return cls(**d)


def _guard_denominator(y, guard):
    # sign-preserving floor on |y|; y == 0 maps to +guard
    return np.where(np.asarray(y) >= 0, np.maximum(y, guard), np.minimum(y, -guard))


# -- nodal operators ---------------------------------------------------------
# One (eval, grad_w, grad_y) triple per nodal id, in NODAL_NAMES order.

def _mul_eval(w, y, c):
    return w * y


def _mul_gw(w, y, c):
    return y + 0.0 * w


def _mul_gy(w, y, c):
    return w + 0.0 * y


def _cubic_eval(w, y, c):
    return c.k_nodal * w * y ** 3


def _cubic_gw(w, y, c):
    return c.k_nodal * y ** 3 + 0.0 * w


def _cubic_gy(w, y, c):
    return 3.0 * c.k_nodal * w * y ** 2


def _sin_eval(w, y, c):
    return np.sin(c.k_nodal * w * y)


def _sin_gw(w, y, c):
    return c.k_nodal * y * np.cos(c.k_nodal * w * y)


def _sin_gy(w, y, c):
    return c.k_nodal * w * np.cos(c.k_nodal * w * y)


def _exp_eval(w, y, c):
    u = np.clip(w * y, -c.arg_clip, c.arg_clip)
    return np.exp(u) - 1.0


def _exp_gw(w, y, c):
    u = w * y
    inside = np.abs(u) <= c.arg_clip
    return np.where(inside, y * np.exp(np.clip(u, -c.arg_clip, c.arg_clip)), 0.0)


def _exp_gy(w, y, c):
    u = w * y
    inside = np.abs(u) <= c.arg_clip
    return np.where(inside, w * np.exp(np.clip(u, -c.arg_clip, c.arg_clip)), 0.0)


def _sinh_eval(w, y, c):
    u = np.clip(c.k_nodal * w * y, -c.arg_clip, c.arg_clip)
    return np.sinh(u)


def _sinh_gw(w, y, c):
    u = c.k_nodal * w * y
    inside = np.abs(u) <= c.arg_clip
    return np.where(inside, c.k_nodal * y * np.cosh(np.clip(u, -c.arg_clip, c.arg_clip)), 0.0)


def _sinh_gy(w, y, c):
    u = c.k_nodal * w * y
    inside = np.abs(u) <= c.arg_clip
    return np.where(inside, c.k_nodal * w * np.cosh(np.clip(u, -c.arg_clip, c.arg_clip)), 0.0)


def _sinc_eval(w, y, c):
    yg = _guard_denominator(y, c.sinc_guard)
    return np.sin(c.k_nodal * w * yg) / yg


def _sinc_gw(w, y, c):
    yg = _guard_denominator(y, c.sinc_guard)
    return c.k_nodal * np.cos(c.k_nodal * w * yg)


def _sinc_gy(w, y, c):
    yg = _guard_denominator(y, c.sinc_guard)
    u = c.k_nodal * w * yg
    return c.k_nodal * w * np.cos(u) / yg - np.sin(u) / yg ** 2


def _chirp_eval(w, y, c):
    return np.sin(c.k_chirp * w * y ** 2)


def _chirp_gw(w, y, c):
    return c.k_chirp * y ** 2 * np.cos(c.k_chirp * w * y ** 2)


def _chirp_gy(w, y, c):
    return 2.0 * c.k_chirp * w * y * np.cos(c.k_chirp * w * y ** 2)


_NODAL_TABLE = (
    (_mul_eval, _mul_gw, _mul_gy),
    (_cubic_eval, _cubic_gw, _cubic_gy),
    (_sin_eval, _sin_gw, _sin_gy),
    (_exp_eval, _exp_gw, _exp_gy),
    (_sinh_eval, _sinh_gw, _sinh_gy),
    (_sinc_eval, _sinc_gw, _sinc_gy),
    (_chirp_eval, _chirp_gw, _chirp_gy),
)


def _check_nodal(nodal: int):
    if not 0 <= nodal < N_NODAL:
        raise ValueError(f"nodal id out of range: {nodal}")


def nodal_eval(nodal: int, w, y, c: OperatorConstants):
    """Weight-input interaction term for one kernel tap."""
    _check_nodal(nodal)
    return _NODAL_TABLE[nodal][0](w, y, c)


def nodal_grad_w(nodal: int, w, y, c: OperatorConstants):
    """Partial derivative of the nodal term with respect to the weight."""
    _check_nodal(nodal)
    return _NODAL_TABLE[nodal][1](w, y, c)


def nodal_grad_y(nodal: int, w, y, c: OperatorConstants):
    """Partial derivative of the nodal term with respect to the input value."""
    _check_nodal(nodal)
    return _NODAL_TABLE[nodal][2](w, y, c)


# -- pool operators ----------------------------------------------------------

def pool_eval(pool: int, terms):
    """Aggregate the nodal terms of one kernel window.

    Returns ``(value, argmedian)``; argmedian is None for the sum pool.  The
    median of an even-length window is the lower middle of the sorted order,
    and ties among equal values resolve to the smallest original index so
    gradient routing is deterministic.
    """
    terms = list(terms)
    if not terms:
        raise ValueError("empty pool window")
    if pool == POOL_SUM:
        return float(np.sum(terms)), None
    if pool == POOL_MEDIAN:
        value = sorted(terms)[(len(terms) - 1) // 2]
        return float(value), terms.index(value)
    raise ValueError(f"pool id out of range: {pool}")


def pool_grad(pool: int, terms, j: int) -> float:
    """Derivative of the pooled value with respect to term ``j``."""
    terms = list(terms)
    if not 0 <= j < len(terms):
        raise IndexError(f"term index out of range: {j}")
    if pool == POOL_SUM:
        return 1.0
    if pool == POOL_MEDIAN:
        _, argmed = pool_eval(POOL_MEDIAN, terms)
        return 1.0 if j == argmed else 0.0
    raise ValueError(f"pool id out of range: {pool}")


# -- activation operators ----------------------------------------------------

def act_eval(act: int, x, c: OperatorConstants):
    if act == ACT_TANH:
        return np.tanh(x)
    if act == ACT_LINCUT:
        return np.clip(np.asarray(x, dtype=float) / c.cut, -1.0, 1.0)
    raise ValueError(f"act id out of range: {act}")


def act_grad(act: int, x, c: OperatorConstants, fx=None):
    """Activation derivative; pass ``fx`` to reuse an already computed tanh."""
    if act == ACT_TANH:
        f = np.tanh(x) if fx is None else np.asarray(fx)
        return 1.0 - f * f
    if act == ACT_LINCUT:
        return np.where(np.abs(x) <= c.cut, 1.0 / c.cut, 0.0)
    raise ValueError(f"act id out of range: {act}")


# -- operator-set enumeration ------------------------------------------------

@dataclass(frozen=True, order=True)
class OperatorSet:
    """A (pool, act, nodal) triple with its canonical library index."""

    pool: int
    act: int
    nodal: int

    def __post_init__(self):
        if not 0 <= self.pool < N_POOL:
            raise ValueError(f"pool id out of range: {self.pool}")
        if not 0 <= self.act < N_ACT:
            raise ValueError(f"act id out of range: {self.act}")
        if not 0 <= self.nodal < N_NODAL:
            raise ValueError(f"nodal id out of range: {self.nodal}")

    @property
    def index(self) -> int:
        return set_index(self.pool, self.act, self.nodal)

    @property
    def name(self) -> str:
        return "%s/%s/%s" % (
            POOL_NAMES[self.pool], ACT_NAMES[self.act], NODAL_NAMES[self.nodal]
        )


def set_index(pool: int, act: int, nodal: int) -> int:
    """Library index of the (pool, act, nodal) triple."""
    if not (0 <= pool < N_POOL and 0 <= act < N_ACT and 0 <= nodal < N_NODAL):
        raise ValueError(f"operator ids out of range: ({pool}, {act}, {nodal})")
    return pool * (N_ACT * N_NODAL) + act * N_NODAL + nodal


def set_from_index(index: int) -> OperatorSet:
    """Inverse of :func:`set_index` (round-trip identity holds)."""
    if not 0 <= index < N_SETS:
        raise ValueError(f"operator-set index out of range: {index}")
    pool, rest = divmod(index, N_ACT * N_NODAL)
    act, nodal = divmod(rest, N_NODAL)
    return OperatorSet(pool, act, nodal)


CNN_SET_INDEX = 0  # (sum, tanh, mul) == plain convolution


@dataclass(frozen=True)
class OperatorSubLibrary:
    """A restricted library: the cross product of chosen operator ids."""

    indices: tuple
    pools: tuple
    acts: tuple
    nodals: tuple

    def __contains__(self, index: int) -> bool:
        return index in self.indices

    def __len__(self) -> int:
        return len(self.indices)

    def to_dict(self) -> dict:
        return {
            "pools": list(self.pools),
            "acts": list(self.acts),
            "nodals": list(self.nodals),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OperatorSubLibrary":
        return make_sublibrary(d["pools"], d["acts"], d["nodals"])


def make_sublibrary(pools, acts, nodals) -> OperatorSubLibrary:
    """Cross product of the given ids, ordered by ascending library index."""
    pools = sorted(set(pools))
    acts = sorted(set(acts))
    nodals = sorted(set(nodals))
    if not pools or not acts or not nodals:
        raise ValueError("sublibrary requires at least one id of each kind")
    indices = sorted(
        set_index(p, a, n) for p in pools for a in acts for n in nodals
    )
    return OperatorSubLibrary(tuple(indices), tuple(pools), tuple(acts), tuple(nodals))


def full_library() -> OperatorSubLibrary:
    return make_sublibrary(range(N_POOL), range(N_ACT), range(N_NODAL))
