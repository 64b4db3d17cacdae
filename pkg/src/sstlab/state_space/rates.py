"""Birth/death rate families on Z (or on a sub-interval of Z).

A family is queried through ``log_birth(n)`` / ``log_death(n)``, which
accept integer scalars or arrays. Rates are kept in log space throughout:
families such as ``b_n = 2**|n|`` overflow doubles near n = 1024.

Support convention: the chain lives on ``[lo, hi]`` (either end may be
infinite). The birth rate at ``hi`` and the death rate at ``lo`` are zero;
queries strictly outside the support raise ``WindowExceeded``.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidRates, WindowExceeded

NEG_INF = -np.inf


class BDRates:
    """Base class; subclasses implement ``_log_b`` / ``_log_a`` on support."""

    family = "abstract"

    def __init__(self, lo: int | None = None, hi: int | None = None):
        if lo is not None and hi is not None and lo > hi:
            raise InvalidRates(f"empty support [{lo}, {hi}]")
        self.lo = lo
        self.hi = hi

    # -- support -------------------------------------------------------
    @property
    def lo_f(self) -> float:
        return -math.inf if self.lo is None else self.lo

    @property
    def hi_f(self) -> float:
        return math.inf if self.hi is None else self.hi

    @property
    def finite(self) -> bool:
        return self.lo is not None and self.hi is not None

    def in_support(self, n) -> np.ndarray:
        n = np.asarray(n)
        return (n >= self.lo_f) & (n <= self.hi_f)

    def _check(self, n: np.ndarray) -> None:
        if not np.all(self.in_support(n)):
            bad = n[~self.in_support(n)]
            raise WindowExceeded(
                f"{self.family} rates queried at n={int(bad.flat[0])} outside "
                f"support [{self.lo_f}, {self.hi_f}]")

    # -- public queries ------------------------------------------------
    def log_birth(self, n):
        arr = np.asarray(n, dtype=np.int64)
        self._check(arr)
        out = np.array(self._log_b(arr), dtype=float, copy=True)
        out = np.broadcast_to(out, arr.shape).copy()
        if self.hi is not None:
            out[arr == self.hi] = NEG_INF
        self._validate(out, arr, arr != (self.hi if self.hi is not None else np.inf))
        return out if out.ndim else float(out)

    def log_death(self, n):
        arr = np.asarray(n, dtype=np.int64)
        self._check(arr)
        out = np.array(self._log_a(arr), dtype=float, copy=True)
        out = np.broadcast_to(out, arr.shape).copy()
        if self.lo is not None:
            out[arr == self.lo] = NEG_INF
        self._validate(out, arr, arr != (self.lo if self.lo is not None else -np.inf))
        return out if out.ndim else float(out)

    def birth(self, n):
        return np.exp(self.log_birth(n))

    def death(self, n):
        return np.exp(self.log_death(n))

    def _validate(self, out, n, interior) -> None:
        bad = interior & ~np.isfinite(out)
        if np.any(bad):
            raise InvalidRates(
                f"{self.family}: non-positive or non-finite rate at n={int(n[bad].flat[0])}")

    def _log_b(self, n):  # pragma: no cover - abstract
        raise NotImplementedError

    def _log_a(self, n):  # pragma: no cover - abstract
        raise NotImplementedError

    def to_config(self) -> dict:
        raise TypeError(f"{self.family} rates are not serializable")

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.to_config_safe()})"

    def to_config_safe(self):
        try:
            return self.to_config()
        except TypeError:
            return {"family": self.family}


class TableRates(BDRates):
    """Tabulated rates on the finite window ``[lo, lo + len(births)]``.

    ``births[k]`` is the rate of ``lo+k -> lo+k+1`` and ``deaths[k]`` the
    rate of ``lo+k+1 -> lo+k``.
    """

    family = "table"

    def __init__(self, lo: int, births: Sequence[float], deaths: Sequence[float]):
        births = np.asarray(births, dtype=float)
        deaths = np.asarray(deaths, dtype=float)
        if births.ndim != 1 or births.shape != deaths.shape:
            raise InvalidRates("births and deaths must be 1-d of equal length")
        if np.any(~(births > 0)) or np.any(~(deaths > 0)) or not (
                np.all(np.isfinite(births)) and np.all(np.isfinite(deaths))):
            raise InvalidRates("table rates must be finite and strictly positive")
        super().__init__(int(lo), int(lo) + births.shape[0])
        self._lb = np.log(births)
        self._la = np.log(deaths)

    def _log_b(self, n):
        k = np.clip(n - self.lo, 0, self._lb.shape[0] - 1)
        return self._lb[k]

    def _log_a(self, n):
        k = np.clip(n - self.lo - 1, 0, self._la.shape[0] - 1)
        return self._la[k]

    def to_config(self) -> dict:
        return {"family": "table", "lo": self.lo,
                "births": np.exp(self._lb).tolist(),
                "deaths": np.exp(self._la).tolist()}


class GeometricRates(BDRates):
    """Constant birth rate ``base``; death rate ``base*ratio`` for n >= 1 and
    ``base/ratio`` for n <= 0, so that mu(n) = ratio**(-|n|)."""

    family = "geometric"

    def __init__(self, base: float = 1.0, ratio: float = 2.0):
        if not (base > 0 and ratio > 0 and math.isfinite(base) and math.isfinite(ratio)):
            raise InvalidRates("geometric family needs base > 0 and ratio > 0")
        super().__init__()
        self.base = float(base)
        self.ratio = float(ratio)

    def _log_b(self, n):
        return np.full(np.shape(n), math.log(self.base))

    def _log_a(self, n):
        lr = math.log(self.ratio)
        return math.log(self.base) + np.where(np.asarray(n) >= 1, lr, -lr)

    def to_config(self) -> dict:
        return {"family": "geometric", "base": self.base, "ratio": self.ratio}


class ExponentialRates(BDRates):
    """Symmetric family ``a_n = b_n = base**|n|``."""

    family = "exponential"

    def __init__(self, base: float = 2.0):
        if not (base > 0 and math.isfinite(base)):
            raise InvalidRates("exponential family needs base > 0")
        super().__init__()
        self.base = float(base)

    def _log_b(self, n):
        return np.abs(np.asarray(n, dtype=float)) * math.log(self.base)

    _log_a = _log_b

    def to_config(self) -> dict:
        return {"family": "exponential", "base": self.base}


class CustomRates(BDRates):
    """In-process rate oracle built from two callables.

    The callables receive integer arrays; scalar-only callables are
    vectorized automatically. With ``log=True`` they return log rates.
    """

    family = "custom"

    def __init__(self, birth: Callable, death: Callable, *, log: bool = False,
                 lo: int | None = None, hi: int | None = None):
        super().__init__(lo, hi)
        self._birth = birth
        self._death = death
        self._log = log

    def _call(self, fn, n):
        try:
            out = np.asarray(fn(n), dtype=float)
            if out.shape != np.shape(n):
                raise ValueError
        except (TypeError, ValueError):
            out = np.array([fn(int(k)) for k in np.ravel(n)], dtype=float)
            out = out.reshape(np.shape(n))
        if self._log:
            return out
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(out > 0, np.log(np.where(out > 0, out, 1.0)), np.nan)

    def _log_b(self, n):
        return self._call(self._birth, n)

    def _log_a(self, n):
        return self._call(self._death, n)


def mirrored(birth_right: Callable, death_right: Callable, *, log: bool = False) -> CustomRates:
    """Extend right half-line rates to Z by reflection ``n -> -n``.

    ``birth_right(n)`` is used for n >= 0 and ``death_right(n)`` for n >= 1;
    on the left ``a_{-n} = b_n`` and ``b_{-n} = a_n``.
    """

    def birth(n):
        n = np.asarray(n)
        m = np.abs(n)
        return np.where(n >= 0, _vec(birth_right, m), _vec(death_right, np.maximum(m, 1)))

    def death(n):
        n = np.asarray(n)
        m = np.abs(n)
        return np.where(n >= 1, _vec(death_right, np.maximum(m, 1)), _vec(birth_right, m))

    return CustomRates(birth, death, log=log)


def _vec(fn, n):
    try:
        out = np.asarray(fn(n), dtype=float)
        if out.shape == np.shape(n):
            return out
    except (TypeError, ValueError):
        pass
    return np.array([fn(int(k)) for k in np.ravel(n)], dtype=float).reshape(np.shape(n))


class HalfLineRates(BDRates):
    """Rates on ``[0, inf)`` built from a finite head and a shifted tail family.

    Used for branches whose first edges live in a finite core. Edge k
    (k -> k+1) has outward rate ``head_out[k]`` / inward ``head_in[k]`` for
    k < len(head_out), then ``tail.birth(k - len + shift)`` and
    ``tail.death(k - len + shift + 1)``.
    """

    family = "halfline"

    def __init__(self, head_out: Sequence[float], head_in: Sequence[float],
                 tail: BDRates, shift: int = 0):
        super().__init__(0, None)
        self._ho = np.log(np.asarray(head_out, dtype=float))
        self._hi_ = np.log(np.asarray(head_in, dtype=float))
        if self._ho.shape != self._hi_.shape:
            raise InvalidRates("head rates must have equal length")
        self.tail = tail
        self.shift = int(shift)

    def _log_b(self, n):
        n = np.asarray(n)
        h = self._ho.shape[0]
        out = np.empty(n.shape)
        head = n < h
        out[head] = self._ho[n[head]]
        if np.any(~head):
            out[~head] = self.tail.log_birth(n[~head] - h + self.shift)
        return out

    def _log_a(self, n):
        n = np.asarray(n)
        h = self._hi_.shape[0]
        out = np.empty(n.shape)
        head = (n >= 1) & (n <= h)
        out[head] = self._hi_[n[head] - 1]
        rest = n > h
        if np.any(rest):
            out[rest] = self.tail.log_death(n[rest] - h + self.shift)
        out[n < 1] = 0.0  # masked to zero rate at the support boundary
        return out


F1 = ExponentialRates(2.0)
F2 = GeometricRates(1.0, 2.0)


def from_config(cfg: dict) -> BDRates:
    """Build a family from its serialized form (see ``to_config``)."""
    fam = cfg.get("family")
    if fam == "table":
        return TableRates(cfg["lo"], cfg["births"], cfg["deaths"])
    if fam == "geometric":
        return GeometricRates(cfg.get("base", 1.0), cfg.get("ratio", 2.0))
    if fam == "exponential":
        return ExponentialRates(cfg.get("base", 2.0))
    raise InvalidRates(f"unknown rate family {fam!r}")
