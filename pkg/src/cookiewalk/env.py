"""Cookie environments and the exponents derived from them.

A configuration is a number of cookies ``M`` per site and their strengths
``p_1, ..., p_M``.  Everything downstream (walk, branching process, kernel,
Bessel martingale) reads its parameters from a :class:`CookieConfig`.
"""

from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import BoundaryAmbiguityWarning, DomainError

Number = Union[int, float, Fraction, str]

#: half-width of the band around alpha in {0, 1} flagged for float configs
BOUNDARY_BAND = 1e-12


class Regime(enum.Enum):
    RECURRENT = "recurrent"
    TRANSIENT_ZERO_SPEED_SUB = "transient_zero_speed_sub"
    TRANSIENT_ZERO_SPEED_CRITICAL = "transient_zero_speed_critical"
    POSITIVE_SPEED = "positive_speed"


class EnvKind(enum.Enum):
    HOMOGENEOUS = "homogeneous"
    POSITIVE_HALF_LINE_ONLY = "positive_half_line_only"


def _parse_strength(value: Number):
    """Return ``(float, Fraction or None)`` for one cookie strength."""
    if isinstance(value, Fraction):
        return float(value), value
    if isinstance(value, bool):
        raise DomainError("cookie strength cannot be a boolean")
    if isinstance(value, int):
        return float(value), Fraction(value)
    if isinstance(value, str):
        text = value.strip()
        if "/" in text:
            num, den = text.split("/", 1)
            frac = Fraction(int(num), int(den))
            return float(frac), frac
        return float(text), None
    return float(value), None


@dataclass(frozen=True)
class CookieConfig:
    """An ``(M, p)`` cookie environment.

    Strengths may be given as floats, ints, :class:`~fractions.Fraction` or
    ``"num/den"`` strings.  When every strength is exact, regime
    classification is done in rational arithmetic.
    """

    M: int
    p: tuple
    p_exact: tuple = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.M, (int, np.integer)) or self.M < 1:
            raise DomainError(f"M must be a positive integer, got {self.M!r}")
        if len(self.p) != self.M:
            raise DomainError(f"expected {self.M} strengths, got {len(self.p)}")
        for pi in self.p:
            if not (0.5 <= pi < 1.0):
                raise DomainError(f"cookie strengths must lie in [1/2, 1), got {pi}")

    @classmethod
    def from_strengths(cls, strengths: Iterable[Number]) -> "CookieConfig":
        parsed = [_parse_strength(v) for v in strengths]
        floats = tuple(f for f, _ in parsed)
        exact = tuple(e for _, e in parsed)
        if any(e is None for e in exact):
            exact = None
        return cls(M=len(floats), p=floats, p_exact=exact)

    @classmethod
    def uniform(cls, M: int, strength: Number) -> "CookieConfig":
        return cls.from_strengths([strength] * M)

    @classmethod
    def from_dict(cls, doc: dict) -> "CookieConfig":
        if "p" not in doc:
            raise DomainError("config document needs a 'p' entry")
        cfg = cls.from_strengths(doc["p"])
        if "M" in doc and int(doc["M"]) != cfg.M:
            raise DomainError(f"'M'={doc['M']} disagrees with len(p)={cfg.M}")
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "CookieConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        if self.p_exact is not None:
            p = [f"{f.numerator}/{f.denominator}" for f in self.p_exact]
        else:
            p = list(self.p)
        return {"M": self.M, "p": p}

    @cached_property
    def p_array(self) -> np.ndarray:
        return np.asarray(self.p, dtype=np.float64)

    @cached_property
    def exponents(self) -> "DerivedExponents":
        return derive_exponents(self)

    @property
    def alpha(self) -> float:
        return self.exponents.alpha

    @property
    def nu(self) -> float:
        return self.exponents.nu


@dataclass(frozen=True)
class DerivedExponents:
    alpha: float
    nu: float
    regime: Regime
    alpha_exact: Fraction = None


def _classify(alpha) -> Regime:
    if alpha <= 0:
        return Regime.RECURRENT
    if alpha < 1:
        return Regime.TRANSIENT_ZERO_SPEED_SUB
    if alpha == 1:
        return Regime.TRANSIENT_ZERO_SPEED_CRITICAL
    return Regime.POSITIVE_SPEED


def derive_exponents(config: CookieConfig) -> DerivedExponents:
    """alpha = sum(2 p_i - 1) - 1, nu = (alpha + 1) / 2 and the regime."""
    if config.p_exact is not None:
        a = sum((2 * q - 1 for q in config.p_exact), Fraction(0)) - 1
        return DerivedExponents(float(a), float((a + 1) / 2), _classify(a), a)

    # fsum is exact up to the final rounding
    alpha = math.fsum([2.0 * q - 1.0 for q in config.p]) - 1.0
    for edge in (0.0, 1.0):
        if alpha != edge and abs(alpha - edge) < BOUNDARY_BAND:
            warnings.warn(
                f"alpha={alpha!r} is within {BOUNDARY_BAND} of {edge}; classified "
                f"as the boundary value (pass exact strengths such as '5/6' to "
                f"avoid this)",
                BoundaryAmbiguityWarning,
                stacklevel=2,
            )
            return DerivedExponents(alpha, (alpha + 1.0) / 2.0, _classify(edge))
    return DerivedExponents(alpha, (alpha + 1.0) / 2.0, _classify(alpha))


@dataclass(frozen=True)
class EnvironmentVariant:
    """Homogeneous environment, or the one with all cookies on x < 0 removed."""

    base: CookieConfig
    kind: EnvKind = EnvKind.HOMOGENEOUS

    @classmethod
    def homogeneous(cls, base: CookieConfig) -> "EnvironmentVariant":
        return cls(base, EnvKind.HOMOGENEOUS)

    @classmethod
    def positive_half_line(cls, base: CookieConfig) -> "EnvironmentVariant":
        return cls(base, EnvKind.POSITIVE_HALF_LINE_ONLY)

    @property
    def positive_only(self) -> bool:
        return self.kind is EnvKind.POSITIVE_HALF_LINE_ONLY


def as_env(env) -> EnvironmentVariant:
    if isinstance(env, EnvironmentVariant):
        return env
    if isinstance(env, CookieConfig):
        return EnvironmentVariant.homogeneous(env)
    raise TypeError(f"expected CookieConfig or EnvironmentVariant, got {type(env)}")


def cookie_strength(env, site: int, visit_index: int) -> float:
    """Probability of a right step on the ``visit_index``-th visit to ``site``."""
    env = as_env(env)
    if visit_index < 1:
        raise DomainError("visit_index starts at 1")
    if env.positive_only and site < 0:
        return 0.5
    if visit_index <= env.base.M:
        return env.base.p[visit_index - 1]
    return 0.5


def strengths(values: Sequence[Number]) -> CookieConfig:
    """Shorthand for :meth:`CookieConfig.from_strengths`."""
    return CookieConfig.from_strengths(values)
