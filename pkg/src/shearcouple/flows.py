"""Antisymmetric shear profiles v(x) driving the y-advection.

Every profile is defined on x >= 0 and extended by v(-x) = -v(x), so
antisymmetry holds bit-for-bit.  ``amplitude`` scales the whole profile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

KINDS = ("power_law", "capped_linear", "flat_gap", "capped_parabola", "tabulated")


class ExtrapolationError(ValueError):
    """A tabulated profile was evaluated outside its sample range."""


@dataclass(frozen=True)
class FlowSpec:
    """Declarative description of an antisymmetric velocity profile.

    Use the classmethod constructors rather than filling fields by hand.
    ``samples`` holds (x, v) pairs on x >= 0 for the tabulated kind.
    """

    kind: str
    beta: float = 1.0
    xi: float = 0.75
    eta: float = 0.85
    samples: tuple = ()
    amplitude: float = 1.0
    _interp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown flow kind {self.kind!r}; expected one of {KINDS}")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        if self.kind == "power_law" and not self.beta > 0:
            raise ValueError("power_law exponent must be positive")
        if self.kind == "flat_gap" and not 0 < self.xi < self.eta:
            raise ValueError("flat_gap needs 0 < xi < eta")
        if self.kind == "tabulated":
            xs = np.array([s[0] for s in self.samples], dtype=float)
            vs = np.array([s[1] for s in self.samples], dtype=float)
            if len(xs) < 3 or xs[0] != 0.0 or vs[0] != 0.0:
                raise ValueError("tabulated flow needs >= 3 samples starting at (0, 0)")
            if np.any(np.diff(xs) <= 0) or np.any(vs[1:] <= 0):
                raise ValueError("tabulated samples need increasing x and v > 0 for x > 0")
            object.__setattr__(self, "_interp", PchipInterpolator(xs, vs, extrapolate=False))

    @classmethod
    def power_law(cls, beta: float, amplitude: float = 1.0) -> "FlowSpec":
        return cls("power_law", beta=float(beta), amplitude=amplitude)

    @classmethod
    def linear(cls, shear: float = 1.0) -> "FlowSpec":
        return cls("power_law", beta=1.0, amplitude=shear)

    @classmethod
    def capped_linear(cls, amplitude: float = 1.0) -> "FlowSpec":
        return cls("capped_linear", amplitude=amplitude)

    @classmethod
    def flat_gap(cls, xi: float = 0.75, eta: float = 0.85, amplitude: float = 1.0) -> "FlowSpec":
        return cls("flat_gap", xi=float(xi), eta=float(eta), amplitude=amplitude)

    @classmethod
    def capped_parabola(cls, amplitude: float = 1.0) -> "FlowSpec":
        return cls("capped_parabola", amplitude=amplitude)

    @classmethod
    def tabulated(cls, x, v, amplitude: float = 1.0) -> "FlowSpec":
        return cls("tabulated", samples=tuple(zip(map(float, x), map(float, v))), amplitude=amplitude)

    # -- structural queries -------------------------------------------------

    @property
    def bounded(self) -> bool:
        """True when sup v is finite."""
        if self.kind == "tabulated":
            return True
        return self.kind in ("capped_linear", "capped_parabola")

    @property
    def sup(self) -> float:
        if self.kind in ("capped_linear", "capped_parabola"):
            return self.amplitude
        if self.kind == "tabulated":
            return self.amplitude * max(s[1] for s in self.samples)
        return np.inf

    @property
    def x_m(self) -> float:
        """Smallest x > 0 at which v attains its supremum (inf if unbounded)."""
        if self.kind in ("capped_linear", "capped_parabola"):
            return 1.0
        if self.kind == "tabulated":
            vs = [s[1] for s in self.samples]
            return self.samples[int(np.argmax(vs))][0]
        return np.inf

    @property
    def kinks(self) -> tuple:
        """Positive abscissae where v' jumps."""
        return {
            "capped_linear": (1.0,),
            "capped_parabola": (1.0,),
            "flat_gap": (self.xi, self.eta),
        }.get(self.kind, ())

    def describe(self) -> str:
        if self.kind == "power_law":
            return f"power_law(beta={self.beta:g}, amplitude={self.amplitude:g})"
        if self.kind == "flat_gap":
            return f"flat_gap(xi={self.xi:g}, eta={self.eta:g})"
        return f"{self.kind}(amplitude={self.amplitude:g})"

    # -- evaluation on x >= 0 ---------------------------------------------

    def _profile(self, ax):
        if self.kind == "power_law":
            return ax**self.beta
        if self.kind == "capped_linear":
            return np.minimum(ax, 1.0)
        if self.kind == "capped_parabola":
            m = np.minimum(ax, 1.0)
            return m * (2.0 - m)
        if self.kind == "flat_gap":
            gap = self.eta - self.xi
            return np.where(ax <= self.xi, ax, np.where(ax < self.eta, self.xi, ax - gap))
        out = self._interp(ax)
        if np.any(np.isnan(out)):
            raise ExtrapolationError(
                f"tabulated flow evaluated beyond x={self.samples[-1][0]:g}"
            )
        return out

    def _profile_slope(self, ax):
        # one-sided from larger |x| at kinks
        if self.kind == "power_law":
            b = self.beta
            if b == 1.0:
                return np.ones_like(ax)
            with np.errstate(divide="ignore"):
                return np.where(ax > 0, b * ax ** (b - 1.0), 0.0 if b > 1 else np.inf)
        if self.kind == "capped_linear":
            return np.where(ax < 1.0, 1.0, 0.0)
        if self.kind == "capped_parabola":
            return np.where(ax < 1.0, 2.0 - 2.0 * ax, 0.0)
        if self.kind == "flat_gap":
            return np.where((ax >= self.xi) & (ax < self.eta), 0.0, 1.0)
        out = self._interp.derivative()(ax)
        if np.any(np.isnan(out)):
            raise ExtrapolationError(
                f"tabulated flow evaluated beyond x={self.samples[-1][0]:g}"
            )
        return out

    def drop(self, x, h):
        """v(x) - v(x - h) for 0 <= h <= x, without cancellation for small h."""
        x = np.asarray(x, dtype=float)
        h = np.asarray(h, dtype=float)
        a = self.amplitude
        if self.kind == "power_law":
            with np.errstate(divide="ignore"):  # h == x gives log1p(-1) = -inf, fine
                return a * x**self.beta * -np.expm1(self.beta * np.log1p(-h / x))
        # below: 1 - (x - h) is formed as h - (x - 1) to keep small h exact
        if self.kind == "capped_linear":
            return a * np.where(x <= 1.0, h, np.clip(h - (x - 1.0), 0.0, None))
        if self.kind == "capped_parabola":
            inside = h * (2.0 - 2.0 * x + h)
            tail = np.clip(h - (x - 1.0), 0.0, None) ** 2
            return a * np.where(x <= 1.0, inside, tail)
        if self.kind == "flat_gap":
            lo = x - h
            overlap = np.clip(np.minimum(x, self.eta) - np.maximum(lo, self.xi), 0.0, None)
            return a * (h - overlap)
        return eval_flow(self, x) - eval_flow(self, x - h)


def eval_flow(spec: FlowSpec, x):
    """Velocity v(x); scalar in, scalar out, arrays broadcast."""
    x = np.asarray(x, dtype=float)
    out = np.sign(x) * spec.amplitude * spec._profile(np.abs(x))
    return out[()] if out.ndim == 0 else out


def eval_flow_derivative(spec: FlowSpec, x):
    """v'(x).  At a kink the derivative is taken from the side of larger |x|."""
    x = np.asarray(x, dtype=float)
    out = spec.amplitude * spec._profile_slope(np.abs(x))
    out = np.asarray(out, dtype=float)
    return out[()] if out.ndim == 0 else out


def parse_flow(text: str) -> FlowSpec:
    """Build a FlowSpec from a config string such as ``power_law(beta=2)``.

    Accepted forms: ``power_law(beta=..)``, ``linear``, ``capped_linear``,
    ``capped_parabola``, ``flat_gap(xi=.., eta=..)``; any of them may also
    carry ``amplitude=..``.  Tabulated flows are built in code.
    """
    text = text.strip()
    name, _, rest = text.partition("(")
    name = name.strip()
    kwargs = {}
    rest = rest.rstrip(")").strip()
    if rest:
        for part in rest.split(","):
            key, _, val = part.partition("=")
            if not val:
                raise ValueError(f"malformed flow parameter {part!r}")
            kwargs[key.strip()] = float(val)
    if name == "linear":
        return FlowSpec.linear(kwargs.pop("shear", kwargs.pop("amplitude", 1.0)))
    builders = {
        "power_law": FlowSpec.power_law,
        "capped_linear": FlowSpec.capped_linear,
        "capped_parabola": FlowSpec.capped_parabola,
        "flat_gap": FlowSpec.flat_gap,
    }
    if name not in builders:
        raise ValueError(f"unknown flow {name!r}")
    try:
        return builders[name](**kwargs)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {name}: {exc}") from None
