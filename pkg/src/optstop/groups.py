"""The two transformation groups acting on data sequences.

Both groups act on the right: applying g1 then g2 equals applying
``compose(g1, g2)``.  For the location-scale group this convention fixes
the composition law (a1, b1) * (a2, b2) = (a1*a2, a2*b1 + b2) and makes
the right-invariant measure da db / a^2; the scale group is abelian and
its invariant measure is the usual dc / c.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

ScaleElement = float
LocScaleElement = Tuple[float, float]
GroupElement = Union[ScaleElement, LocScaleElement]


@dataclass(frozen=True)
class ScaleGroup:
    """Positive reals under multiplication, acting by x -> c * x."""

    name = "scale"
    identity: float = 1.0

    @staticmethod
    def act(x: np.ndarray, g: float) -> np.ndarray:
        if g <= 0:
            raise ValueError(f"scale element must be positive, got {g}")
        return np.asarray(x, dtype=float) * g

    @staticmethod
    def compose(g1: float, g2: float) -> float:
        return g1 * g2

    @staticmethod
    def inverse(g: float) -> float:
        if g <= 0:
            raise ValueError(f"scale element must be positive, got {g}")
        return 1.0 / g

    @staticmethod
    def random_element(rng: np.random.Generator, spread: float = 1.5) -> float:
        """A random element with log-uniform spread around the identity."""
        return float(np.exp(rng.uniform(-spread, spread)))


@dataclass(frozen=True)
class LocationScaleGroup:
    """Pairs (a, b), a > 0, acting by x -> a * x + b."""

    name = "location-scale"
    identity: LocScaleElement = (1.0, 0.0)

    @staticmethod
    def act(x: np.ndarray, g: LocScaleElement) -> np.ndarray:
        a, b = g
        if a <= 0:
            raise ValueError(f"scale part must be positive, got {a}")
        return np.asarray(x, dtype=float) * a + b

    @staticmethod
    def compose(g1: LocScaleElement, g2: LocScaleElement) -> LocScaleElement:
        # (x*a1 + b1)*a2 + b2 = x*(a1*a2) + (a2*b1 + b2)
        a1, b1 = g1
        a2, b2 = g2
        return (a1 * a2, a2 * b1 + b2)

    @staticmethod
    def inverse(g: LocScaleElement) -> LocScaleElement:
        a, b = g
        if a <= 0:
            raise ValueError(f"scale part must be positive, got {a}")
        return (1.0 / a, -b / a)

    @staticmethod
    def random_element(
        rng: np.random.Generator, spread: float = 1.5, shift: float = 2.0
    ) -> LocScaleElement:
        return (float(np.exp(rng.uniform(-spread, spread))), float(rng.normal(0.0, shift)))


SCALE = ScaleGroup()
LOCATION_SCALE = LocationScaleGroup()
