"""Group-size dependent sensitivity and specificity curves.

Each family is a small immutable object that maps ``(p, k)`` to a probability.
A :class:`MisclassModel` pairs one family for sensitivity with one for
specificity (perfect by default).

Serialized form, as accepted by the CLI::

    {"family": "hwang", "d": 0.075}
    {"family": "linear", "slope": 0.02}
    {"family": "exp_step"}
    {"family": "tabulated", "values": [1.0, 0.98, 0.95]}
    {"family": "perfect"}

A model document is either a single family (used for sensitivity) or
``{"sensitivity": {...}, "specificity": {...}}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Union


def _check_p(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError(f"prevalence must lie strictly in (0, 1), got {p!r}")


def _check_k(k: int) -> None:
    if int(k) != k or k < 1:
        raise ValueError(f"group size must be a positive integer, got {k!r}")


def hwang(p: float, k: int, d: float) -> float:
    """Hwang's dilution curve ``p / (1 - (1 - p) ** (k ** d))``.

    ``d = 0`` gives a perfectly sensitive pooled assay and ``d = 1`` gives
    the chance that a given unit is positive when its group holds at least
    one positive.
    """
    _check_p(p)
    _check_k(k)
    if not 0.0 <= d <= 1.0:
        raise ValueError(f"dilution index d must lie in [0, 1], got {d!r}")
    if k == 1 or d == 0.0:
        return 1.0
    # 1 - (1-p)^(k^d) without cancellation for small p
    denom = -math.expm1(k**d * math.log1p(-p))
    return min(1.0, p / denom)


@dataclass(frozen=True)
class Perfect:
    """Error-free assay at every group size."""

    prevalence_linked = False

    def __call__(self, p: float, k: int) -> float:
        _check_k(k)
        return 1.0

    def to_dict(self) -> dict[str, Any]:
        return {"family": "perfect"}


@dataclass(frozen=True)
class Hwang:
    d: float

    prevalence_linked = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.d <= 1.0:
            raise ValueError(f"dilution index d must lie in [0, 1], got {self.d!r}")

    def __call__(self, p: float, k: int) -> float:
        return hwang(p, k, self.d)

    def to_dict(self) -> dict[str, Any]:
        return {"family": "hwang", "d": self.d}


@dataclass(frozen=True)
class Linear:
    """``max(0, 1 - slope * (k - 1))``."""

    slope: float = 0.02

    prevalence_linked = False

    def __post_init__(self) -> None:
        if self.slope < 0:
            raise ValueError(f"slope must be non-negative, got {self.slope!r}")

    def __call__(self, p: float, k: int) -> float:
        _check_k(k)
        return max(0.0, 1.0 - self.slope * (k - 1))

    def to_dict(self) -> dict[str, Any]:
        return {"family": "linear", "slope": self.slope}


@dataclass(frozen=True)
class ExpStep:
    """``1 - 0.02 * 2 ** (k / 2)`` for ``k <= 11`` and 0 beyond.

    Note that this curve is below one already at ``k = 1`` (about 0.972).
    """

    prevalence_linked = False

    def __call__(self, p: float, k: int) -> float:
        _check_k(k)
        if k > 11:
            return 0.0
        return 1.0 - 0.02 * 2.0 ** (k / 2)

    def to_dict(self) -> dict[str, Any]:
        return {"family": "exp_step"}


@dataclass(frozen=True)
class Tabulated:
    """Lab-measured values; ``values[0]`` is the ``k = 1`` entry."""

    values: tuple[float, ...]

    prevalence_linked = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise ValueError("tabulated curve needs at least one value")
        for v in self.values:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"tabulated value outside [0, 1]: {v!r}")

    @property
    def k_max(self) -> int:
        return len(self.values)

    def __call__(self, p: float, k: int) -> float:
        _check_k(k)
        if k > len(self.values):
            raise ValueError(f"tabulated curve covers k <= {len(self.values)}, asked for k={k}")
        return self.values[k - 1]

    def to_dict(self) -> dict[str, Any]:
        return {"family": "tabulated", "values": list(self.values)}


Family = Union[Perfect, Hwang, Linear, ExpStep, Tabulated]


@dataclass(frozen=True)
class MisclassModel:
    sensitivity: Family = field(default_factory=Perfect)
    specificity: Family = field(default_factory=Perfect)

    @property
    def prevalence_linked(self) -> bool:
        return self.sensitivity.prevalence_linked or self.specificity.prevalence_linked

    def evaluate(self, p: float, k: int) -> tuple[float, float]:
        return self.sensitivity(p, k), self.specificity(p, k)

    def se(self, p: float, k: int) -> float:
        return self.sensitivity(p, k)

    def sp(self, p: float, k: int) -> float:
        return self.specificity(p, k)

    def to_dict(self) -> dict[str, Any]:
        return {"sensitivity": self.sensitivity.to_dict(), "specificity": self.specificity.to_dict()}


def evaluate(model: MisclassModel, p: float, k: int) -> tuple[float, float]:
    """Return ``(Se(k), Sp(k))`` for ``model`` at prevalence ``p``."""
    return model.evaluate(p, k)


_FAMILY_KEYS = {
    "perfect": set(),
    "hwang": {"d"},
    "linear": {"slope"},
    "exp_step": set(),
    "tabulated": {"values"},
}


def family_from_dict(doc: dict[str, Any]) -> Family:
    if not isinstance(doc, dict) or "family" not in doc:
        raise ValueError(f"family document must be an object with a 'family' key: {doc!r}")
    name = doc["family"]
    if name not in _FAMILY_KEYS:
        raise ValueError(f"unknown family {name!r}; expected one of {sorted(_FAMILY_KEYS)}")
    extra = set(doc) - {"family"} - _FAMILY_KEYS[name]
    if extra:
        raise ValueError(f"unknown fields for family {name!r}: {sorted(extra)}")
    if name == "perfect":
        return Perfect()
    if name == "hwang":
        return Hwang(float(doc["d"]))
    if name == "linear":
        return Linear(float(doc.get("slope", 0.02)))
    if name == "exp_step":
        return ExpStep()
    return Tabulated(tuple(doc["values"]))


def model_from_dict(doc: dict[str, Any]) -> MisclassModel:
    if not isinstance(doc, dict):
        raise ValueError(f"model document must be an object, got {doc!r}")
    if "family" in doc:
        return MisclassModel(sensitivity=family_from_dict(doc))
    extra = set(doc) - {"sensitivity", "specificity"}
    if extra:
        raise ValueError(f"unknown model fields: {sorted(extra)}")
    se = family_from_dict(doc["sensitivity"]) if "sensitivity" in doc else Perfect()
    sp = family_from_dict(doc["specificity"]) if "specificity" in doc else Perfect()
    return MisclassModel(sensitivity=se, specificity=sp)


# Sensitivity curves used in the validation-size study
SE1 = MisclassModel(Linear(0.02))
SE2 = MisclassModel(ExpStep())
SE3 = MisclassModel(Hwang(0.1))
SE4 = MisclassModel(Hwang(0.3))
