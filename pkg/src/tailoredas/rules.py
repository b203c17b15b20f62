"""Stabilized decision rules: one scoring function applied at every landmark."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def sign_decision(score) -> np.ndarray:
    """+1 (biopsy) where ``score >= 0``, else -1. Ties trigger a biopsy."""
    return np.where(np.asarray(score) >= 0, 1, -1)


@dataclass(frozen=True)
class ConstantRule:
    """Always biopsy (``+1``) or never biopsy (``-1``)."""

    decision: int = 1

    def __post_init__(self):
        if self.decision not in (1, -1):
            raise ValueError("decision must be +1 or -1")

    def decide(self, Z) -> np.ndarray:
        return np.full(np.shape(Z)[0], self.decision, dtype=int)

    def __neg__(self):
        return ConstantRule(-self.decision)


@dataclass(frozen=True)
class LinearRule:
    """``sign(intercept + coef . (z - mean) / sd)``.

    ``landmarks``, ``tau`` and ``xi`` record the setting the rule was
    trained for; they do not affect :meth:`decide`.
    """

    intercept: float
    coef: np.ndarray
    mean: np.ndarray | None = None
    sd: np.ndarray | None = None
    landmarks: tuple[float, ...] = ()
    tau: float | None = None
    xi: tuple[float | None, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float).ravel()
        p = coef.size
        mean = np.zeros(p) if self.mean is None else np.array(self.mean, dtype=float).ravel()
        sd = np.ones(p) if self.sd is None else np.array(self.sd, dtype=float).ravel()
        if mean.size != p or sd.size != p:
            raise ValueError("standardization vectors must match the coefficient length")
        if np.any(sd <= 0):
            raise ValueError("standardization scales must be positive")
        for name, arr in (("coef", coef), ("mean", mean), ("sd", sd)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "intercept", float(self.intercept))
        object.__setattr__(self, "landmarks", tuple(float(t) for t in self.landmarks))
        object.__setattr__(self, "xi", tuple(None if x is None else float(x) for x in self.xi))

    @property
    def n_features(self) -> int:
        return self.coef.size

    def score(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != self.n_features:
            raise ValueError(f"rule expects {self.n_features} features, got {Z.shape[1]}")
        return self.intercept + (((Z - self.mean) / self.sd) * self.coef).sum(axis=1)

    def decide(self, Z) -> np.ndarray:
        return sign_decision(self.score(Z))

    def __neg__(self):
        return Complement(self)

    def to_json(self) -> dict:
        return {
            "intercept": self.intercept,
            "coef": self.coef.tolist(),
            "standardize": {"mean": self.mean.tolist(), "sd": self.sd.tolist()},
            "landmarks": list(self.landmarks),
            "tau": self.tau,
            "xi": list(self.xi),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearRule":
        std = obj.get("standardize") or {}
        return cls(
            intercept=obj["intercept"],
            coef=obj["coef"],
            mean=std.get("mean"),
            sd=std.get("sd"),
            landmarks=tuple(obj.get("landmarks") or ()),
            tau=obj.get("tau"),
            xi=tuple(obj.get("xi") or ()),
            meta=obj.get("meta") or {},
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "LinearRule":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class Complement:
    """The opposite decision of ``rule`` everywhere, ties included.

    Negating the score would not do: ``sign(0) = +1`` either way.
    """

    rule: object

    def decide(self, Z) -> np.ndarray:
        return -self.rule.decide(Z)

    def __neg__(self):
        return self.rule
