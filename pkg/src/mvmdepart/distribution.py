"""Discrete travel-time distributions: sorted (time, probability) atoms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

# relative tolerance under which two atom times are considered equal
TIME_EPS = 1e-12
# atoms lighter than this are dropped (and the rest renormalised)
DROP_MASS = 1e-15
MASS_TOL = 1e-9


def merge_atoms(times: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort atoms by time and merge equal times by summing probability."""
    times = np.asarray(times, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if times.size == 0:
        return times, probs
    order = np.argsort(times, kind="stable")
    times = times[order]
    probs = probs[order]
    gaps = np.diff(times) > TIME_EPS * np.maximum(1.0, np.abs(times[1:]))
    if gaps.all():
        return times, probs
    starts = np.concatenate(([0], np.flatnonzero(gaps) + 1))
    return times[starts], np.add.reduceat(probs, starts)


def drop_light(times: np.ndarray, probs: np.ndarray, threshold: float = DROP_MASS) -> tuple[np.ndarray, np.ndarray]:
    keep = probs >= threshold
    if keep.all():
        return times, probs
    total = probs.sum()
    times, probs = times[keep], probs[keep]
    return times, probs * (total / probs.sum())


@dataclass(frozen=True, eq=False)
class TravelTimeDistribution:
    """Finite list of (time, probability) atoms sorted strictly ascending."""

    times: np.ndarray
    probs: np.ndarray
    binned: bool = False
    bin_count: int | None = None

    def __post_init__(self) -> None:
        times, probs = merge_atoms(self.times, self.probs)
        if times.size == 0:
            raise ValueError("distribution needs at least one atom")
        if np.any(times < 0) or not np.all(np.isfinite(times)):
            raise ValueError("atom times must be finite and nonnegative")
        if np.any(probs < 0) or np.any(probs > 1 + MASS_TOL):
            raise ValueError("atom probabilities must lie in [0, 1]")
        times.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]], **kwargs) -> "TravelTimeDistribution":
        atoms = list(atoms)
        return cls(np.array([a[0] for a in atoms], dtype=float), np.array([a[1] for a in atoms], dtype=float), **kwargs)

    @classmethod
    def point(cls, time: float) -> "TravelTimeDistribution":
        return cls(np.array([float(time)]), np.array([1.0]))

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.probs.tolist()))

    def __len__(self) -> int:
        return self.times.size

    @property
    def mass(self) -> float:
        return float(self.probs.sum())

    @property
    def mean(self) -> float:
        return float(self.times @ self.probs / self.probs.sum())

    @property
    def support(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def cdf(self, x, atol: float = 0.0):
        """P(T <= x); vectorised over ``x``."""
        idx = np.searchsorted(self.times, np.asarray(x, dtype=float) + atol, side="right")
        cum = np.concatenate(([0.0], np.cumsum(self.probs)))
        out = cum[idx]
        return float(out) if np.ndim(out) == 0 else out

    def quantile(self, level: float) -> float:
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, level * cum[-1] - 1e-15, side="left")
        return float(self.times[min(idx, len(self.times) - 1)])

    def shift(self, offset: float) -> "TravelTimeDistribution":
        return TravelTimeDistribution(self.times + offset, self.probs.copy(), self.binned, self.bin_count)

    def allclose(self, other: "TravelTimeDistribution", atol: float = 1e-12) -> bool:
        return (
            len(self) == len(other)
            and np.allclose(self.times, other.times, rtol=TIME_EPS, atol=0)
            and np.allclose(self.probs, other.probs, rtol=0, atol=atol)
        )

    def __repr__(self) -> str:
        head = ", ".join(f"({t:.6g}, {p:.4g})" for t, p in self.atoms[:4])
        more = ", ..." if len(self) > 4 else ""
        return f"TravelTimeDistribution([{head}{more}], n={len(self)}, mass={self.mass:.12g})"
