"""Plug-in variance/covariance estimates from per-sample influence values."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .combiner import DENOM_FLOOR, MomentEstimates
from .errors import DegenerateInputError, PositivityError


class InfluenceSample(NamedTuple):
    phi_u: float
    phi_b: float


@dataclass(frozen=True)
class InfluencePanel:
    """Influence values of both estimators, one entry per unit.

    Values are expected to be centered already; :func:`estimate_moments`
    does not subtract their mean.
    """

    phi_u: np.ndarray
    phi_b: np.ndarray

    def __post_init__(self):
        phi_u = np.asarray(self.phi_u, dtype=float)
        phi_b = np.asarray(self.phi_b, dtype=float)
        if phi_u.ndim != 1 or phi_u.shape != phi_b.shape:
            raise ValueError("phi_u and phi_b must be 1-D arrays of equal length")
        if phi_u.size < 2:
            raise ValueError(f"an influence panel needs n >= 2 samples, got {phi_u.size}")
        if not (np.all(np.isfinite(phi_u)) and np.all(np.isfinite(phi_b))):
            raise ValueError("influence values must be finite")
        object.__setattr__(self, "phi_u", phi_u)
        object.__setattr__(self, "phi_b", phi_b)

    @classmethod
    def from_samples(cls, samples: Iterable[tuple[float, float]]) -> "InfluencePanel":
        arr = np.asarray([tuple(s) for s in samples], dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @property
    def n(self) -> int:
        return int(self.phi_u.size)

    @property
    def samples(self) -> list[InfluenceSample]:
        return [InfluenceSample(float(u), float(b)) for u, b in zip(self.phi_u, self.phi_b)]


def estimate_moments(panel: InfluencePanel) -> MomentEstimates:
    """Estimate (var_u, var_b, cov_bu) of the two estimators.

    Second moments of the influence values use a 1/n divisor and are then
    scaled by 1/n once more to move from unit level to estimator level.
    """
    n = panel.n
    vu = float(np.mean(panel.phi_u * panel.phi_u)) / n
    vb = float(np.mean(panel.phi_b * panel.phi_b)) / n
    cbu = float(np.mean(panel.phi_u * panel.phi_b)) / n
    if vu + vb - 2.0 * cbu <= DENOM_FLOOR:
        raise DegenerateInputError(
            "estimated variance of theta_u - theta_b is zero; influence values coincide")
    if vu <= 0:
        raise DegenerateInputError("estimated variance of the unbiased estimator is zero")
    # Cauchy-Schwarz holds up to rounding; clamp so validation never trips on it.
    lim = np.sqrt(vu * vb)
    cbu = float(np.clip(cbu, -lim, lim))
    return MomentEstimates(vu, vb, cbu)


def ipw_influence(y, t, e_hat, mu1_hat, mu0_hat, theta_hat):
    """Centered influence value of the IPW difference-in-means estimator.

    Works elementwise on arrays. ``e_hat`` must lie strictly inside (0, 1).
    """
    e_hat = np.asarray(e_hat, dtype=float)
    if np.any((e_hat <= 0) | (e_hat >= 1)):
        raise PositivityError(f"treatment probability must be in (0, 1), got {e_hat}")
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    arm_mean = np.where(t == 1, mu1_hat, mu0_hat)
    weight = t / e_hat - (1.0 - t) / (1.0 - e_hat)
    out = (y - arm_mean) * weight + (mu1_hat - mu0_hat) - theta_hat
    return out if out.ndim else float(out)
