"""Closed-form mathematics of the unbiased/biased combination estimator.

The combined estimate is the affine blend

    theta(lam) = lam * theta_b + (1 - lam) * theta_u

where ``theta_u`` is unbiased and ``theta_b`` carries an unknown bias ``mu``.
Everything here is a pure function of value types and is safe to call from
any thread.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidMomentsError

# Denominators at or below this are treated as exact zeros.
DENOM_FLOOR = 1e-30


class Rule(str, enum.Enum):
    """Identifiers of every combination rule the package knows about."""

    UNBIASED = "unbiased"
    BIASED = "biased"
    CORE = "core"
    SHRINKAGE_CLIPPED = "shrinkage_clipped"
    SHRINKAGE_UNCLIPPED = "shrinkage_unclipped"
    HYPOTHESIS_TEST = "hypothesis_test"
    ANCHORED_THRESHOLD = "anchored_threshold"
    CHENG = "cheng"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class MomentEstimates:
    """Variance of each estimator and their covariance (squared outcome units)."""

    var_u: float
    var_b: float
    cov_bu: float

    def __post_init__(self):
        vals = (self.var_u, self.var_b, self.cov_bu)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidMomentsError(f"moments must be finite, got {vals}")
        if self.var_u <= 0:
            raise InvalidMomentsError(f"var_u must be > 0, got {self.var_u}")
        if self.var_b < 0:
            raise InvalidMomentsError(f"var_b must be >= 0, got {self.var_b}")
        bound = math.sqrt(self.var_u * self.var_b)
        if abs(self.cov_bu) > bound * (1 + 1e-12) + DENOM_FLOOR:
            raise InvalidMomentsError(
                f"|cov_bu|={abs(self.cov_bu)} exceeds sqrt(var_u*var_b)={bound}")
        if self.var_diff <= DENOM_FLOOR:
            raise InvalidMomentsError(
                f"var_u + var_b - 2*cov_bu must be > 0, got {self.var_diff}")

    @property
    def var_diff(self) -> float:
        """Variance of ``theta_u - theta_b``."""
        return self.var_u + self.var_b - 2.0 * self.cov_bu

    @property
    def numerator(self) -> float:
        return self.var_u - self.cov_bu


@dataclass(frozen=True)
class EstimatorDraw:
    """One realization of the two estimators plus their estimated moments."""

    theta_u: float
    theta_b: float
    moments: MomentEstimates
    n: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not (math.isfinite(self.theta_u) and math.isfinite(self.theta_b)):
            raise ValueError("estimates must be finite")

    @property
    def diff(self) -> float:
        return self.theta_u - self.theta_b


@dataclass(frozen=True)
class CombinedEstimate:
    lam: float
    theta: float
    rule: Rule


@dataclass(frozen=True)
class ShapeParams:
    """Scale-free description of the moments: ``c = sd_b / sd_u`` and correlation ``rho``."""

    c: float
    rho: float

    def __post_init__(self):
        if self.c < 0 or not math.isfinite(self.c):
            raise InvalidMomentsError(f"c must be finite and >= 0, got {self.c}")
        if not -1.0 <= self.rho <= 1.0:
            raise InvalidMomentsError(f"rho must lie in [-1, 1], got {self.rho}")
        if self.spread <= DENOM_FLOOR:
            raise InvalidMomentsError(
                f"1 - 2*rho*c + c^2 must be > 0 (rho={self.rho}, c={self.c})")

    @property
    def spread(self) -> float:
        return 1.0 - 2.0 * self.rho * self.c + self.c ** 2

    @classmethod
    def from_moments(cls, m: MomentEstimates) -> "ShapeParams":
        c = math.sqrt(m.var_b / m.var_u)
        rho = 0.0 if m.var_b == 0 else m.cov_bu / math.sqrt(m.var_u * m.var_b)
        return cls(c=c, rho=min(1.0, max(-1.0, rho)))


def optimal_lambda(mu: float, m: MomentEstimates) -> float:
    """Oracle weight minimizing the MSE when the bias ``mu`` is known."""
    return m.numerator / (mu * mu + m.var_diff)


def mse_closed_form(lam: float, mu: float, m: MomentEstimates) -> float:
    """MSE of the blend with fixed weight ``lam`` under bias ``mu``."""
    return (lam * lam * (mu * mu + m.var_b)
            + (1.0 - lam) ** 2 * m.var_u
            + 2.0 * lam * (1.0 - lam) * m.cov_bu)


def lambda_hat(d: EstimatorDraw) -> float:
    """Plug-in weight: the oracle weight with ``mu**2`` replaced by the squared observed difference."""
    m = d.moments
    denom = d.diff ** 2 + m.var_diff
    if not denom > DENOM_FLOOR:
        raise DegenerateInputError(f"lambda_hat denominator is {denom}")
    return m.numerator / denom


def combine(d: EstimatorDraw, lam: float, rule: Rule = Rule.CORE) -> CombinedEstimate:
    if not math.isfinite(lam):
        raise ValueError(f"weight must be finite, got {lam}")
    return CombinedEstimate(lam=lam, theta=d.theta_u + lam * (d.theta_b - d.theta_u), rule=rule)


def combination_estimate(d: EstimatorDraw) -> CombinedEstimate:
    """The adaptive combination estimator: :func:`lambda_hat` followed by :func:`combine`."""
    return combine(d, lambda_hat(d), Rule.CORE)


def worst_case_bound(shape: ShapeParams, var_u: float) -> float:
    """Upper bound on the MSE over every possible bias, moments known."""
    if not var_u > 0:
        raise InvalidMomentsError(f"var_u must be > 0, got {var_u}")
    ratio = abs(1.0 - shape.rho * shape.c) / math.sqrt(shape.spread)
    return var_u * (1.0 + 0.5 * ratio) ** 2


def worst_case_bound_unknown_var(var_u: float, s_second_moment: float) -> float:
    """MSE bound when the moments are estimated.

    ``s_second_moment`` is ``E[(vu - cbu)**2 / (vu + vb - 2 cbu)]`` taken over
    the sampling distribution of the estimated moments.
    """
    if not var_u > 0:
        raise InvalidMomentsError(f"var_u must be > 0, got {var_u}")
    if s_second_moment < 0:
        raise ValueError(f"s_second_moment must be >= 0, got {s_second_moment}")
    return (math.sqrt(var_u) + 0.5 * math.sqrt(s_second_moment)) ** 2


def supremizing_bias(theta_u: float, theta_0: float, theta_b_centered: float,
                     m: MomentEstimates) -> tuple[float, float]:
    """Adversarial bias for a single draw.

    Maximizes ``2*lam(b)*D*(theta_u - theta_0) + lam(b)**2 * D**2`` over the
    bias ``b``, where ``D = b + theta_b_centered - theta_u`` and ``lam(b)``
    is the plug-in weight evaluated at that bias. Returns ``(b_star, sup)``.
    """
    su = m.numerator
    a = m.var_diff
    root = math.sqrt(a)
    err = theta_u - theta_0
    sign = 1.0 if su * err >= 0 else -1.0
    m_star = (theta_u - theta_b_centered) + sign * root
    sup_value = abs(su) * abs(err) / root + su * su / (4.0 * a)
    return m_star, sup_value


# -- vectorized forms used by the simulation engines -------------------------

def lambda_hat_array(diff, var_u, var_b, cov_bu):
    """Elementwise plug-in weight; callers screen degenerate rows beforehand."""
    diff = np.asarray(diff, dtype=float)
    return (var_u - cov_bu) / (diff * diff + (var_u + var_b - 2.0 * cov_bu))


def blend_array(theta_u, theta_b, lam):
    return theta_u + lam * (theta_b - theta_u)
