"""Observable layer: collective quadrature spread and the two quantumness tests.

The central quantity is sigma_q_sq, the difference between the one-body and
collective quadrature second moments.  On fixed-N states it equals the mean
square spread of atoms about their center of mass, hence is nonnegative; the
computation nevertheless follows the defining combination verbatim, because
the negative regime (reachable with indefinite atom number) is exactly what
the toolkit is built to map out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import fock
from .errors import NegativeIntensity, NegativeRadicand
from .scales import DerivedScales


@dataclass(frozen=True)
class QuadratureHarmonics:
    """sigma_q_sq(t) = A + B cos(2 w t) + C sin(2 w t)."""

    A: float
    B: float
    C: float
    omega: float

    def value(self, t: float) -> float:
        th = 2.0 * self.omega * t
        return self.A + self.B * math.cos(th) + self.C * math.sin(th)

    def minimum(self) -> float:
        return self.A - math.hypot(self.B, self.C)

    def argmin(self) -> float:
        """Earliest nonnegative minimizer; the signal has period pi/omega."""
        phase = math.atan2(self.C, self.B) + math.pi
        period = math.pi / self.omega
        return (phase / (2.0 * self.omega)) % period


@dataclass(frozen=True)
class CriterionReport:
    min_dxa: float
    t_star: float
    qs_violated: bool
    schwarz_violated: bool
    dx0: float
    DXs: float
    min_sigma_q_sq: float
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "min_dxa": self.min_dxa,
            "t_star": self.t_star,
            "qs": self.qs_violated,
            "schwarz": self.schwarz_violated,
            "dx0": self.dx0,
            "DXs": self.DXs,
        }


def sigma_q_sq(state: fock.FockState | fock.StateEnsemble,
               basis: fock.OrbitalBasis, t: float, *,
               leak_tol: float = 1e-10) -> float:
    """(1/N) <T_{q^2(t)}> - (1/N^2) <T_{q(t)} T_{q(t)}>.

    Linear in the density operator, so mixtures average the two terms, not
    per-member values.
    """
    n = state.n
    q = fock.quadrature_matrix(basis, t)
    q2 = fock.quadrature_sq_matrix(basis, t)
    one_body = fock.few_body_expectation(state, [q2], leak_tol=leak_tol).real
    collective = fock.few_body_expectation(state, [q, q], leak_tol=leak_tol).real
    return one_body / n - collective / n**2


def quadrature_harmonics(state: fock.FockState | fock.StateEnsemble,
                         basis: fock.OrbitalBasis, *,
                         leak_tol: float = 1e-10) -> QuadratureHarmonics:
    """Exact three-point reconstruction of the pure second-harmonic signal."""
    w = basis.trap.trap_freq
    s0 = sigma_q_sq(state, basis, 0.0, leak_tol=leak_tol)
    s90 = sigma_q_sq(state, basis, math.pi / (2.0 * w), leak_tol=leak_tol)
    s45 = sigma_q_sq(state, basis, math.pi / (4.0 * w), leak_tol=leak_tol)
    a = 0.5 * (s0 + s90)
    return QuadratureHarmonics(A=a, B=0.5 * (s0 - s90), C=s45 - a, omega=w)


def asymptotic_cloud_size(scales: DerivedScales, h: QuadratureHarmonics,
                          t: float) -> float:
    """Cloud size once the center of mass has settled: sqrt(DXs^2 + sigma_q_sq(t))."""
    rad = scales.DXs**2 + h.value(t)
    if rad < 0.0:
        raise NegativeRadicand(
            f"DXs^2 + sigma_q_sq(t) = {rad!r} < 0; asymptotic form does not apply"
        )
    return math.sqrt(rad)


def evaluate_criteria(scales: DerivedScales, h: QuadratureHarmonics) -> CriterionReport:
    """Both quantumness flags from the closed-form breathing minimum.

    Strict inequalities; an equality case stays unflagged and is surfaced in
    notes instead.
    """
    min_sigma = h.minimum()
    t_star = h.argmin()
    rad = scales.DXs**2 + min_sigma
    if rad < 0.0:
        raise NegativeRadicand(
            f"DXs^2 + min sigma_q_sq = {rad!r} < 0; asymptotic form does not apply"
        )
    min_dxa = math.sqrt(rad)

    notes = []
    scale = abs(h.A) + math.hypot(h.B, h.C) + scales.dx0**2
    if min_sigma == 0.0 or abs(min_sigma) < 1e-12 * scale:
        notes.append("min sigma_q_sq at the classical boundary")
    if abs(min_dxa - scales.dx0) < 1e-12 * scales.dx0:
        notes.append("min cloud size at the ground-state boundary")

    return CriterionReport(
        min_dxa=min_dxa,
        t_star=t_star,
        qs_violated=min_dxa < scales.dx0,
        schwarz_violated=min_sigma < 0.0,
        dx0=scales.dx0,
        DXs=scales.DXs,
        min_sigma_q_sq=min_sigma,
        notes=tuple(notes),
    )


def schwarz_identity_check(state: fock.FockState | fock.StateEnsemble,
                           basis: fock.OrbitalBasis, t: float, *,
                           leak_tol: float = 1e-10) -> tuple[float, float, float]:
    """(one-body rms spread, cm rms spread, identity residual) at time t.

    The one-body spread is the density-weighted quadrature spread
    (1/N) Tr[rho1 q^2] - ((1/N) Tr[rho1 q])^2; with that reading
    sigma_q_sq = Dq^2 - DQ_cm^2 holds exactly (the shared means cancel).
    """
    n = state.n
    rho = fock.one_body_density(state).matrix
    q = fock.quadrature_matrix(basis, t)
    q2 = fock.quadrature_sq_matrix(basis, t)

    mean_q = np.trace(q.matrix @ rho).real / n
    dq_sq = np.trace(q2.matrix @ rho).real / n - mean_q**2

    mean_cm = fock.few_body_expectation(state, [q], leak_tol=leak_tol).real / n
    cm_sq = fock.few_body_expectation(state, [q, q], leak_tol=leak_tol).real / n**2
    dcm_sq = cm_sq - mean_cm**2

    residual = sigma_q_sq(state, basis, t, leak_tol=leak_tol) - (dq_sq - dcm_sq)
    return math.sqrt(max(dq_sq, 0.0)), math.sqrt(max(dcm_sq, 0.0)), residual


def classical_schwarz_check(intensity: np.ndarray, q_values: np.ndarray,
                            grid: np.ndarray) -> tuple[float, float, bool]:
    """Schwarz test for a factorized classical pair distribution.

    With P(x, x') = I(x) I(x') / (int I)^2 the correlator side reduces to the
    squared mean, so (lhs, rhs) = (mean^2, second moment); any nonnegative
    intensity satisfies lhs <= rhs.
    """
    intensity = np.asarray(intensity, dtype=float)
    q_values = np.asarray(q_values, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if np.any(intensity < 0.0):
        raise NegativeIntensity(f"min intensity {intensity.min()!r} < 0")
    total = np.trapezoid(intensity, grid)
    if total <= 0.0:
        raise NegativeIntensity("intensity integrates to zero")
    mean = np.trapezoid(q_values * intensity, grid) / total
    second = np.trapezoid(q_values**2 * intensity, grid) / total
    lhs = mean**2
    rhs = second
    return lhs, rhs, lhs <= rhs + 1e-12 * max(1.0, abs(rhs))
