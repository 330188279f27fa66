"""Physical parameters and the derived noise/localization scales.

Everything here is closed-form arithmetic on the trap and feedback
parameters: the ground-state spreads dX0 (center of mass) and dx0 (single
atom), the localization ratio eta, the stationary cm spread DXs, and the
eta-interval that decides which of the two cloud-size thresholds lies above
the other.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import ConfigError, NonPositiveRate, ZeroShiftRate

# Relative tolerance for the discrete/continuous consistency check and for
# regime boundary detection; pure arithmetic warrants a tight value.
_REL_TOL = 1e-12


@dataclass(frozen=True)
class TrapConfig:
    """Ideal-gas trap: N atoms of mass m in a harmonic potential of frequency omega."""

    atom_count: int
    mass: float = 1.0
    trap_freq: float = 1.0
    hbar: float = 1.0

    def __post_init__(self):
        if not isinstance(self.atom_count, int) or self.atom_count < 1:
            raise ConfigError(f"atom_count must be a positive integer, got {self.atom_count!r}")
        for name in ("mass", "trap_freq", "hbar"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be finite and > 0, got {v!r}")


@dataclass(frozen=True)
class FeedbackConfig:
    """Continuous feedback parameters, optionally tied to a discrete loop.

    shift_rate is the momentum-damping rate zeta, meas_resolution the rms
    time-integrated measurement resolution sigma.  meas_resolution = inf is
    allowed and turns the measurement back-action off (1/sigma^2 = 0).  When
    the discrete triple (rate, resolution0, gain) is given, it must satisfy
    sigma = sigma0/sqrt(gamma) and zeta = zeta0*gamma.
    """

    shift_rate: float
    meas_resolution: float
    rate: float | None = None
    resolution0: float | None = None
    gain: float | None = None

    def __post_init__(self):
        if not (self.shift_rate >= 0 and math.isfinite(self.shift_rate)):
            raise ConfigError(f"shift_rate must be finite and >= 0, got {self.shift_rate!r}")
        if not self.meas_resolution > 0:
            raise ConfigError(f"meas_resolution must be > 0, got {self.meas_resolution!r}")
        triple = (self.rate, self.resolution0, self.gain)
        if any(v is not None for v in triple):
            if any(v is None for v in triple):
                raise ConfigError("discrete feedback triple (rate, resolution0, gain) is incomplete")
            sigma, zeta = continuous_limit_params(self.rate, self.resolution0, self.gain)
            if not _close(sigma, self.meas_resolution) or not _close(zeta, self.shift_rate):
                raise ConfigError(
                    "discrete triple inconsistent with (shift_rate, meas_resolution): "
                    f"expected ({zeta!r}, {sigma!r})"
                )

    @classmethod
    def from_discrete(cls, rate: float, resolution0: float, gain: float) -> "FeedbackConfig":
        sigma, zeta = continuous_limit_params(rate, resolution0, gain)
        return cls(shift_rate=zeta, meas_resolution=sigma,
                   rate=rate, resolution0=resolution0, gain=gain)


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= _REL_TOL * max(abs(a), abs(b), 1e-300)


@dataclass(frozen=True)
class DerivedScales:
    """dX0: cm ground spread; dx0 = dX0*sqrt(N): single-atom spread; DXs: stationary cm spread."""

    dX0: float
    dx0: float
    eta: float
    DXs: float

    def to_dict(self) -> dict:
        return {"dX0": self.dX0, "dx0": self.dx0, "eta": self.eta, "DXs": self.DXs}


class RegimeKind(enum.Enum):
    # Which threshold sits above the stationary cm noise DXs.
    QS_THRESHOLD_ABOVE = "qs_threshold_above"        # DXs <= dx0
    SCHWARZ_THRESHOLD_ABOVE = "schwarz_threshold_above"  # DXs > dx0
    BOUNDARY = "boundary"


@dataclass(frozen=True)
class RegimeClass:
    kind: RegimeKind
    eta_low: float   # N - sqrt(N^2 - 1)
    eta_high: float  # N + sqrt(N^2 - 1)


def derive_scales(trap: TrapConfig, fb: FeedbackConfig) -> DerivedScales:
    """Closed-form derived scales for a given trap and feedback.

    dX0 = sqrt(hbar/(2 N m omega)), eta = dX0^2/(zeta sigma^2),
    DXs = dX0 sqrt((eta + 1/eta)/2), dx0 = dX0 sqrt(N).
    """
    zeta = fb.shift_rate
    if zeta == 0:
        raise ZeroShiftRate("eta is undefined for zeta = 0")
    t = trap
    dX0 = math.sqrt(t.hbar / (2.0 * t.atom_count * t.mass * t.trap_freq))
    eta = dX0 ** 2 / (zeta * fb.meas_resolution ** 2)
    if not (math.isfinite(eta) and eta > 0):
        raise ConfigError(f"eta not finite and positive: {eta!r}")
    DXs = dX0 * math.sqrt((eta + 1.0 / eta) / 2.0)
    dx0 = dX0 * math.sqrt(t.atom_count)
    return DerivedScales(dX0=dX0, dx0=dx0, eta=eta, DXs=DXs)


def classify_regime(n: int, eta: float) -> RegimeClass:
    """Place eta against the interval [N - sqrt(N^2-1), N + sqrt(N^2-1)].

    Inside the interval DXs <= dx0 (the single-atom threshold is the higher
    one); outside it DXs > dx0.  Endpoints are reported as BOUNDARY within
    relative 1e-12.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n!r}")
    if not eta > 0:
        raise ConfigError(f"eta must be > 0, got {eta!r}")
    root = math.sqrt(float(n) ** 2 - 1.0)
    lo, hi = n - root, n + root
    if _close(eta, lo) or _close(eta, hi):
        kind = RegimeKind.BOUNDARY
    elif lo < eta < hi:
        kind = RegimeKind.QS_THRESHOLD_ABOVE
    else:
        kind = RegimeKind.SCHWARZ_THRESHOLD_ABOVE
    return RegimeClass(kind=kind, eta_low=lo, eta_high=hi)


def continuous_limit_params(gamma: float, sigma0: float, zeta0: float) -> tuple[float, float]:
    """Map the discrete loop (gamma, sigma0, zeta0) to (sigma, zeta)."""
    if not gamma > 0:
        raise NonPositiveRate(f"gamma must be > 0, got {gamma!r}")
    if not sigma0 > 0:
        raise ConfigError(f"sigma0 must be > 0, got {sigma0!r}")
    if not zeta0 >= 0:
        raise ConfigError(f"zeta0 must be >= 0, got {zeta0!r}")
    return sigma0 / math.sqrt(gamma), zeta0 * gamma
