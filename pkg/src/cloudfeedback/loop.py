"""Discrete measure-and-kick feedback loop.

The physical loop alternates free harmonic rotation with instantaneous
events: a Gaussian measurement of the cm with per-shot resolution sigma0,
then a rigid shift of the cloud by -zeta0 * X_m.  Event rate gamma ties the
discrete parameters to the continuous ones via sigma = sigma0/sqrt(gamma),
zeta = zeta0*gamma.

Everything here is Gaussian: measurement outcomes are linear in the state
plus Gaussian noise, so conditional covariances follow a deterministic
Kalman recursion and only the conditional means are stochastic.  Trajectory
i always draws from its own stream (spawn key = trajectory index), and
chunk reductions happen in fixed index order, so results are bitwise
reproducible for any worker count.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .errors import ConfigError, MinResolution, NonConvergence, TimescaleViolation
from .moments import JointMoments
from .scales import FeedbackConfig, TrapConfig

_CHUNK = 1024


@dataclass(frozen=True)
class LoopConfig:
    gamma: float            # event rate
    sigma0: float           # per-shot measurement resolution
    zeta0: float            # per-shot kick gain
    schedule: str = "regular"
    rng_seed: int = 0
    trajectories: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError(f"gamma must be finite and > 0, got {self.gamma!r}")
        if not (math.isfinite(self.sigma0) and self.sigma0 > 0):
            raise ConfigError(f"sigma0 must be finite and > 0, got {self.sigma0!r}")
        if not (math.isfinite(self.zeta0) and self.zeta0 >= 0):
            raise ConfigError(f"zeta0 must be finite and >= 0, got {self.zeta0!r}")
        if self.schedule not in ("regular", "poisson"):
            raise ConfigError(f"schedule must be regular or poisson, got {self.schedule!r}")
        if self.trajectories < 1:
            raise ConfigError(f"trajectories must be >= 1, got {self.trajectories!r}")
        if not (0 <= int(self.rng_seed) < 2**64):
            raise ConfigError(f"rng_seed must fit in 64 bits, got {self.rng_seed!r}")

    def continuous_equivalent(self) -> FeedbackConfig:
        return FeedbackConfig(
            shift_rate=self.zeta0 * self.gamma,
            meas_resolution=self.sigma0 / math.sqrt(self.gamma),
        )


def _vectors(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(cm row h, back-action direction u, kick direction s) for dim 2 or 4."""
    if n == 1:
        return np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 0.0])
    h = np.array([1.0 / n, 0.0, (n - 1.0) / n, 0.0])
    u = np.array([0.0, 1.0 / n, 0.0, (n - 1.0) / n])
    s = np.array([1.0, 0.0, 1.0, 0.0])
    return h, u, s


def _rotation(trap: TrapConfig, dim: int, t: float) -> np.ndarray:
    w, m = trap.trap_freq, trap.mass
    c, sn = math.cos(w * t), math.sin(w * t)
    block = np.array([[c, sn / (m * w)], [-m * w * sn, c]])
    out = np.zeros((dim, dim))
    for k in range(0, dim, 2):
        out[k:k + 2, k:k + 2] = block
    return out


@dataclass(frozen=True)
class ConditionalGaussianState:
    """Gaussian filter state over (x, p) for N=1 or (x, p, Xbar, Pbar)."""

    mean: np.ndarray
    cov: np.ndarray
    n: int
    trap: TrapConfig

    def __post_init__(self):
        dim = 2 if self.n == 1 else 4
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.shape != (dim,) or cov.shape != (dim, dim):
            raise ConfigError(f"state for n={self.n} needs dim {dim}")
        scale = max(1.0, float(np.max(np.abs(cov))))
        if np.max(np.abs(cov - cov.T)) > 1e-8 * scale:
            raise ConfigError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(0.5 * (cov + cov.T))) < -1e-10 * scale:
            raise ConfigError("covariance must be PSD")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @classmethod
    def from_moments(cls, m: JointMoments, trap: TrapConfig) -> "ConditionalGaussianState":
        return cls(mean=m.mean.copy(), cov=m.cov.copy(), n=m.n, trap=trap)

    def rotate(self, t: float) -> "ConditionalGaussianState":
        r = _rotation(self.trap, self.mean.shape[0], t)
        return replace(self, mean=r @ self.mean, cov=r @ self.cov @ r.T)

    def cm_position(self) -> tuple[float, float]:
        """(mean, variance) of the measured cm coordinate."""
        h, _, _ = _vectors(self.n)
        return float(h @ self.mean), float(h @ self.cov @ h)


def _check_resolution(sigma0: float, prior_var: float):
    if not sigma0 > 0:
        raise ConfigError(f"sigma0 must be > 0, got {sigma0!r}")
    if prior_var > 0 and sigma0 < 1e-7 * math.sqrt(prior_var):
        raise MinResolution(
            f"sigma0 {sigma0!r} below machine-meaningful resolution for variance {prior_var!r}"
        )


def sample_measurement(state: ConditionalGaussianState, sigma0: float,
                       rng: np.random.Generator) -> float:
    mean, var = state.cm_position()
    _check_resolution(sigma0, var)
    return float(rng.normal(mean, math.sqrt(var + sigma0**2)))


def measurement_update(state: ConditionalGaussianState, x_m: float,
                       sigma0: float) -> ConditionalGaussianState:
    """Gaussian conditioning on the outcome plus per-shot back-action.

    Back-action enters as a deterministic momentum-variance increment
    hbar^2/(4 sigma0^2) along the collective direction; this is the exact
    unconditional effect of the Gaussian position channel and keeps the
    filter closed without sampling a momentum kick.
    """
    h, u, _ = _vectors(state.n)
    prior_var = float(h @ state.cov @ h)
    _check_resolution(sigma0, prior_var)
    if math.isinf(sigma0):
        return state
    innov_var = prior_var + sigma0**2
    gain = (state.cov @ h) / innov_var
    mean = state.mean + gain * (x_m - float(h @ state.mean))
    cov = state.cov - np.outer(gain, state.cov @ h)
    cov = cov + (state.trap.hbar**2 / (4.0 * sigma0**2)) * np.outer(u, u)
    return replace(state, mean=mean, cov=cov)


def kick(state: ConditionalGaussianState, x_m: float, zeta0: float) -> ConditionalGaussianState:
    _, _, s = _vectors(state.n)
    return replace(state, mean=state.mean - zeta0 * x_m * s)


def posterior_means(state: ConditionalGaussianState, x_m: np.ndarray,
                    sigma0: float) -> np.ndarray:
    """Vectorized conditional means for an array of outcomes (verification aid)."""
    h, _, _ = _vectors(state.n)
    prior_var = float(h @ state.cov @ h)
    _check_resolution(sigma0, prior_var)
    gain = (state.cov @ h) / (prior_var + sigma0**2)
    innov = np.asarray(x_m, dtype=float) - float(h @ state.mean)
    return state.mean[None, :] + innov[:, None] * gain[None, :]


def stationary_discrete(trap: TrapConfig, cfg: LoopConfig) -> np.ndarray:
    """Exact post-event fixed point of the unconditional covariance map.

    One period of the map: measure (identity on unconditional moments),
    kick by -zeta0*X_m (which injects sigma0 noise through the outcome),
    add back-action, rotate by 1/gamma.
    """
    n = trap.atom_count
    h, u, s = _vectors(n)
    dim = h.shape[0]
    r = _rotation(trap, dim, 1.0 / cfg.gamma)
    m = np.eye(dim) - cfg.zeta0 * np.outer(s, h)
    a = r @ m
    q = r @ (
        cfg.zeta0**2 * cfg.sigma0**2 * np.outer(s, s)
        + (trap.hbar**2 / (4.0 * cfg.sigma0**2)) * np.outer(u, u)
    ) @ r.T
    return solve_discrete_lyapunov(a, q)


@dataclass(frozen=True)
class LoopTrajectory:
    times: np.ndarray
    mean_X: np.ndarray
    var_X: np.ndarray
    mean_P: np.ndarray
    var_P: np.ndarray
    n_events: np.ndarray
    config: LoopConfig
    trap: TrapConfig

    def summary(self) -> dict:
        return {
            "gamma": self.config.gamma,
            "sigma0": self.config.sigma0,
            "zeta0": self.config.zeta0,
            "K": self.config.trajectories,
            "seed": int(self.config.rng_seed),
        }


def _chunk_bounds(k: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + _CHUNK, k)) for lo in range(0, k, _CHUNK)]


def _traj_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(index,)))


def _run_regular_chunk(lo, hi, seed, n_events, mean0, rot, gains, innov_sd,
                       h, hp, zeta0, s_dir, stride):
    """Means for trajectories [lo, hi); returns per-record sums and sq-sums."""
    k = hi - lo
    z = np.empty((k, n_events))
    for i in range(k):
        z[i] = _traj_rng(seed, lo + i).normal(size=n_events)
    means = np.tile(mean0, (k, 1))
    n_rec = n_events // stride + 1
    out = np.zeros((n_rec, 4))

    def record(row, m):
        cm = m @ h
        pt = m @ hp
        out[row] = (cm.sum(), (cm**2).sum(), pt.sum(), (pt**2).sum())

    record(0, means)
    row = 1
    for ev in range(n_events):
        means = means @ rot.T
        innov = innov_sd[ev] * z[:, ev]
        x_m = means @ h + innov
        means = means + np.outer(innov, gains[ev])
        means = means - zeta0 * np.outer(x_m, s_dir)
        if (ev + 1) % stride == 0:
            record(row, means)
            row += 1
    return out


def _run_poisson_chunk(lo, hi, seed, gamma, n_grid, dt_grid, mean0, cov0, trap,
                       sigma0, zeta0, h, u, s_dir, hp, buffer_len):
    """Per-trajectory covariances: events at exponential gaps, masked batch."""
    k = hi - lo
    w, ms, hbar = trap.trap_freq, trap.mass, trap.hbar
    dim = mean0.shape[0]
    gaps = np.empty((k, buffer_len))
    z = np.empty((k, buffer_len))
    for i in range(k):
        rng = _traj_rng(seed, lo + i)
        gaps[i] = rng.exponential(scale=1.0 / gamma, size=buffer_len)
        z[i] = rng.normal(size=buffer_len)
    times = np.cumsum(gaps, axis=1)
    if np.any(times[:, -1] <= n_grid * dt_grid):
        raise NonConvergence(f"event buffer {buffer_len} exhausted before t_max")

    means = np.tile(mean0, (k, 1))
    covs = np.tile(cov0, (k, 1, 1))
    t_now = np.zeros(k)
    ptr = np.zeros(k, dtype=int)
    back = hbar**2 / (4.0 * sigma0**2)
    out = np.zeros((n_grid + 1, 5))

    def batched_rotate(mask, dt):
        if not np.any(mask):
            return
        c, sn = np.cos(w * dt[mask]), np.sin(w * dt[mask])
        r = np.zeros((mask.sum(), dim, dim))
        for b in range(0, dim, 2):
            r[:, b, b] = c
            r[:, b, b + 1] = sn / (ms * w)
            r[:, b + 1, b] = -ms * w * sn
            r[:, b + 1, b + 1] = c
        means[mask] = np.einsum("ijk,ik->ij", r, means[mask])
        covs[mask] = np.einsum("ijk,ikl,iml->ijm", r, covs[mask], r)

    def record(row):
        cm = means @ h
        pt = means @ hp
        cv = np.einsum("j,ijk,k->i", h, covs, h)
        pv = np.einsum("j,ijk,k->i", hp, covs, hp)
        out[row] = (cm.sum(), (cm**2).sum() + cv.sum(),
                    pt.sum(), (pt**2).sum() + pv.sum(), ptr.sum())

    record(0)
    for g in range(1, n_grid + 1):
        t_edge = g * dt_grid
        while True:
            next_t = times[np.arange(k), np.minimum(ptr, buffer_len - 1)]
            active = (ptr < buffer_len) & (next_t <= t_edge)
            if not np.any(active):
                break
            batched_rotate(active, next_t - t_now)
            t_now[active] = next_t[active]
            idx = np.flatnonzero(active)
            hc = np.einsum("ijk,k->ij", covs[idx], h)
            prior = np.einsum("ij,j->i", hc, h)
            innov = prior + sigma0**2
            x_m = means[idx] @ h + np.sqrt(innov) * z[idx, ptr[idx]]
            gain = hc / innov[:, None]
            means[idx] += gain * (x_m - means[idx] @ h)[:, None]
            covs[idx] -= np.einsum("ij,ik->ijk", gain, hc)
            covs[idx] += back * np.outer(u, u)[None, :, :]
            means[idx] -= zeta0 * np.outer(x_m, s_dir)
            ptr[idx] += 1
        batched_rotate(np.ones(k, dtype=bool), t_edge - t_now)
        t_now[:] = t_edge
        record(g)
    return out


def run_ensemble(init: JointMoments, cfg: LoopConfig, trap: TrapConfig,
                 t_max: float, workers: int = 1, record_stride: int = 1) -> LoopTrajectory:
    """Ensemble-averaged loop trajectory recorded every record_stride events.

    Records are taken just after the event at t = k/gamma (the first event
    fires at 1/gamma).  For the regular schedule the conditional covariance
    path is outcome-independent and shared; for the poisson schedule each
    trajectory carries its own covariance and the grid still sits at the
    mean event spacing.
    """
    if t_max <= 0:
        raise ConfigError(f"t_max must be > 0, got {t_max!r}")
    if record_stride < 1:
        raise ConfigError(f"record_stride must be >= 1, got {record_stride!r}")
    if init.n != trap.atom_count:
        raise ConfigError(f"initial moments have n={init.n}, trap has {trap.atom_count}")
    if cfg.gamma < 20.0 * trap.trap_freq:
        warnings.warn(
            TimescaleViolation(
                f"gamma {cfg.gamma!r} below 20 omega: loop is not fast "
                "relative to the trap"
            )
        )
    n = trap.atom_count
    h, u, s_dir = _vectors(n)
    hp = np.array([0.0, 1.0]) if n == 1 else np.array([0.0, 1.0, 0.0, 1.0])
    kk = cfg.trajectories
    n_events = int(round(t_max * cfg.gamma))
    if n_events < 1:
        raise ConfigError("t_max shorter than one loop period")
    _check_resolution(cfg.sigma0, float(h @ init.cov @ h))

    chunks = _chunk_bounds(kk)
    if cfg.schedule == "regular":
        rot = _rotation(trap, h.shape[0], 1.0 / cfg.gamma)
        # shared conditional covariance path, recorded at stride boundaries
        cov = init.cov.copy()
        back = trap.hbar**2 / (4.0 * cfg.sigma0**2)
        gains = np.empty((n_events, h.shape[0]))
        innov_sd = np.empty(n_events)
        rec_cov = [(float(h @ cov @ h), float(hp @ cov @ hp))]
        for ev in range(n_events):
            cov = rot @ cov @ rot.T
            hc = cov @ h
            innov = float(h @ hc) + cfg.sigma0**2
            gains[ev] = hc / innov
            innov_sd[ev] = math.sqrt(innov)
            cov = cov - np.outer(gains[ev], hc) + back * np.outer(u, u)
            if (ev + 1) % record_stride == 0:
                rec_cov.append((float(h @ cov @ h), float(hp @ cov @ hp)))

        def job(bounds):
            lo, hi = bounds
            return _run_regular_chunk(lo, hi, cfg.rng_seed, n_events, init.mean,
                                      rot, gains, innov_sd, h, hp, cfg.zeta0,
                                      s_dir, record_stride)

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            partials = list(pool.map(job, chunks))
        sums = np.zeros_like(partials[0])
        for p in partials:
            sums += p
        n_rec = sums.shape[0]
        times = np.arange(n_rec) * (record_stride / cfg.gamma)
        mean_x = sums[:, 0] / kk
        mean_p = sums[:, 2] / kk
        spread_x = sums[:, 1] / kk - mean_x**2
        spread_p = sums[:, 3] / kk - mean_p**2
        cond = np.array(rec_cov)
        var_x = cond[:, 0] + spread_x
        var_p = cond[:, 1] + spread_p
        events = np.arange(n_rec, dtype=float) * record_stride
    else:
        n_grid = n_events // record_stride
        dt_grid = record_stride / cfg.gamma
        lam = t_max * cfg.gamma
        buffer_len = int(lam + 8.0 * math.sqrt(lam) + 16)

        def job(bounds):
            lo, hi = bounds
            return _run_poisson_chunk(lo, hi, cfg.rng_seed, cfg.gamma, n_grid,
                                      dt_grid, init.mean, init.cov, trap,
                                      cfg.sigma0, cfg.zeta0, h, u, s_dir, hp,
                                      buffer_len)

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            partials = list(pool.map(job, chunks))
        sums = np.zeros_like(partials[0])
        for p in partials:
            sums += p
        times = np.arange(n_grid + 1) * dt_grid
        mean_x = sums[:, 0] / kk
        mean_p = sums[:, 2] / kk
        var_x = sums[:, 1] / kk - mean_x**2
        var_p = sums[:, 3] / kk - mean_p**2
        events = sums[:, 4] / kk

    return LoopTrajectory(
        times=times, mean_X=mean_x, var_X=var_x, mean_P=mean_p, var_P=var_p,
        n_events=events, config=cfg, trap=trap,
    )


# ---------------------------------------------------------------------------
# Fock-space Kraus backend (N <= 2 cross-checks against the dense oracle)


def kraus_measure(rho: np.ndarray, x_hat: np.ndarray, x_m: float,
                  sigma0: float) -> np.ndarray:
    """rho -> E rho E / Tr, E = exp(-(X-x_m)^2 / (4 sigma0^2))."""
    vals, vecs = np.linalg.eigh(x_hat)
    e = vecs @ np.diag(np.exp(-((vals - x_m) ** 2) / (4.0 * sigma0**2))) @ vecs.conj().T
    out = e @ rho @ e
    tr = np.trace(out).real
    if tr <= 0:
        raise MinResolution(f"measurement weight underflow at x_m={x_m!r}")
    return out / tr


def kraus_kick(rho: np.ndarray, p_hat: np.ndarray, x_m: float, zeta0: float,
               hbar: float) -> np.ndarray:
    """Displace every position by -zeta0*x_m: U = exp(i zeta0 x_m P / hbar)."""
    vals, vecs = np.linalg.eigh(p_hat)
    phase = np.exp(1j * zeta0 * x_m * vals / hbar)
    unitary = vecs @ np.diag(phase) @ vecs.conj().T
    return unitary @ rho @ unitary.conj().T


def kraus_sample(rho: np.ndarray, x_hat: np.ndarray, sigma0: float,
                 rng: np.random.Generator) -> float:
    """Outcome from the Gaussian mixture over the X-spectrum of rho."""
    vals, vecs = np.linalg.eigh(x_hat)
    weights = np.einsum("ji,jk,ki->i", vecs.conj(), rho, vecs).real
    weights = np.clip(weights, 0.0, None)
    weights /= weights.sum()
    pick = rng.choice(len(vals), p=weights)
    return float(rng.normal(vals[pick], sigma0))
