"""N-boson states over the first M harmonic-oscillator orbitals.

Exact finite representation: occupation-number states with fixed total N,
one-body operators as M x M matrices in the orbital basis, few-body
expectation values by sparse operator application, and real-space densities
via the stable Hermite-function recurrence.

Analytic matrix kinds exist for x^2, p^2, sym(xp) and q^2(t) because squaring
the truncated x matrix loses the top diagonal elements; diagonal second
moments must be truncation-exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    CutoffTooTight,
    GridTooCoarse,
    NotNormalized,
    TruncationLeak,
)
from .scales import TrapConfig

_NORM_TOL = 1e-12


@dataclass(frozen=True)
class OrbitalBasis:
    """First mode_count harmonic-oscillator orbitals of the given trap."""

    mode_count: int
    trap: TrapConfig

    def __post_init__(self):
        if not (isinstance(self.mode_count, int) and self.mode_count >= 2):
            raise ConfigError(f"mode_count must be an integer >= 2, got {self.mode_count!r}")

    @property
    def length_scale(self) -> float:
        t = self.trap
        return math.sqrt(t.hbar / (t.mass * t.trap_freq))


@dataclass(frozen=True)
class OneBodyOperator:
    matrix: np.ndarray
    hermitian: bool
    kind: str = "custom"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError(f"one-body matrix must be square, got shape {m.shape}")
        object.__setattr__(self, "matrix", m)
        if self.hermitian and np.max(np.abs(m - m.conj().T)) > 1e-14 * max(1.0, np.max(np.abs(m))):
            raise ConfigError(f"operator tagged hermitian is not (kind={self.kind})")


def _ladder_amp(basis: OrbitalBasis) -> float:
    # sqrt(hbar/(2 m omega)): scale of x between neighboring orbitals
    t = basis.trap
    return math.sqrt(t.hbar / (2.0 * t.mass * t.trap_freq))


def position_matrix(basis: OrbitalBasis) -> OneBodyOperator:
    m = basis.mode_count
    x = np.zeros((m, m), dtype=complex)
    c = _ladder_amp(basis)
    for n in range(m - 1):
        x[n, n + 1] = x[n + 1, n] = c * math.sqrt(n + 1)
    return OneBodyOperator(x, hermitian=True, kind="x")


def momentum_matrix(basis: OrbitalBasis) -> OneBodyOperator:
    # sign convention fixed by [x, p] = i*hbar on the untruncated algebra
    m = basis.mode_count
    t = basis.trap
    p = np.zeros((m, m), dtype=complex)
    c = math.sqrt(t.hbar * t.mass * t.trap_freq / 2.0)
    for n in range(m - 1):
        p[n, n + 1] = -1j * c * math.sqrt(n + 1)
        p[n + 1, n] = 1j * c * math.sqrt(n + 1)
    return OneBodyOperator(p, hermitian=True, kind="p")


def position_sq_matrix(basis: OrbitalBasis) -> OneBodyOperator:
    # (hbar/2 m omega) (a^2 + a+^2 + 2 a+a + 1); diagonal exact at any M
    m = basis.mode_count
    s = _ladder_amp(basis) ** 2
    out = np.zeros((m, m), dtype=complex)
    for n in range(m):
        out[n, n] = s * (2 * n + 1)
    for n in range(m - 2):
        out[n, n + 2] = out[n + 2, n] = s * math.sqrt((n + 1) * (n + 2))
    return OneBodyOperator(out, hermitian=True, kind="x^2")


def momentum_sq_matrix(basis: OrbitalBasis) -> OneBodyOperator:
    m = basis.mode_count
    t = basis.trap
    s = t.hbar * t.mass * t.trap_freq / 2.0
    out = np.zeros((m, m), dtype=complex)
    for n in range(m):
        out[n, n] = s * (2 * n + 1)
    for n in range(m - 2):
        out[n, n + 2] = out[n + 2, n] = -s * math.sqrt((n + 1) * (n + 2))
    return OneBodyOperator(out, hermitian=True, kind="p^2")


def sym_xp_matrix(basis: OrbitalBasis) -> OneBodyOperator:
    # (xp + px)/2 = i (hbar/2) (a+^2 - a^2)
    m = basis.mode_count
    s = basis.trap.hbar / 2.0
    out = np.zeros((m, m), dtype=complex)
    for n in range(m - 2):
        out[n, n + 2] = -1j * s * math.sqrt((n + 1) * (n + 2))
        out[n + 2, n] = 1j * s * math.sqrt((n + 1) * (n + 2))
    return OneBodyOperator(out, hermitian=True, kind="sym(xp)")


def quadrature_matrix(basis: OrbitalBasis, t: float) -> OneBodyOperator:
    """q(t) = x cos(wt) + (p/m w) sin(wt), the freely rotated position."""
    w = basis.trap.trap_freq
    x = position_matrix(basis).matrix
    p = momentum_matrix(basis).matrix
    q = x * math.cos(w * t) + p * (math.sin(w * t) / (basis.trap.mass * w))
    return OneBodyOperator(q, hermitian=True, kind="q(t)")


def quadrature_sq_matrix(basis: OrbitalBasis, t: float) -> OneBodyOperator:
    """Analytic q^2(t): ladder form keeps the diagonal truncation-exact.

    q^2(t) = (hbar/2 m w) (a^2 e^{-2iwt} + a+^2 e^{2iwt} + 2 a+a + 1).
    """
    m = basis.mode_count
    w = basis.trap.trap_freq
    s = _ladder_amp(basis) ** 2
    phase = np.exp(-2j * w * t)
    out = np.zeros((m, m), dtype=complex)
    for n in range(m):
        out[n, n] = s * (2 * n + 1)
    for n in range(m - 2):
        amp = s * math.sqrt((n + 1) * (n + 2))
        out[n, n + 2] = amp * phase
        out[n + 2, n] = amp * np.conj(phase)
    return OneBodyOperator(out, hermitian=True, kind="q^2(t)")


# ---------------------------------------------------------------------------
# occupation basis


def occupations(n: int, m: int) -> list[tuple[int, ...]]:
    """All length-m occupation vectors summing to n, lexicographic order."""
    out = []

    def rec(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + (remaining,))
            return
        for k in range(remaining + 1):
            rec(prefix + (k,), remaining - k, slots - 1)

    rec((), n, m)
    return out


def sector_dimension(n: int, m: int) -> int:
    return math.comb(n + m - 1, n)


@dataclass(frozen=True)
class FockState:
    """Sparse fixed-N state: occupation vector -> complex amplitude."""

    n: int
    m: int
    amp: dict[tuple[int, ...], complex]

    def __post_init__(self):
        norm_sq = 0.0
        for occ, a in self.amp.items():
            if len(occ) != self.m or any(k < 0 for k in occ) or sum(occ) != self.n:
                raise ConfigError(f"occupation {occ} invalid for (n={self.n}, m={self.m})")
            norm_sq += abs(a) ** 2
        if abs(norm_sq - 1.0) > _NORM_TOL:
            raise NotNormalized(f"state norm^2 = {norm_sq!r}")

    def top_orbital_weight(self) -> float:
        return sum(abs(a) ** 2 for occ, a in self.amp.items() if occ[self.m - 1] > 0)


@dataclass(frozen=True)
class StateEnsemble:
    """Convex mixture of FockStates sharing (n, m)."""

    members: tuple[tuple[float, FockState], ...]
    truncation_loss: float = 0.0

    def __post_init__(self):
        if not self.members:
            raise ConfigError("ensemble must have at least one member")
        tot = 0.0
        n, m = self.members[0][1].n, self.members[0][1].m
        for w, st in self.members:
            if w < 0:
                raise ConfigError(f"ensemble weight {w!r} negative")
            if (st.n, st.m) != (n, m):
                raise ConfigError("ensemble members must share (n, m)")
            tot += w
        if abs(tot - 1.0) > _NORM_TOL:
            raise NotNormalized(f"ensemble weights sum to {tot!r}")

    @property
    def n(self) -> int:
        return self.members[0][1].n

    @property
    def m(self) -> int:
        return self.members[0][1].m


@dataclass(frozen=True)
class OneBodyDensity:
    """rho1[n][m] = <a+_m a_n>; trace N."""

    matrix: np.ndarray
    n: int


# ---------------------------------------------------------------------------
# state constructors


def basis_state(occ: tuple[int, ...] | list[int]) -> FockState:
    occ = tuple(int(k) for k in occ)
    return FockState(n=sum(occ), m=len(occ), amp={occ: 1.0 + 0.0j})


def state_from_amplitudes(n: int, m: int, vec: np.ndarray) -> FockState:
    """Dense coefficient vector over occupations(n, m) -> sparse state."""
    occs = occupations(n, m)
    if len(vec) != len(occs):
        raise ConfigError(f"expected {len(occs)} amplitudes, got {len(vec)}")
    amp = {occ: complex(a) for occ, a in zip(occs, vec) if a != 0}
    return FockState(n=n, m=m, amp=amp)


def condensate_state(orbital: np.ndarray, n: int) -> FockState:
    """All n atoms in one orbital: (sum_k c_k a+_k)^n |vac> / sqrt(n!)."""
    c = np.asarray(orbital, dtype=complex)
    if abs(np.vdot(c, c).real - 1.0) > _NORM_TOL:
        raise NotNormalized(f"orbital norm^2 = {np.vdot(c, c).real!r}")
    m = len(c)
    amp = {}
    for occ in occupations(n, m):
        # multinomial amplitude sqrt(n!/prod k!) prod c^k
        coeff = math.sqrt(math.factorial(n) / math.prod(math.factorial(k) for k in occ))
        a = coeff
        for ck, k in zip(c, occ):
            if k:
                a = a * ck ** k
        if a != 0:
            amp[occ] = complex(a)
    return FockState(n=n, m=m, amp=amp)


def displaced_orbital(basis: OrbitalBasis, d: float) -> np.ndarray:
    """Ground orbital displaced by d, i.e. coherent amplitudes, renormalized.

    Truncation leak is the caller's concern; keep |d| well under the basis
    reach sqrt(2 M) * ladder scale.
    """
    t = basis.trap
    alpha = d * math.sqrt(t.mass * t.trap_freq / (2.0 * t.hbar))
    c = np.zeros(basis.mode_count, dtype=complex)
    c[0] = 1.0
    for k in range(1, basis.mode_count):
        c[k] = c[k - 1] * alpha / math.sqrt(k)
    return c / math.sqrt(np.vdot(c, c).real)


def squeezed_orbital(basis: OrbitalBasis, r: float) -> np.ndarray:
    """Squeezed ground orbital: x variance e^{-2r}, p variance e^{+2r} scaled."""
    c = np.zeros(basis.mode_count, dtype=complex)
    c[0] = 1.0
    th = math.tanh(r)
    for k in range(2, basis.mode_count, 2):
        # c_{2j} = (-tanh r)^j sqrt((2j)!)/(2^j j!) up to overall normalization
        c[k] = c[k - 2] * (-th) * math.sqrt((k - 1) * k) / k
    return c / math.sqrt(np.vdot(c, c).real)


def thermal_ensemble(basis: OrbitalBasis, temperature: float, n: int,
                     energy_cutoff: float, kB: float = 1.0) -> StateEnsemble:
    """Canonical fixed-N ensemble over occupation configurations.

    Weights ~ exp(-E/kB T) with E = sum_k n_k hbar w (k + 1/2), truncated to
    configurations inside the basis with E <= energy_cutoff.  The retained
    weight is measured against the exact partition function of the
    untruncated oscillator ladder (standard N-boson recursion), so the
    reported truncation_loss bounds everything the cutoff discards.
    """
    if temperature < 0:
        raise ConfigError(f"temperature must be >= 0, got {temperature!r}")
    t = basis.trap
    hw = t.hbar * t.trap_freq
    e0 = n * hw / 2.0
    ground = tuple([n] + [0] * (basis.mode_count - 1))
    if e0 > energy_cutoff:
        raise CutoffTooTight(f"cutoff {energy_cutoff!r} below ground energy {e0!r}")
    if temperature == 0:
        return StateEnsemble(members=((1.0, basis_state(ground)),), truncation_loss=0.0)

    beta = 1.0 / (kB * temperature)
    kept = []
    for occ in occupations(n, basis.mode_count):
        e = sum(k_occ * hw * (j + 0.5) for j, k_occ in enumerate(occ))
        if e <= energy_cutoff:
            kept.append((occ, math.exp(-beta * (e - e0))))

    # exact Z * e^{beta e0} by the canonical boson recursion, overflow-free
    z = [1.0]
    for j in range(1, n + 1):
        acc = 0.0
        for k in range(1, j + 1):
            zk = 1.0 / (1.0 - math.exp(-k * beta * hw))
            acc += zk * z[j - k]
        z.append(acc / j)
    z_exact = z[n]

    retained = sum(w for _, w in kept) / z_exact
    if retained < 0.999:
        raise CutoffTooTight(f"retained weight {retained:.6f} < 0.999")
    tot = sum(w for _, w in kept)
    members = tuple((w / tot, basis_state(occ)) for occ, w in kept)
    return StateEnsemble(members=members, truncation_loss=1.0 - retained)


# ---------------------------------------------------------------------------
# expectations


def _apply_one_body(matrix: np.ndarray, vec: dict) -> dict:
    """Apply sum_ij A[i][j] a+_i a_j to a sparse amplitude map."""
    rows, cols = np.nonzero(matrix)
    out: dict = {}
    for occ, c in vec.items():
        for i, j in zip(rows, cols):
            nj = occ[j]
            if nj == 0:
                continue
            if i == j:
                coeff = matrix[i, j] * nj
                new_occ = occ
            else:
                coeff = matrix[i, j] * math.sqrt(nj * (occ[i] + 1))
                lst = list(occ)
                lst[j] -= 1
                lst[i] += 1
                new_occ = tuple(lst)
            out[new_occ] = out.get(new_occ, 0.0) + coeff * c
    return out


def _inner(a: dict, b: dict) -> complex:
    """<a|b> over sparse amplitude maps."""
    if len(a) > len(b):
        return complex(np.conj(_inner(b, a)))
    return complex(sum(np.conj(c) * b[occ] for occ, c in a.items() if occ in b))


def _top_weight(vec: dict, m: int) -> float:
    return sum(abs(c) ** 2 for occ, c in vec.items() if occ[m - 1] > 0)


def few_body_expectation(state: FockState | StateEnsemble,
                         ops: list[OneBodyOperator], *,
                         leak_tol: float = 1e-10) -> complex:
    """<A1 A2 (A3)> with Ak = sum A[i][j] a+_i a_j, in the written order.

    Leak accounting: an operator application loses exactly the flow out of
    the truncated basis, which only originates from top-orbital occupation of
    its input.  The loss matters when later applications can fold it back
    inside; the final application's out-flow is annihilated by the truncated
    bra.  Hence every application except the last requires its input to be
    clean at the top orbital (weight <= leak_tol, normalized).
    """
    if not 1 <= len(ops) <= 3:
        raise ConfigError(f"ops list must have 1..3 entries, got {len(ops)}")
    if isinstance(state, StateEnsemble):
        return sum(w * few_body_expectation(st, ops, leak_tol=leak_tol)
                   for w, st in state.members if w > 0)
    for op in ops:
        if op.matrix.shape[0] != state.m:
            raise ConfigError("operator dimension does not match state mode count")
    vec = state.amp
    for step, op in enumerate(reversed(ops)):
        if step < len(ops) - 1:
            w = _top_weight(vec, state.m)
            norm = sum(abs(c) ** 2 for c in vec.values())
            if norm > 0 and w > leak_tol * norm:
                raise TruncationLeak(
                    f"top-orbital weight {w / norm:.3e} before application {step + 1}"
                )
        vec = _apply_one_body(op.matrix, vec)
    return complex(_inner(state.amp, vec))


def one_body_density(state: FockState | StateEnsemble) -> OneBodyDensity:
    """rho1[n][m] = <a+_m a_n>, ensemble-averaged for mixtures."""
    if isinstance(state, StateEnsemble):
        acc = np.zeros((state.m, state.m), dtype=complex)
        for w, st in state.members:
            if w > 0:
                acc += w * one_body_density(st).matrix
        return OneBodyDensity(matrix=acc, n=state.n)
    m = state.m
    rho = np.zeros((m, m), dtype=complex)
    for occ, c in state.amp.items():
        for nn in range(m):
            if occ[nn] == 0:
                continue
            for mm in range(m):
                if mm == nn:
                    rho[nn, mm] += occ[nn] * abs(c) ** 2
                    continue
                lst = list(occ)
                lst[nn] -= 1
                lst[mm] += 1
                other = state.amp.get(tuple(lst))
                if other is not None:
                    # <a+_mm a_nn>: annihilate nn, create mm, overlap bra side
                    rho[nn, mm] += np.conj(other) * math.sqrt(occ[nn] * (occ[mm] + 1)) * c
    return OneBodyDensity(matrix=rho, n=state.n)


# ---------------------------------------------------------------------------
# real-space densities


def hermite_functions(grid: np.ndarray, m: int, basis: OrbitalBasis) -> np.ndarray:
    """psi_n(x) for n < m on the grid, shape (len(grid), m).

    Upward recurrence on normalized functions (no factorials), stable to
    n = 60: psi_0 = pi^(-1/4) e^(-u^2/2), psi_{n+1} = sqrt(2/(n+1)) u psi_n
    - sqrt(n/(n+1)) psi_{n-1}, with u = x / length_scale.
    """
    ell = basis.length_scale
    u = np.asarray(grid, dtype=float) / ell
    out = np.zeros((len(u), m))
    out[:, 0] = math.pi ** -0.25 * np.exp(-0.5 * u * u)
    if m > 1:
        out[:, 1] = math.sqrt(2.0) * u * out[:, 0]
    for k in range(2, m):
        out[:, k] = math.sqrt(2.0 / k) * u * out[:, k - 1] - math.sqrt((k - 1) / k) * out[:, k - 2]
    return out / math.sqrt(ell)


def _check_grid(grid: np.ndarray):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ConfigError("grid must be 1-d and strictly increasing")
    return grid


def density_profile(rho1: OneBodyDensity, grid: np.ndarray, basis: OrbitalBasis) -> np.ndarray:
    """P(x) = (1/N) sum_nm rho1[n][m] psi_n(x) psi_m(x); unit trapezoid norm."""
    grid = _check_grid(grid)
    psi = hermite_functions(grid, basis.mode_count, basis)
    p = np.einsum("gn,nm,gm->g", psi, rho1.matrix, psi).real / rho1.n
    norm = np.trapezoid(p, grid)
    if abs(norm - 1.0) > 1e-4:
        raise GridTooCoarse(f"density norm {norm!r} off by more than 1e-4")
    return p


def pair_distribution(state: FockState, grid: np.ndarray, basis: OrbitalBasis,
                      leak_tol: float = 1e-10) -> np.ndarray:
    """P(x, x') = <n(x) n(x')>/N^2 with n(x) the density kernel at x.

    The grid kernel K(x)[n][m] = psi_n(x) psi_m(x) is a one-body operator, so
    P(x, x') = <K(x) K(x')> / N^2; evaluated through the same sparse
    application path as few_body_expectation, factored as inner products of
    K(x)|state> vectors (K is real symmetric).
    """
    grid = _check_grid(grid)
    w0 = _top_weight(state.amp, state.m)
    if w0 > leak_tol:
        raise TruncationLeak(f"state top-orbital weight {w0:.3e}")
    psi = hermite_functions(grid, state.m, basis)
    applied = []
    for g in range(len(grid)):
        kernel = np.outer(psi[g], psi[g]).astype(complex)
        applied.append(_apply_one_body(kernel, state.amp))
    out = np.zeros((len(grid), len(grid)))
    for a in range(len(grid)):
        va = applied[a]
        for b in range(a, len(grid)):
            val = _inner(va, applied[b]).real
            out[a, b] = val
            out[b, a] = val
    return out / state.n ** 2


# ---------------------------------------------------------------------------
# serialization (state files)


def state_to_dict(state: FockState) -> dict:
    terms = [{"occ": list(occ), "re": complex(a).real, "im": complex(a).imag}
             for occ, a in sorted(state.amp.items())]
    return {"n": state.n, "m": state.m, "terms": terms}


def state_from_dict(doc: dict) -> FockState:
    try:
        n, m = int(doc["n"]), int(doc["m"])
        amp = {tuple(int(k) for k in t["occ"]): complex(t["re"], t.get("im", 0.0))
               for t in doc["terms"]}
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed state document: {exc}") from exc
    return FockState(n=n, m=m, amp=amp)


def ensemble_to_dict(ens: StateEnsemble) -> dict:
    return {
        "n": ens.n,
        "m": ens.m,
        "members": [{"weight": w, "terms": state_to_dict(st)["terms"]}
                    for w, st in ens.members],
        "truncation_loss": ens.truncation_loss,
    }


def ensemble_from_dict(doc: dict) -> StateEnsemble:
    try:
        n, m = int(doc["n"]), int(doc["m"])
        members = tuple(
            (float(mem["weight"]),
             state_from_dict({"n": n, "m": m, "terms": mem["terms"]}))
            for mem in doc["members"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed ensemble document: {exc}") from exc
    return StateEnsemble(members=members, truncation_loss=float(doc.get("truncation_loss", 0.0)))
