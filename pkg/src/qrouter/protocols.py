"""Entangling-state, three-qubit-gate and analog-dynamics procedures."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import minimize, minimize_scalar
from scipy.special import j0

from .qsim import (
    LindbladModel,
    OperatorExpr,
    QuantumState,
    SimulationError,
    apply_unitary,
    evolve,
    fidelity,
    is_unitary,
    mhz,
    propagator,
    trajectory,
    unitary_from_hermitian,
    x90,
    xgate,
)


class ProtocolError(ValueError):
    """Invalid protocol configuration."""


# ---------------------------------------------------------------------------
# gate targets

CSWAP_PHASE_LABELS = ("001", "010", "011", "100", "101", "110", "111")


@dataclass(frozen=True)
class GateTarget:
    """Ideal gate with its qubit assignment.

    For CSWAP targets the seven phases and the frame mismatch
    ``delta23_mhz * t_b_ns`` enter the matrix; the first listed qubit is the
    control.
    """

    name: str
    unitary: np.ndarray
    qubits: tuple[str, ...]
    phases: tuple[float, ...] = ()
    delta23_mhz: float = 0.0
    t_b_ns: float = 0.0

    def __post_init__(self):
        u = np.asarray(self.unitary, dtype=complex)
        if u.shape != (2 ** len(self.qubits),) * 2:
            raise ProtocolError(f"{self.name}: unitary shape {u.shape} does not match {len(self.qubits)} qubits")
        if not is_unitary(u):
            raise ProtocolError(f"{self.name}: matrix is not unitary")
        u.setflags(write=False)
        object.__setattr__(self, "unitary", u)
        object.__setattr__(self, "qubits", tuple(self.qubits))

    @property
    def dimension(self) -> int:
        return self.unitary.shape[0]


def frame_phase(delta23_mhz: float, t_b_ns: float) -> float:
    """Rotating-frame mismatch ``Delta23 t_b`` in radians."""
    return 2 * math.pi * 1e-3 * delta23_mhz * t_b_ns


def cz_target(qubits=("Q1", "Q2")) -> GateTarget:
    return GateTarget("CZ", np.diag([1, 1, 1, -1]).astype(complex), qubits)


def cswap_unitary(phases: Sequence[float] = (0.0,) * 7, delta23_mhz: float = 0.0, t_b_ns: float = 0.0) -> np.ndarray:
    """Phase-dressed Fredkin matrix; basis index is ``4 q1 + 2 q2 + q3``."""
    if len(phases) != 7:
        raise ProtocolError("CSWAP needs seven phases (001, 010, 011, 100, 101, 110, 111)")
    p001, p010, p011, p100, p101, p110, p111 = phases
    fb = frame_phase(delta23_mhz, t_b_ns)
    u = np.zeros((8, 8), dtype=complex)
    u[0, 0] = 1.0
    u[1, 1] = np.exp(1j * p001)
    u[2, 2] = np.exp(1j * p010)
    u[3, 3] = np.exp(1j * p011)
    u[4, 4] = np.exp(1j * p100)
    u[5, 6] = np.exp(1j * (p110 - fb))
    u[6, 5] = np.exp(1j * (p101 + fb))
    u[7, 7] = np.exp(1j * p111)
    return u


def cswap_target(phases=(0.0,) * 7, delta23_mhz=0.0, t_b_ns=0.0, qubits=("Q1", "Q2", "Q4")) -> GateTarget:
    return GateTarget("CSWAP", cswap_unitary(phases, delta23_mhz, t_b_ns), qubits, tuple(phases), delta23_mhz, t_b_ns)


def ccphase_unitary() -> np.ndarray:
    """``|10><10| (x) (-Z) + (1 - |10><10|) (x) 1`` on ``|Q2 Q1 Q4>``; only ``|100>`` flips sign."""
    d = np.ones(8, dtype=complex)
    d[0b100] = -1.0
    return np.diag(d)


def ccphase_target(qubits=("Q2", "Q1", "Q4")) -> GateTarget:
    return GateTarget("CCPHASE", ccphase_unitary(), qubits)


# ---------------------------------------------------------------------------
# W states


def w_state_time(n: int, g_mhz: float) -> float:
    """Closed-form equal-distribution time: 2 pi / (9 g) for n = 3, pi / (4 g) for n = 4."""
    g = mhz(g_mhz)
    if g <= 0:
        raise ProtocolError("coupling must be positive")
    if n == 3:
        return 2 * math.pi / (9 * g)
    if n == 4:
        return math.pi / (4 * g)
    if n == 2:
        return math.pi / (4 * g)
    raise ProtocolError(f"no one-step equal distribution exists for n = {n} with uniform coupling")


def g_from_w_time(n: int, t_ns: float) -> float:
    """Uniform coupling (MHz) whose equal-distribution time is ``t_ns``."""
    return w_state_time(n, 1.0) / t_ns


def _coupling_matrix(n: int, g_mhz) -> np.ndarray:
    g = np.asarray(g_mhz, dtype=float)
    if g.ndim == 0:
        m = np.full((n, n), float(g))
        np.fill_diagonal(m, 0.0)
        return m
    if g.shape != (n, n) or not np.allclose(g, g.T) or np.any(np.diag(g) != 0):
        raise ProtocolError("coupling matrix must be symmetric with zero diagonal")
    return g


def single_excitation_populations(gmat_mhz: np.ndarray, initial: int, times) -> np.ndarray:
    """Site populations of one excitation hopping on the coupling graph."""
    w, v = np.linalg.eigh(mhz(gmat_mhz))
    c0 = v[initial].conj()
    amps = np.einsum("ik,tk->ti", v, np.exp(-1j * np.outer(np.atleast_1d(times), w)) * c0)
    return np.abs(amps) ** 2


def _w_mismatch(gmat, initial, t):
    n = len(gmat)
    return float(np.max(np.abs(single_excitation_populations(gmat, initial, [t])[0] - 1.0 / n)))


def w_state_optimal_time(gmat_mhz: np.ndarray, initial: int = 0, t_max_ns: float | None = None) -> float:
    """First time the excitation is spread most evenly, found numerically."""
    n = len(gmat_mhz)
    gbar = np.max(np.abs(gmat_mhz))
    if gbar == 0:
        raise ProtocolError("no coupling, the excitation never spreads")
    t_max = t_max_ns if t_max_ns is not None else 2 * math.pi / mhz(gbar)
    grid = np.linspace(0.0, t_max, 4001)
    pops = single_excitation_populations(gmat_mhz, initial, grid)
    err = np.max(np.abs(pops - 1.0 / n), axis=1)
    # first local minimum that is close to the global one
    floor = err.min()
    cand = [i for i in range(1, len(grid) - 1) if err[i] <= err[i - 1] and err[i] <= err[i + 1] and err[i] <= floor + 0.05]
    i = cand[0] if cand else int(np.argmin(err))
    dt = grid[1] - grid[0]
    res = minimize_scalar(lambda t: _w_mismatch(gmat_mhz, initial, t), bounds=(max(0.0, grid[i] - dt), grid[i] + dt),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.x)


@dataclass(frozen=True)
class WStateResult:
    state: QuantumState
    time_ns: float
    populations: np.ndarray
    fidelity: float


def w_state_vector(n: int) -> QuantumState:
    vec = np.zeros(2 ** n, dtype=complex)
    for k in range(n):
        vec[1 << (n - 1 - k)] = 1.0
    return QuantumState.normalized([2] * n, vec)


def w_state_prepare(n: int, g_mhz, initial: int = 0, time_ns: float | None = None) -> WStateResult:
    """Spread one excitation over ``n`` all-to-all coupled qubits.

    With uniform coupling the closed-form time is used; couplings that differ
    by more than 1% trigger a warning and a numerical search. The returned
    state lives on ``n`` two-level sites. Its fidelity is taken against the
    equal-amplitude W state after removing the per-site phases, which a
    virtual Z on each qubit absorbs.
    """
    if n < 2:
        raise ProtocolError("need at least two qubits")
    gmat = _coupling_matrix(n, g_mhz)
    off = gmat[~np.eye(n, dtype=bool)]
    if time_ns is None:
        uniform = np.ptp(off) <= 0.01 * np.max(np.abs(off)) if np.any(off) else True
        if not np.any(off):
            time_ns = 0.0
        elif uniform and n in (3, 4):
            time_ns = w_state_time(n, float(np.mean(off)))
        else:
            if not uniform:
                warnings.warn("couplings are not uniform within 1%; searching the optimal time numerically")
            time_ns = w_state_optimal_time(gmat, initial)
    w, v = np.linalg.eigh(mhz(gmat))
    amps = v @ (np.exp(-1j * w * time_ns) * v[initial].conj())
    vec = np.zeros(2 ** n, dtype=complex)
    for k in range(n):
        vec[1 << (n - 1 - k)] = amps[k]
    state = QuantumState.normalized([2] * n, vec)
    aligned = QuantumState.normalized([2] * n, np.abs(vec))
    return WStateResult(state, float(time_ns), np.abs(amps) ** 2, fidelity(aligned, w_state_vector(n)))


# ---------------------------------------------------------------------------
# GHZ by one-axis twisting


def ghz_vector(n: int, levels: int = 2) -> QuantumState:
    dims = [levels] * n
    vec = np.zeros(levels ** n, dtype=complex)
    vec[0] = 1.0
    vec[np.ravel_multi_index([1] * n, dims)] = 1.0
    return QuantumState.normalized(dims, vec)


def ghz_hamiltonian(n: int, g_mhz: float, eta_mhz: float, levels: int = 3) -> OperatorExpr:
    """``sum_j (eta/2) a^dag a^dag a a + g sum_{j<k} (a_j^dag a_k + h.c.)`` in the common rotating frame."""
    if levels == 2 and eta_mhz != 0:
        raise ProtocolError("the Kerr term needs a third level; use levels = 3 when eta != 0")
    dims = [levels] * n
    h = OperatorExpr(dims)
    if eta_mhz != 0:
        for j in range(n):
            h = h.term(0.5 * mhz(eta_mhz), (j, "kerr"))
    for j in range(n):
        for k in range(j + 1, n):
            h = h.hop(mhz(g_mhz), j, k)
    return h


def _ghz_twist(n, g_mhz, eta_mhz, levels, noise):
    dims = [levels] * n
    state = QuantumState.basis(dims, [0] * n)
    for j in range(n):
        state = apply_unitary(state, x90(math.pi / 2, levels), [j])
    duration = math.pi / (2 * mhz(g_mhz))
    state = evolve(state, ghz_hamiltonian(n, g_mhz, eta_mhz, levels), duration, noise)
    return state, duration


def _ghz_finish(state: QuantumState, theta: float, zeta: float) -> QuantumState:
    levels = state.dims[0]
    z = np.diag(np.exp(-1j * zeta * np.arange(levels)))
    for j in range(len(state.dims)):
        state = apply_unitary(state, x90(theta, levels), [j])
        state = apply_unitary(state, z, [j])
    return state


@lru_cache(maxsize=None)
def ghz_final_phases(n: int) -> tuple[float, float]:
    """Final pulse phase and virtual-Z phase shared by all qubits.

    Found once in the two-level limit by a phase grid followed by a simplex
    refinement, then reused for every anharmonicity and coupling.
    """
    twisted, _ = _ghz_twist(n, 1.0, 0.0, 2, None)
    target = ghz_vector(n)

    def infid(x):
        return 1.0 - fidelity(_ghz_finish(twisted, x[0], x[1]), target)

    grid = np.linspace(0.0, 2 * math.pi, 37)[:-1]
    best = min(((infid((a, b)), a, b) for a in grid for b in grid))
    res = minimize(infid, best[1:], method="Nelder-Mead", options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 4000})
    x = res.x if res.fun <= best[0] else np.array(best[1:])
    return float(x[0] % (2 * math.pi)), float(x[1] % (2 * math.pi))


@dataclass(frozen=True)
class GhzResult:
    state: QuantumState
    fidelity: float
    duration_ns: float
    theta: float
    zeta: float

    @property
    def infidelity(self) -> float:
        return 1.0 - self.fidelity


def ghz_protocol(n: int, g_mhz: float, eta_mhz: float, noise: LindbladModel | None = None, levels: int = 3,
                 phases: tuple[float, float] | None = None) -> GhzResult:
    """One-step GHZ preparation.

    All qubits get a Y/2 pulse, interact for ``pi / (2 g)``, then receive an
    X(theta)/2 pulse and a virtual Z(zeta). The fidelity is measured against
    ``(|0...0> + |1...1>)/sqrt(2)`` embedded in the qudit space.
    """
    if n < 2:
        raise ProtocolError("GHZ needs at least two qubits")
    if g_mhz <= 0:
        raise ProtocolError("coupling must be positive")
    if levels == 2 and eta_mhz != 0:
        raise ProtocolError("the Kerr term needs a third level; use levels = 3 when eta != 0")
    theta, zeta = ghz_final_phases(n) if phases is None else phases
    twisted, duration = _ghz_twist(n, g_mhz, eta_mhz, levels, noise)
    final = _ghz_finish(twisted, theta, zeta)
    return GhzResult(final, fidelity(final, ghz_vector(n, levels)), duration, theta, zeta)


def ghz_reward(histogram) -> float:
    """``1 - |P(0..0) - 0.5| - |P(1..1) - 0.5|`` from counts or a probability vector."""
    if isinstance(histogram, Mapping):
        total = sum(histogram.values())
        if total <= 0:
            raise ProtocolError("empty histogram")
        n = len(next(iter(histogram)))
        p0 = histogram.get("0" * n, 0) / total
        p1 = histogram.get("1" * n, 0) / total
    else:
        p = np.asarray(histogram, dtype=float)
        p = p / p.sum()
        p0, p1 = p[0], p[-1]
    return float(1.0 - abs(p0 - 0.5) - abs(p1 - 0.5))


# ---------------------------------------------------------------------------
# CSWAP phase determination

GateLike = np.ndarray | Callable[[QuantumState], QuantumState]


@dataclass(frozen=True)
class PhaseCalibration:
    phases: tuple[float, ...]
    visibilities: tuple[float, ...]
    unreliable: tuple[str, ...]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(CSWAP_PHASE_LABELS, self.phases))


def _apply_gate(gate: GateLike, state: QuantumState) -> QuantumState:
    if callable(gate):
        return gate(state)
    return QuantumState(state.dims, np.asarray(gate) @ state.data) if state.is_pure else \
        QuantumState(state.dims, np.asarray(gate) @ state.data @ np.asarray(gate).conj().T)


def _fringe_phase(gate, x_sites, x90_site, readout_site, offset, sweep):
    """Sweep the final pulse phase and fit ``a + b cos(phi - phi0)`` to P(1)."""
    state = QuantumState.basis([2, 2, 2], [0, 0, 0])
    for s in x_sites:
        state = apply_unitary(state, xgate(), [s])
    state = apply_unitary(state, x90(), [x90_site])
    state = _apply_gate(gate, state)
    p1 = []
    for phi in sweep:
        out = apply_unitary(state, x90(phi + offset), [readout_site])
        p1.append(out.site_populations(readout_site)[1])
    design = np.column_stack([np.ones_like(sweep), np.cos(sweep), np.sin(sweep)])
    (a, c, s), *_ = np.linalg.lstsq(design, np.asarray(p1), rcond=None)
    return math.atan2(s, c), 2.0 * math.hypot(c, s)


def cswap_phase_calibration(gate: GateLike, delta23_mhz: float = 0.0, t_b_ns: float = 0.0, n_sweep: int = 24,
                            min_visibility: float = 0.2) -> PhaseCalibration:
    """Seven-step phase determination for a CSWAP-like gate.

    Each step prepares a superposition with X/2 (and X to set spectators),
    runs the gate, sweeps the phase of a closing X(phi)/2 pulse and takes the
    phase maximizing P(1). The last two steps shift the closing pulse by the
    frame mismatch so that the result does not depend on ``t_b``.
    """
    fb = frame_phase(delta23_mhz, t_b_ns)
    sweep = np.linspace(0.0, 2 * math.pi, n_sweep, endpoint=False)
    # (pulsed-X sites, X/2 site, readout site, closing-pulse offset)
    steps = {
        "001": ((), 2, 2, 0.0),
        "010": ((), 1, 1, 0.0),
        "100": ((), 0, 0, 0.0),
        "011-001": ((2,), 1, 1, 0.0),
        "111-011": ((1, 2), 0, 0, 0.0),
        "101-100": ((0,), 2, 1, fb),
        "110-100": ((0,), 1, 2, -fb),
    }
    raw, vis = {}, {}
    for key, (xs, h, r, off) in steps.items():
        raw[key], vis[key] = _fringe_phase(gate, xs, h, r, off, sweep)
    wrap = lambda x: float(x % (2 * math.pi))
    p001, p010, p100 = raw["001"], raw["010"], raw["100"]
    p011 = raw["011-001"] + p001
    p111 = raw["111-011"] + p011
    p101 = raw["101-100"] + p100
    p110 = raw["110-100"] + p100
    phases = tuple(wrap(x) for x in (p001, p010, p011, p100, p101, p110, p111))
    order = ("001", "010", "011-001", "100", "101-100", "110-100", "111-011")
    visibilities = tuple(float(vis[k]) for k in order)
    unreliable = tuple(lab for lab, k in zip(CSWAP_PHASE_LABELS, order) if vis[k] < min_visibility)
    if unreliable:
        warnings.warn(f"fringe visibility below {min_visibility} for phases {unreliable}")
    return PhaseCalibration(phases, visibilities, unreliable)


def phase_distance(a, b) -> np.ndarray:
    """Elementwise circular distance between phase vectors."""
    d = (np.asarray(a) - np.asarray(b) + math.pi) % (2 * math.pi) - math.pi
    return np.abs(d)


# ---------------------------------------------------------------------------
# CCPHASE frequency ladder

LADDER_ORDER = ("Q2", "Q1", "Q4")
LADDER_DIMS = (3, 3, 4)


class LadderError(ProtocolError):
    def __init__(self, message: str, residual_mhz: float):
        super().__init__(message)
        self.residual_mhz = residual_mhz


@dataclass(frozen=True)
class LadderConfig:
    """Frequencies (MHz, relative to Q2) and couplings for the CCPHASE seed.

    ``f1 = f2 + eta2`` puts |110> on resonance with |200>, ``f4 = f2 - eta4``
    does the same for |101> and |002>, and Q4's 2-3 transition sits at
    ``f3 = f1 - delta``.
    """

    g_mhz: float
    delta_mhz: float
    eta_mhz: tuple[float, float, float]
    f_mhz: tuple[float, float, float]
    f3_mhz: float
    g24_mhz: float
    g14_mhz: float
    round_trip_ns: float

    def energies(self) -> np.ndarray:
        (f2, f1, f4), (e2, e1, e4) = self.f_mhz, self.eta_mhz
        q2 = [f2 * n + 0.5 * e2 * n * (n - 1) for n in range(3)]
        q1 = [f1 * n + 0.5 * e1 * n * (n - 1) for n in range(3)]
        q4 = [0.0, f4, 2 * f4 + e4, 2 * f4 + e4 + self.f3_mhz]
        return (np.add.outer(np.add.outer(q2, q1), q4)).reshape(-1)

    def hamiltonian(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal part and exchange part, both in rad/ns."""
        h0 = np.diag(mhz(self.energies())).astype(complex)
        v = OperatorExpr(LADDER_DIMS).hop(mhz(self.g_mhz), 0, 1).hop(mhz(self.g24_mhz), 0, 2).hop(mhz(self.g14_mhz), 1, 2)
        return h0, v.matrix()

    def propagator(self, t_ns: float) -> np.ndarray:
        """Interaction-picture propagator ``exp(i H0 t) exp(-i H t)``."""
        h0, v = self.hamiltonian()
        return np.exp(1j * np.diag(h0).real * t_ns)[:, None] * unitary_from_hermitian(h0 + v, t_ns)

    def amplitude(self, label: str, t_ns: float) -> complex:
        i = np.ravel_multi_index([int(c) for c in label], LADDER_DIMS)
        return complex(self.propagator(t_ns)[i, i])


def round_trip_time(g_mhz: float) -> float:
    """``pi / (sqrt(2) g)``."""
    return math.pi / (math.sqrt(2) * mhz(g_mhz))


def _ladder(g, delta, eta, f2, g24, g14, f1=None, f4=None):
    e2, e1, e4 = eta
    want1, want4 = f2 + e2, f2 - e4
    for name, given, want in (("f1", f1, want1), ("f4", f4, want4)):
        if given is not None and abs(given - want) > 1e-9:
            raise LadderError(f"{name} = {given} MHz misses its resonance condition by {given - want:+.3f} MHz",
                              given - want)
    return LadderConfig(g, delta, tuple(eta), (f2, want1, want4), want1 - delta, g24, g14, round_trip_time(g))


def ccphase_ladder(g_mhz: float, delta_mhz: float | None = None, eta_mhz=(-181.0, -170.0, -163.0),
                   f2_mhz: float = 0.0, g24_mhz: float | None = None, g14_mhz: float | None = None,
                   f1_mhz: float | None = None, f4_mhz: float | None = None) -> LadderConfig:
    """Frequency ladder for the CCPHASE seed on ``|Q2 Q1 Q4>``.

    ``eta_mhz`` lists (eta2, eta1, eta4). When ``delta_mhz`` is omitted it is
    chosen by a scan maximizing the |111> return probability at the
    round-trip time. Passing ``f1_mhz`` or ``f4_mhz`` checks them against the
    resonance conditions.
    """
    if g_mhz <= 0:
        raise ProtocolError("coupling must be positive")
    if any(e >= 0 for e in eta_mhz):
        raise ProtocolError("anharmonicities must be negative")
    g24 = g_mhz if g24_mhz is None else g24_mhz
    g14 = g_mhz if g14_mhz is None else g14_mhz
    if delta_mhz is not None:
        return _ladder(g_mhz, delta_mhz, eta_mhz, f2_mhz, g24, g14, f1_mhz, f4_mhz)
    t_rt = round_trip_time(g_mhz)

    def mismatch(d):
        cfg = _ladder(g_mhz, d, eta_mhz, f2_mhz, g24, g14, f1_mhz, f4_mhz)
        return 1.0 - abs(cfg.amplitude("111", t_rt)) ** 2

    grid = np.linspace(-4 * g_mhz, 4 * g_mhz, 81)
    vals = [mismatch(d) for d in grid]
    k = int(np.argmin(vals))
    step = grid[1] - grid[0]
    res = minimize_scalar(mismatch, bounds=(grid[k] - step, grid[k] + step), method="bounded", options={"xatol": 1e-6})
    return _ladder(g_mhz, float(res.x), eta_mhz, f2_mhz, g24, g14, f1_mhz, f4_mhz)


def first_return_time(cfg: LadderConfig, label: str, t_max_ns: float | None = None, n: int = 4001) -> float:
    """Time of the first maximum of the return probability after it has dipped below 1/2."""
    t_max = 3 * cfg.round_trip_ns if t_max_ns is None else t_max_ns
    times = np.linspace(0.0, t_max, n)
    h0, v = cfg.hamiltonian()
    w, vec = np.linalg.eigh(h0 + v)
    i = np.ravel_multi_index([int(c) for c in label], LADDER_DIMS)
    c = np.abs(vec[i]) ** 2
    p = np.abs(np.exp(-1j * np.outer(times, w)) @ c) ** 2
    below = np.nonzero(p < 0.5)[0]
    if len(below) == 0:
        return float("inf")
    for j in range(below[0] + 1, len(p) - 1):
        if p[j] > 0.5 and p[j] >= p[j - 1] and p[j] >= p[j + 1]:
            return float(times[j])
    return float("inf")


# ---------------------------------------------------------------------------
# frequency-modulated single-excitation dynamics


@dataclass(frozen=True)
class ChiralityConfig:
    """Modulation ``Delta_j cos(Omega_j t + phi_j)`` on each qubit plus static couplings.

    Amplitudes and frequencies are given as f/2pi in MHz. ``g_mhz`` maps
    qubit-name pairs to couplings.
    """

    delta_mhz: tuple[float, float, float]
    omega_mhz: tuple[float, float, float]
    phi: tuple[float, float, float]
    g_mhz: Mapping[tuple[str, str], float]
    qubits: tuple[str, str, str] = ("Q1", "Q2", "Q4")

    def __post_init__(self):
        for name in ("delta_mhz", "omega_mhz", "phi"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 3:
                raise ProtocolError(f"{name} needs three entries")
            object.__setattr__(self, name, v)
        if any(w <= 0 for w in self.omega_mhz):
            raise ProtocolError("modulation frequencies must be positive")
        g = {}
        for (a, b), v in dict(self.g_mhz).items():
            if a not in self.qubits or b not in self.qubits or a == b:
                raise ProtocolError(f"bad coupling pair ({a}, {b})")
            g[tuple(sorted((a, b)))] = float(v)
        object.__setattr__(self, "g_mhz", g)
        object.__setattr__(self, "qubits", tuple(self.qubits))

    def coupling_matrix(self) -> np.ndarray:
        m = np.zeros((3, 3))
        for (a, b), v in self.g_mhz.items():
            i, j = self.qubits.index(a), self.qubits.index(b)
            m[i, j] = m[j, i] = v
        return m

    def to_dict(self) -> dict:
        return {
            "qubits": list(self.qubits),
            "delta_mhz": list(self.delta_mhz),
            "omega_mhz": list(self.omega_mhz),
            "phi": list(self.phi),
            "g_mhz": [{"pair": list(k), "value": v} for k, v in self.g_mhz.items()],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ChiralityConfig":
        g = {tuple(e["pair"]): e["value"] for e in d["g_mhz"]}
        return cls(tuple(d["delta_mhz"]), tuple(d["omega_mhz"]), tuple(d["phi"]), g, tuple(d["qubits"]))

    def hamiltonian(self) -> OperatorExpr:
        """Matrix in the basis {000, 100, 010, 001} with per-site modulation."""
        g = np.zeros((4, 4), dtype=complex)
        g[1:, 1:] = mhz(self.coupling_matrix())
        h = OperatorExpr([4]).term(1.0, (0, g))
        for j in range(3):
            proj = np.zeros((4, 4), dtype=complex)
            proj[j + 1, j + 1] = 1.0
            amp, om, ph = mhz(self.delta_mhz[j]), mhz(self.omega_mhz[j]), self.phi[j]
            if amp != 0:
                h = h.term(lambda t, amp=amp, om=om, ph=ph: amp * math.cos(om * t + ph), (0, proj))
        return h


def circulation_config(negate: bool = False) -> ChiralityConfig:
    s = -1.0 if negate else 1.0
    return ChiralityConfig((140.0, 130.0, 140.0), (100.0,) * 3, (s * 2 * math.pi / 3, 0.0, s * 4 * math.pi / 3),
                           {("Q1", "Q2"): 14.0, ("Q1", "Q4"): 14.0, ("Q2", "Q4"): 14.0})


def routing_config(phi4: float, delta_mhz: float = 120.0, omega_mhz: float = 100.0,
                   g_mhz=(7.0, 6.2, 8.0)) -> ChiralityConfig:
    """Uniform modulation with phases (0, pi, phi4); couplings (g12, g14, g24)."""
    return ChiralityConfig((delta_mhz,) * 3, (omega_mhz,) * 3, (0.0, math.pi, phi4),
                           {("Q1", "Q2"): g_mhz[0], ("Q1", "Q4"): g_mhz[1], ("Q2", "Q4"): g_mhz[2]})


def single_excitation_noise(gamma1: Sequence[float], gamma_phi: Sequence[float]) -> LindbladModel:
    """Decay |j> -> |000> and dephasing of |j> in the four-state basis."""
    ops = []
    for j, (g1, gp) in enumerate(zip(gamma1, gamma_phi)):
        lower = np.zeros((4, 4), dtype=complex)
        lower[0, j + 1] = 1.0
        proj = np.zeros((4, 4), dtype=complex)
        proj[j + 1, j + 1] = 1.0
        if g1 > 0:
            ops.append((lower, g1))
        if gp > 0:
            ops.append((proj, 2.0 * gp))
    return LindbladModel(tuple(ops))


@dataclass(frozen=True)
class DynamicsResult:
    times: np.ndarray
    populations: np.ndarray
    qubits: tuple[str, ...]
    peak_order: tuple[str, ...] = ()


def modulated_run(config: ChiralityConfig, initial: str, t_max_ns: float, dt_ns: float = 0.25,
                  noise: LindbladModel | None = None, dt_max: float = 0.05) -> DynamicsResult:
    if initial not in config.qubits:
        raise ProtocolError(f"unknown initial qubit {initial!r}")
    times = np.arange(0.0, t_max_ns + 0.5 * dt_ns, dt_ns)
    psi = QuantumState.basis([4], [config.qubits.index(initial) + 1])
    states = trajectory(psi, config.hamiltonian(), times, noise, dt_max)
    pops = np.array([s.probabilities()[1:] for s in states])
    return DynamicsResult(times, pops, config.qubits)


def peak_sequence(times, populations, names, threshold=0.4, window_ns=2.0) -> list[tuple[float, str]]:
    """Local maxima above ``threshold`` of each trace after a moving average."""
    dt = times[1] - times[0]
    width = max(1, int(round(window_ns / dt)))
    events = []
    for q, name in enumerate(names):
        s = uniform_filter1d(populations[:, q], width, mode="nearest")
        for i in range(1, len(s) - 1):
            if s[i] > threshold and s[i] >= s[i - 1] and s[i] > s[i + 1]:
                events.append((float(times[i]), name))
    return sorted(events)


def spin_chirality_run(config: ChiralityConfig, noise: LindbladModel | None = None, t_max_ns: float = 400.0,
                       dt_ns: float = 0.25, initial: str = "Q2") -> DynamicsResult:
    """Populations of the three qubits with the excitation starting in ``initial``.

    ``peak_order`` is the initial qubit followed by the other qubits sorted by
    the time their smoothed population first peaks above 0.4.
    """
    run = modulated_run(config, initial, t_max_ns, dt_ns, noise)
    first: dict[str, float] = {}
    for t, name in peak_sequence(run.times, run.populations, run.qubits):
        if name != initial:
            first.setdefault(name, t)
    order = (initial,) + tuple(sorted(first, key=first.get))
    return DynamicsResult(run.times, run.populations, run.qubits, order)


def floquet_geff(g_mhz: float, delta_mhz: float, omega_mhz: float, phi_j: float, phi_k: float) -> float:
    """Zeroth-order effective coupling ``g J0(2 (Delta/Omega) sin((phi_j - phi_k)/2))``."""
    return float(g_mhz * j0(2.0 * delta_mhz / omega_mhz * math.sin(0.5 * (phi_j - phi_k))))


def floquet_swap_rate(g_mhz: float, delta_mhz: float, omega_mhz: float, phi_j: float, phi_k: float,
                      dt_max: float = 0.01) -> float:
    """Effective exchange rate (MHz) of a modulated pair from its one-period propagator.

    The quasi-energy splitting of the Floquet operator equals twice the
    effective coupling.
    """
    g, d, om = mhz(g_mhz), mhz(delta_mhz), mhz(omega_mhz)
    h = OperatorExpr([2]).term(1.0, (0, np.array([[0, g], [g, 0]], dtype=complex)))
    h = h.term(lambda t: d * math.cos(om * t + phi_j), (0, np.diag([1.0, 0.0]).astype(complex)))
    h = h.term(lambda t: d * math.cos(om * t + phi_k), (0, np.diag([0.0, 1.0]).astype(complex)))
    period = 2 * math.pi / om
    u = propagator(h, period, dt_max)
    ph = np.angle(np.linalg.eigvals(u))
    split = abs(np.angle(np.exp(1j * (ph[0] - ph[1]))))
    return float(split / period / 2 / (2 * math.pi * 1e-3))


@dataclass(frozen=True)
class RouteResult:
    phi4: float
    target: str
    max_transfer: dict
    run: DynamicsResult


def floquet_route(phi4: float, t_max_ns: float = 200.0, dt_ns: float = 0.25, **kwargs) -> RouteResult:
    """Excite Q4 under uniform modulation and report which qubit receives the excitation."""
    cfg = routing_config(phi4, **kwargs)
    run = modulated_run(cfg, "Q4", t_max_ns, dt_ns)
    best = {name: float(run.populations[:, i].max()) for i, name in enumerate(cfg.qubits) if name != "Q4"}
    return RouteResult(phi4, max(best, key=best.get), best, run)
