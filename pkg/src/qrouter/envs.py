"""Reward environments for the PPO trainer.

Every environment maps a flat action vector and a seed to a reward and a
diagnostics dict. Pulse environments read the action as free segment values
(MHz) for each control channel, clip them to a physical range, render them
through ``pulses`` and integrate the resulting piecewise-constant
Hamiltonian on the sample grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .device import DeviceModel, load_device
from .protocols import cswap_unitary, cz_target, ghz_final_phases, ghz_reward
from .pulses import ControlSchedule, render_waveform
from .qsim import embed, local_operator, mhz, x90
from .xeb import (
    TRAIN_DEPTH,
    TRAIN_K,
    _binary_probs,
    as_seed_sequence,
    circuit_probabilities,
    generate_circuits,
    ideal_probabilities,
    xeb_kernel,
)

DEFAULT_ACTION_LIMIT_MHZ = 400.0


class EnvError(ValueError):
    """Invalid environment configuration or action."""


# ---------------------------------------------------------------------------
# toy environments


@dataclass(frozen=True)
class QuadraticBandit:
    """``r = 1 - |a - a*|^2``; the optimum is known exactly."""

    target: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.target)

    def evaluate(self, action, seed=None) -> tuple[float, dict]:
        d = np.asarray(action, dtype=float) - np.asarray(self.target)
        return 1.0 - float(d @ d), {}


@dataclass(frozen=True)
class ConstantReward:
    """Reward ``mean`` plus optional Gaussian noise, independent of the action."""

    dimension: int
    mean: float = 0.5
    noise: float = 0.0

    def evaluate(self, action, seed=None) -> tuple[float, dict]:
        if self.noise:
            return self.mean + self.noise * float(np.random.default_rng(seed).standard_normal()), {}
        return self.mean, {}


# ---------------------------------------------------------------------------
# pulse-driven qudit register


def _pair(name: str) -> tuple[str, str] | None:
    parts = name.split("-")
    return (parts[0], parts[1]) if len(parts) == 2 else None


@dataclass(frozen=True)
class PulseSystem:
    """Anharmonic qudits in a common rotating frame driven by flux channels.

    A channel named after a qubit adds a detuning ``delta(t) n``; a channel
    ``"A-B"`` adds an exchange coupling ``g(t) (a_A^dag a_B + h.c.)``.
    ``offsets_mhz`` place the idle frequencies in the frame; the returned
    propagators are in the interaction picture of the idle Hamiltonian, so
    an idle schedule gives the identity.
    """

    qubits: tuple[str, ...]
    offsets_mhz: tuple[float, ...]
    eta_mhz: tuple[float, ...]
    channels: tuple[str, ...]
    duration_ns: float
    levels: int = 3
    n_segments: int = 8
    padding: int = 1
    smoothing: str = "interpolate"
    filter_mhz: float | None = 250.0
    sample_rate: float = 1.0
    action_limit_mhz: float = DEFAULT_ACTION_LIMIT_MHZ
    _ops: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.qubits)
        if len(self.offsets_mhz) != n or len(self.eta_mhz) != n:
            raise EnvError("one offset and one anharmonicity per qubit")
        if self.levels < 2:
            raise EnvError("levels must be at least 2")
        if self.levels == 2 and any(self.eta_mhz):
            raise EnvError("anharmonicity needs at least three levels")
        dims = [self.levels] * n
        num = local_operator("number", self.levels)
        h0 = np.zeros(self.levels ** n)
        for j in range(n):
            nd = np.diag(embed(dims, {j: num})).real
            h0 += mhz(self.offsets_mhz[j]) * nd + 0.5 * mhz(self.eta_mhz[j]) * nd * (nd - 1)
        ops = []
        lower, raise_ = local_operator("lower", self.levels), local_operator("raise", self.levels)
        for ch in self.channels:
            pair = _pair(ch)
            if pair is None:
                if ch not in self.qubits:
                    raise EnvError(f"channel {ch!r} names no qubit")
                ops.append(embed(dims, {self.qubits.index(ch): num}))
            else:
                a, b = pair
                if a not in self.qubits or b not in self.qubits or a == b:
                    raise EnvError(f"coupling channel {ch!r} needs two distinct qubits of the register")
                ia, ib = self.qubits.index(a), self.qubits.index(b)
                hop = embed(dims, {ia: raise_, ib: lower})
                ops.append(hop + hop.conj().T)
        object.__setattr__(self, "_ops", {"h0": h0, "controls": np.array(ops)})

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.levels,) * len(self.qubits)

    @property
    def dimension(self) -> int:
        return len(self.channels) * (self.n_segments - 2 * self.padding)

    def schedule(self, action) -> ControlSchedule:
        action = np.asarray(action, dtype=float).reshape(-1)
        if action.size != self.dimension:
            raise EnvError(f"action has {action.size} entries, expected {self.dimension}")
        action = np.clip(action, -self.action_limit_mhz, self.action_limit_mhz)
        return ControlSchedule.from_action(action, self.channels, self.duration_ns, n_segments=self.n_segments,
                                           padding=self.padding, smoothing=self.smoothing,
                                           filter_mhz=self.filter_mhz)

    def waveforms(self, action) -> np.ndarray:
        wave = render_waveform(self.schedule(action), self.sample_rate)
        return np.array([wave[ch] for ch in self.channels])

    def unitary(self, action) -> np.ndarray:
        """Interaction-picture propagator over the full schedule."""
        waves = self.waveforms(action)
        h0, ctrl = self._ops["h0"], self._ops["controls"]
        dt = 1.0 / self.sample_rate
        u = np.eye(len(h0), dtype=complex)
        for amp in mhz(waves.T):
            h = np.diag(h0) + np.tensordot(amp, ctrl, axes=1)
            w, v = np.linalg.eigh(h)
            u = (v * np.exp(-1j * w * dt)) @ v.conj().T @ u
        n = waves.shape[1]
        return np.exp(1j * h0 * n * dt)[:, None] * u


def binary_populations(psi: np.ndarray, n: int, levels: int) -> np.ndarray:
    """Bitstring probabilities with every excited level read as 1."""
    return _binary_probs(np.abs(psi) ** 2, n, levels)


def _sampled(p: np.ndarray, shots: int | None, rng: np.random.Generator) -> np.ndarray:
    if shots is None:
        return p
    return rng.multinomial(shots, p / p.sum()) / shots


# ---------------------------------------------------------------------------
# CZ with the OXEBIT reward


def cz_system(device: DeviceModel | None = None, qubits=("Q1", "Q2"), duration_ns: float = 60.0,
              **kwargs) -> PulseSystem:
    """Two transmons with detuning channels on both and a tunable coupling."""
    device = device or load_device()
    qa, qb = (device.qubits[device.index(q)] for q in qubits)
    base = qa.omega_ghz
    return PulseSystem(tuple(qubits), tuple(1e3 * (q.omega_ghz - base) for q in (qa, qb)),
                       (qa.eta_mhz, qb.eta_mhz), (qubits[0], qubits[1], f"{qubits[0]}-{qubits[1]}"),
                       duration_ns, **kwargs)


def cz_flat_top(system: PulseSystem, detune_error_mhz: float = 0.0, g_mhz: float | None = None) -> np.ndarray:
    """Flat-top seed: the second qubit is parked where ``|11>`` meets ``|20>``.

    The resonance sits at ``f_b - f_a = eta_a``; ``g`` defaults to the value
    giving one full ``|11> <-> |20>`` cycle over the flat part.
    """
    nf = system.n_segments - 2 * system.padding
    off = system.offsets_mhz[1] - system.offsets_mhz[0]
    delta = system.eta_mhz[0] - off + detune_error_mhz
    if g_mhz is None:
        flat = system.duration_ns * (system.n_segments - 1 - 2 * system.padding) / (system.n_segments - 1)
        g_mhz = 1e3 / (math.sqrt(2) * flat)
    return np.concatenate([np.zeros(nf), np.full(nf, delta), np.full(nf, g_mhz)])


@dataclass(frozen=True)
class CzOxebitEnv:
    """OXEBIT reward for a pulse-level CZ: min over ``k`` depth-``m`` circuit kernels.

    Circuits are regenerated from the seed of every call; ``shots=None``
    uses exact outcome distributions. Leakage levels read as 1.
    """

    system: PulseSystem
    depth: int = TRAIN_DEPTH
    k: int = TRAIN_K
    shots: int | None = 1020

    @property
    def dimension(self) -> int:
        return self.system.dimension

    def _circuits(self, seed):
        target = cz_target(self.system.qubits)
        return generate_circuits(2, [self.depth], self.k, interleave=target, seed=seed)

    def reward_for_gate(self, gate: np.ndarray, circuits, rng: np.random.Generator | None) -> float:
        kernels = []
        for c in circuits:
            ideal = ideal_probabilities(c)
            p = circuit_probabilities(c, gate, self.system.levels)
            kernels.append(xeb_kernel(ideal, _sampled(p, self.shots, rng)))
        return float(min(kernels))

    def evaluate(self, action, seed=0) -> tuple[float, dict]:
        ss = as_seed_sequence(seed)
        circ_seed, shot_seed = ss.spawn(2)
        u = self.system.unitary(action)
        return self.reward_for_gate(u, self._circuits(circ_seed), np.random.default_rng(shot_seed)), {}

    def evaluate_batch(self, actions, seed=0) -> np.ndarray:
        """All actions of one epoch share the same fresh circuits."""
        ss = as_seed_sequence(seed)
        circ_seed, shot_seed = ss.spawn(2)
        circuits = self._circuits(circ_seed)
        rngs = [np.random.default_rng(s) for s in shot_seed.spawn(len(actions))]
        return np.array([self.reward_for_gate(self.system.unitary(a), circuits, r) for a, r in zip(actions, rngs)])

    def gate_fidelity(self, action) -> float:
        """Average gate fidelity of the computational block against CZ, leakage counted as loss."""
        u = self.system.unitary(action)
        idx = [i * self.system.levels + j for i in (0, 1) for j in (0, 1)]
        m = cz_target().unitary.conj().T @ u[np.ix_(idx, idx)]
        d = 4
        return float((np.trace(m @ m.conj().T).real + abs(np.trace(m)) ** 2) / (d * (d + 1)))

    def ideal_reward(self, seed=0) -> float:
        """Reward of the exact CZ under the same circuits and sampling."""
        ss = as_seed_sequence(seed)
        circ_seed, shot_seed = ss.spawn(2)
        exact = np.zeros((self.system.levels ** 2,) * 2, dtype=complex)
        exact[np.diag_indices_from(exact)] = 1.0
        exact[self.system.levels + 1, self.system.levels + 1] = -1.0
        return self.reward_for_gate(exact, self._circuits(circ_seed), np.random.default_rng(shot_seed))


# ---------------------------------------------------------------------------
# GHZ


def ghz_system(n: int = 3, eta_mhz: float = -200.0, duration_ns: float = 125.0, levels: int = 3,
               **kwargs) -> PulseSystem:
    """Resonant register with a detuning channel per qubit and a coupling per pair."""
    names = tuple(f"q{j}" for j in range(n))
    pairs = tuple(f"{names[a]}-{names[b]}" for a in range(n) for b in range(a + 1, n))
    kwargs.setdefault("n_segments", 6)
    kwargs.setdefault("padding", 0)
    return PulseSystem(names, (0.0,) * n, (eta_mhz,) * n, names + pairs, duration_ns, levels, **kwargs)


def ghz_flat(system: PulseSystem, g_mhz: float) -> np.ndarray:
    nf = system.n_segments - 2 * system.padding
    n = len(system.qubits)
    return np.concatenate([np.zeros(n * nf), np.full((len(system.channels) - n) * nf, g_mhz)])


@dataclass(frozen=True)
class GhzEnv:
    """``1 - |P(0..0) - 1/2| - |P(1..1) - 1/2|`` after fixed Y/2 and X(theta)/2 pulses."""

    system: PulseSystem
    shots: int | None = None

    @property
    def dimension(self) -> int:
        return self.system.dimension

    def final_state(self, action) -> np.ndarray:
        n, d = len(self.system.qubits), self.system.levels
        theta, zeta = ghz_final_phases(n)
        y2 = x90(math.pi / 2, d)
        fin = np.diag(np.exp(-1j * zeta * np.arange(d))) @ x90(theta, d)
        first, last = y2, fin
        for _ in range(n - 1):
            first, last = np.kron(first, y2), np.kron(last, fin)
        psi = np.zeros(d ** n, dtype=complex)
        psi[0] = 1.0
        return last @ self.system.unitary(action) @ first @ psi

    def evaluate(self, action, seed=0) -> tuple[float, dict]:
        n = len(self.system.qubits)
        p = binary_populations(self.final_state(action), n, self.system.levels)
        p = _sampled(p, self.shots, np.random.default_rng(as_seed_sequence(seed)))
        return ghz_reward(p), {"p_all0": float(p[0]), "p_all1": float(p[-1])}


# ---------------------------------------------------------------------------
# CSWAP population reward


def cswap_system(device: DeviceModel | None = None, qubits=("Q1", "Q2", "Q4"), duration_ns: float = 80.0,
                 **kwargs) -> PulseSystem:
    device = device or load_device()
    qs = [device.qubits[device.index(q)] for q in qubits]
    base = qs[0].omega_ghz
    pairs = tuple(f"{qubits[a]}-{qubits[b]}" for a in range(3) for b in range(a + 1, 3))
    return PulseSystem(tuple(qubits), tuple(1e3 * (q.omega_ghz - base) for q in qs),
                       tuple(q.eta_mhz for q in qs), tuple(qubits) + pairs, duration_ns, **kwargs)


@dataclass(frozen=True)
class CswapPopulationEnv:
    """Minimum over the eight basis inputs of the target-state population.

    The first qubit of the system is the control. With ``shots`` set, each
    input is read out that many times.
    """

    system: PulseSystem
    shots: int | None = 1020

    @property
    def dimension(self) -> int:
        return self.system.dimension

    def populations(self, action) -> np.ndarray:
        """``P[x, y]``: probability of reading ``y`` after preparing basis state ``x``."""
        d = self.system.levels
        u = self.system.unitary(action)
        out = np.zeros((8, 8))
        for x in range(8):
            bits = [(x >> (2 - j)) & 1 for j in range(3)]
            col = u[:, (bits[0] * d + bits[1]) * d + bits[2]]
            out[x] = binary_populations(col, 3, d)
        return out

    def evaluate(self, action, seed=0) -> tuple[float, dict]:
        perm = np.argmax(np.abs(cswap_unitary()), axis=0)
        pops = self.populations(action)
        rngs = [np.random.default_rng(s) for s in as_seed_sequence(seed).spawn(8)]
        fids = np.array([_sampled(pops[x], self.shots, rngs[x])[perm[x]] for x in range(8)])
        return float(fids.min()), {"fidelities": fids.tolist()}
