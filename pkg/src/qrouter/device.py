"""Device description, readout model and sequential coupling measurement."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml
from scipy.optimize import curve_fit

from .qsim import OperatorExpr, QuantumState, mhz, qudit_noise, trajectory

BUILTIN_DEVICES = {"router4": "router4.yaml"}


class DeviceError(ValueError):
    """Invalid device description."""


class NoOscillationError(RuntimeError):
    """Raised when a swap experiment shows no resolvable exchange."""


@dataclass(frozen=True)
class Qubit:
    name: str
    omega_ghz: float
    eta_mhz: float
    t1_us: float
    t2star_ns: float
    f_g: float = 1.0
    f_e: float = 1.0
    levels: int = 3
    omega_rr_ghz: float | None = None
    chi2_mhz: float | None = None
    tau_rr_ns: float | None = None
    f_sqg: float | None = None

    def __post_init__(self):
        if self.eta_mhz >= 0:
            raise DeviceError(f"{self.name}: anharmonicity must be negative, got {self.eta_mhz} MHz")
        if self.t1_us <= 0 or self.t2star_ns <= 0:
            raise DeviceError(f"{self.name}: coherence times must be positive")
        if self.t2star_ns > 2e3 * self.t1_us:
            raise DeviceError(f"{self.name}: T2* = {self.t2star_ns} ns exceeds 2 T1")
        for label, f in (("f_g", self.f_g), ("f_e", self.f_e)):
            if not 0.0 <= f <= 1.0:
                raise DeviceError(f"{self.name}: {label} must lie in [0, 1]")
        if self.levels not in (2, 3, 4):
            raise DeviceError(f"{self.name}: levels must be 2, 3 or 4")

    @property
    def gamma1(self) -> float:
        """Energy relaxation rate in 1/ns."""
        return 1.0 / (self.t1_us * 1e3)

    @property
    def gamma_phi(self) -> float:
        """Pure dephasing rate 1/T2* - 1/(2 T1) in 1/ns."""
        return 1.0 / self.t2star_ns - 0.5 * self.gamma1

    def confusion(self) -> np.ndarray:
        """Columns are the true state (g, e); rows the reported outcome."""
        return np.array([[self.f_g, 1.0 - self.f_e], [1.0 - self.f_g, self.f_e]])


@dataclass(frozen=True)
class DeviceModel:
    qubits: tuple[Qubit, ...]
    couplings: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        qubits = tuple(self.qubits)
        names = [q.name for q in qubits]
        if len(set(names)) != len(names):
            raise DeviceError(f"duplicate qubit names in {names}")
        clean: dict[tuple[int, int], float] = {}
        for (i, j), g in dict(self.couplings).items():
            if i == j:
                raise DeviceError(f"coupling graph must have zero diagonal (pair {i},{j})")
            if not (0 <= i < len(qubits) and 0 <= j < len(qubits)):
                raise DeviceError(f"coupling ({i}, {j}) refers to a missing qubit")
            key = (min(i, j), max(i, j))
            if key in clean and not math.isclose(clean[key], g):
                raise DeviceError(f"asymmetric coupling for pair {key}")
            clean[key] = float(g)
        object.__setattr__(self, "qubits", qubits)
        object.__setattr__(self, "couplings", dict(sorted(clean.items())))

    def __len__(self):
        return len(self.qubits)

    def index(self, qubit: int | str) -> int:
        if isinstance(qubit, str):
            for i, q in enumerate(self.qubits):
                if q.name == qubit:
                    return i
            raise DeviceError(f"unknown qubit {qubit!r}")
        if not 0 <= qubit < len(self.qubits):
            raise DeviceError(f"qubit index {qubit} out of range")
        return int(qubit)

    def g_mhz(self, i: int | str, j: int | str) -> float:
        i, j = self.index(i), self.index(j)
        return self.couplings.get((min(i, j), max(i, j)), 0.0)

    def coupling_matrix_mhz(self, qubits: Sequence[int | str] | None = None) -> np.ndarray:
        idx = self._indices(qubits)
        out = np.zeros((len(idx), len(idx)))
        for a, i in enumerate(idx):
            for b, j in enumerate(idx):
                if a != b:
                    out[a, b] = self.g_mhz(i, j)
        return out

    def _indices(self, qubits) -> list[int]:
        return list(range(len(self.qubits))) if qubits is None else [self.index(q) for q in qubits]

    def noise(self, qubits: Sequence[int | str] | None = None, dims: Sequence[int] | None = None):
        """Lindblad model with T1 decay and number-operator dephasing per qubit."""
        idx = self._indices(qubits)
        dims = [self.qubits[i].levels for i in idx] if dims is None else list(dims)
        return qudit_noise(dims, [self.qubits[i].gamma1 for i in idx], [self.qubits[i].gamma_phi for i in idx])

    def with_couplings(self, couplings: Mapping[tuple[int, int], float]) -> "DeviceModel":
        return DeviceModel(self.qubits, couplings)

    def ideal_readout(self) -> "DeviceModel":
        qs = tuple(Qubit(**{**q.__dict__, "f_g": 1.0, "f_e": 1.0}) for q in self.qubits)
        return DeviceModel(qs, self.couplings)

    def to_dict(self) -> dict:
        return {
            "qubits": [{k: v for k, v in q.__dict__.items() if v is not None} for q in self.qubits],
            "couplings": [{"i": i, "j": j, "g_mhz": g} for (i, j), g in self.couplings.items()],
        }


_QUBIT_KEYS = set(Qubit.__dataclass_fields__)


def device_from_dict(doc: Mapping) -> DeviceModel:
    unknown = set(doc) - {"qubits", "couplings"}
    if unknown:
        raise DeviceError(f"unknown device keys: {sorted(unknown)}")
    qubits = []
    for entry in doc.get("qubits") or []:
        extra = set(entry) - _QUBIT_KEYS
        if extra:
            raise DeviceError(f"unknown qubit keys: {sorted(extra)}")
        try:
            qubits.append(Qubit(**entry))
        except TypeError as exc:
            raise DeviceError(str(exc)) from exc
    if not qubits:
        raise DeviceError("device needs at least one qubit")
    names = [q.name for q in qubits]
    couplings = {}
    for c in doc.get("couplings") or []:
        if set(c) != {"i", "j", "g_mhz"}:
            raise DeviceError(f"coupling entries need exactly i, j, g_mhz; got {sorted(c)}")
        i, j = (names.index(x) if isinstance(x, str) else int(x) for x in (c["i"], c["j"]))
        couplings[(i, j)] = float(c["g_mhz"])
    return DeviceModel(tuple(qubits), couplings)


def load_device(source: str | Path = "router4") -> DeviceModel:
    """Load a device file, or a bundled fixture by name (``router4``)."""
    if str(source) in BUILTIN_DEVICES:
        text = resources.files("qrouter.data").joinpath(BUILTIN_DEVICES[str(source)]).read_text()
    else:
        path = Path(source)
        if not path.exists():
            raise DeviceError(f"device file {path} does not exist")
        text = path.read_text(encoding="utf-8")
    return device_from_dict(yaml.safe_load(text))


# ---------------------------------------------------------------------------
# readout


def binary_probabilities(state: QuantumState) -> np.ndarray:
    """Born probabilities over bitstrings; any level above 0 reads as 1."""
    p = state.probabilities().reshape(state.dims)
    n = len(state.dims)
    out = np.zeros((2,) * n)
    for idx in np.ndindex(*state.dims):
        out[tuple(min(l, 1) for l in idx)] += p[idx]
    return out.reshape(-1)


def readout_probabilities(state: QuantumState, device: DeviceModel | None = None,
                          qubits: Sequence[int | str] | None = None) -> np.ndarray:
    """Outcome distribution after per-qubit confusion matrices."""
    p = binary_probabilities(state)
    if device is None:
        return p
    n = len(state.dims)
    idx = list(range(n)) if qubits is None else [device.index(q) for q in qubits]
    if len(idx) != n:
        raise DeviceError(f"state has {n} sites but {len(idx)} readout qubits were given")
    t = p.reshape((2,) * n)
    for site, qi in enumerate(idx):
        t = np.moveaxis(np.tensordot(device.qubits[qi].confusion(), t, axes=(1, site)), 0, site)
    out = np.clip(t.reshape(-1), 0.0, None)
    return out / out.sum()


def bitstrings(n: int) -> list[str]:
    return [format(i, f"0{n}b") for i in range(2 ** n)]


def sample_counts(probs: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    if shots < 1:
        raise ValueError("shots must be at least 1")
    return rng.multinomial(shots, probs / probs.sum())


def measure(state: QuantumState, device: DeviceModel | None, shots: int, seed=None,
            qubits: Sequence[int | str] | None = None) -> dict[str, int]:
    """Sample a readout histogram ``{bitstring: count}`` including readout error."""
    rng = np.random.default_rng(seed)
    counts = sample_counts(readout_probabilities(state, device, qubits), shots, rng)
    return dict(zip(bitstrings(len(state.dims)), (int(c) for c in counts)))


# ---------------------------------------------------------------------------
# sequential pairwise coupling measurement


@dataclass(frozen=True)
class CouplingEstimate:
    g_mhz: float
    swap_period_ns: float
    estimates_mhz: tuple[float, ...]
    spectator_detuning_mhz: float


def _swap_trace(gmat_mhz: np.ndarray, detunings_mhz: np.ndarray, i: int, j: int, times: np.ndarray) -> np.ndarray:
    # single-excitation subspace is exact for excitation-conserving exchange
    n = len(detunings_mhz)
    h = mhz(gmat_mhz) + np.diag(mhz(detunings_mhz))
    expr = OperatorExpr([n]).term(1.0, (0, h.astype(complex)))
    psi0 = QuantumState.basis([n], [i])
    return np.array([s.probabilities()[j] for s in trajectory(psi0, expr, times)])


def fit_swap(times: np.ndarray, pj: np.ndarray, min_contrast: float = 0.02) -> tuple[float, float]:
    """Fit ``B sin^2(W t / 2)`` to a transfer trace; return (g, W) in rad/ns."""
    if pj.max() < min_contrast:
        raise NoOscillationError(f"transferred population never exceeds {pj.max():.2e}")
    dt = times[1] - times[0]
    spectrum = np.abs(np.fft.rfft(pj - pj.mean()))
    freqs = np.fft.rfftfreq(len(pj), dt)
    k = int(np.argmax(spectrum[1:])) + 1
    w0 = 2 * np.pi * freqs[k]
    if k == 1 and pj[-1] >= 0.9 * pj.max():
        # less than half a period visible: seed from the early quadratic rise
        w0 = 2 * np.sqrt(pj.max()) / times[-1]
    model = lambda t, b, w: b * np.sin(0.5 * w * t) ** 2
    try:
        (b, w), _ = curve_fit(model, times, pj, p0=(max(pj.max(), 1e-3), w0),
                              bounds=([0.0, 0.0], [1.0, np.inf]), xtol=1e-14, ftol=1e-14, maxfev=20000)
    except RuntimeError as exc:
        raise NoOscillationError(f"swap fit did not converge: {exc}") from exc
    return math.sqrt(b) * w / 2.0, w


def measure_pairwise_coupling(
    device: DeviceModel,
    pair: tuple[int | str, int | str],
    spectator_detuning_mhz: float | None = None,
    t_max_ns: float = 400.0,
    n_samples: int = 2001,
    symmetric: bool = True,
) -> CouplingEstimate:
    """Estimate g_ij from the excitation-swap oscillation between a qubit pair.

    All couplings of the device stay on; every other qubit is parked at
    ``spectator_detuning_mhz`` (default 100 x the largest device coupling).
    With ``symmetric`` the experiment is repeated with the spectators on the
    other side of the pair and the two estimates averaged, cancelling the
    second-order exchange through the spectators.
    """
    i, j = device.index(pair[0]), device.index(pair[1])
    if i == j:
        raise DeviceError("pair must contain two different qubits")
    gmat = device.coupling_matrix_mhz()
    if spectator_detuning_mhz is None:
        gmax = max(device.couplings.values(), default=0.0)
        spectator_detuning_mhz = 100.0 * gmax if gmax > 0 else 1000.0
    times = np.linspace(0.0, t_max_ns, n_samples)
    signs = (1.0, -1.0) if symmetric else (1.0,)
    estimates = []
    for sign in signs:
        det = np.full(len(device), sign * spectator_detuning_mhz)
        det[[i, j]] = 0.0
        g, _ = fit_swap(times, _swap_trace(gmat, det, i, j, times))
        estimates.append(g / (2 * np.pi * 1e-3))
    g_mhz = float(np.mean(estimates))
    if g_mhz <= 0:
        raise NoOscillationError("fitted coupling is zero")
    period = 1.0 / (2.0 * g_mhz * 1e-3)
    if period > 4 * t_max_ns:
        warnings.warn(f"swap period {period:.0f} ns is long compared to the {t_max_ns} ns window")
    return CouplingEstimate(g_mhz, period, tuple(estimates), float(spectator_detuning_mhz))
