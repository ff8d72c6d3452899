"""Cross-entropy benchmarking: circuits, sequence fidelity, decay fits and bootstrap."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import f as f_dist, unitary_group

from .device import DeviceModel, readout_probabilities
from .protocols import GateTarget
from .qsim import QuantumState

FULL_DEPTHS = (1, 2, 3, 5, 8, 12, 17, 23)
FULL_K = 100
TRAIN_DEPTH = 3
TRAIN_K = 10
DEFAULT_SHOTS = 1020
DEFAULT_RESAMPLES = 1000


class XebError(ValueError):
    """Invalid benchmarking input."""


@dataclass(frozen=True)
class XebCircuit:
    """``depth`` cycles of Haar single-qubit layers, each followed by the interleaved gate."""

    depth: int
    layers: np.ndarray  # (depth, n_qubits, 2, 2)
    interleave: GateTarget | None
    seed: tuple[int, ...]

    @property
    def n_qubits(self) -> int:
        return self.layers.shape[1]


def as_seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def _circuit_seed(seed, depth_index: int, circuit_index: int) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=tuple(seed.spawn_key) + (depth_index, circuit_index))
    return np.random.SeedSequence(seed, spawn_key=(depth_index, circuit_index))


def generate_circuits(n_qubits: int, depths: Sequence[int], k: int, interleave: GateTarget | None = None,
                      seed=0) -> list[XebCircuit]:
    """Random circuits, ``k`` per depth, regenerable from ``seed``.

    Circuit ``c`` at depth index ``j`` draws its layers from the seed
    sequence ``(seed, spawn_key=(j, c))``, so adding depths or circuits does
    not change the existing ones.
    """
    depths = [int(m) for m in depths]
    if not depths:
        raise XebError("depth list is empty")
    if any(m < 1 for m in depths):
        raise XebError("depths must be at least 1")
    if k < 1:
        raise XebError("need at least one circuit per depth")
    if interleave is not None and interleave.dimension != 2 ** n_qubits:
        raise XebError(f"interleaved gate acts on {interleave.dimension} levels, circuits on {2 ** n_qubits}")
    out = []
    for j, m in enumerate(depths):
        for c in range(k):
            ss = _circuit_seed(seed, j, c)
            layers = unitary_group.rvs(2, size=m * n_qubits, random_state=np.random.default_rng(ss))
            out.append(XebCircuit(m, np.reshape(layers, (m, n_qubits, 2, 2)), interleave,
                                  (int(ss.entropy),) + tuple(ss.spawn_key)))
    return out


# ---------------------------------------------------------------------------
# simulation


@dataclass(frozen=True)
class XebNoise:
    """Depolarizing noise: global per cycle, and per qubit after each single-qubit layer."""

    cycle_depolarizing: float = 0.0
    layer_depolarizing: tuple[float, ...] = ()

    @classmethod
    def from_sqg_fidelity(cls, f_sqg: Sequence[float], cycle_depolarizing: float = 0.0) -> "XebNoise":
        """Per-qubit depolarizing strength ``2 (1 - F)`` matching an average gate fidelity F."""
        return cls(cycle_depolarizing, tuple(2.0 * (1.0 - f) for f in f_sqg))

    @property
    def empty(self) -> bool:
        return self.cycle_depolarizing == 0 and not any(self.layer_depolarizing)


GateImpl = np.ndarray | Callable[[np.ndarray], np.ndarray]


def _kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(a.shape[0] * b.shape[0], -1)


def _layer_matrix(layer: np.ndarray, levels: int) -> np.ndarray:
    out = None
    for u in layer:
        if levels != 2:
            full = np.eye(levels, dtype=complex)
            full[:2, :2] = u
            u = full
        out = u if out is None else _kron(out, u)
    return out


def _local_depolarize(rho: np.ndarray, n: int, site: int, p: float) -> np.ndarray:
    t = rho.reshape((2,) * (2 * n))
    reduced = np.trace(t, axis1=site, axis2=n + site)
    mixed = np.moveaxis(np.multiply.outer(reduced, np.eye(2) / 2), [2 * n - 2, 2 * n - 1], [site, n + site])
    return ((1 - p) * t + p * mixed).reshape(rho.shape)


def _binary_probs(p: np.ndarray, n: int, levels: int) -> np.ndarray:
    if levels == 2:
        return p
    t = p.reshape((levels,) * n)
    out = np.zeros((2,) * n)
    for idx in np.ndindex(*t.shape):
        out[tuple(min(l, 1) for l in idx)] += t[idx]
    return out.reshape(-1)


def _depolarized(p: np.ndarray, noise: XebNoise, depth: int) -> np.ndarray:
    # a global depolarizing channel commutes with every unitary in the circuit
    f = (1.0 - noise.cycle_depolarizing) ** depth
    return f * p + (1.0 - f) / len(p)


def circuit_probabilities(circuit: XebCircuit, gate: GateImpl | None = None, levels: int = 2,
                          noise: XebNoise | None = None) -> np.ndarray:
    """Outcome distribution over bitstrings; levels above 1 read as 1.

    ``gate`` replaces the ideal interleaved unitary: a matrix on
    ``levels ** n`` states, or a callable mapping a state vector to a state
    vector (closed evolution only).
    """
    n = circuit.n_qubits
    dim = levels ** n
    if circuit.interleave is not None and gate is None:
        if levels != 2:
            raise XebError("supply the gate implementation when simulating with leakage levels")
        gate = circuit.interleave.unitary
    if noise is not None and not any(noise.layer_depolarizing) and noise.cycle_depolarizing and levels == 2:
        return _depolarized(circuit_probabilities(circuit, gate, levels), noise, circuit.depth)
    noisy = noise is not None and not noise.empty
    if noisy and (levels != 2 or callable(gate)):
        raise XebError("depolarizing noise needs qubit-level simulation with a matrix gate")
    psi = np.zeros(dim, dtype=complex)
    psi[0] = 1.0
    rho = np.outer(psi, psi.conj()) if noisy else None
    for layer in circuit.layers:
        if noisy:
            u = _layer_matrix(layer, levels)
            rho = u @ rho @ u.conj().T
            for q, p in enumerate(noise.layer_depolarizing):
                if p:
                    rho = _local_depolarize(rho, n, q, p)
            if circuit.interleave is not None:
                rho = gate @ rho @ gate.conj().T
            lam = noise.cycle_depolarizing
            if lam:
                rho = (1 - lam) * rho + lam * np.trace(rho) * np.eye(dim) / dim
        else:
            psi = _layer_matrix(layer, levels) @ psi
            if circuit.interleave is not None:
                psi = gate(psi) if callable(gate) else gate @ psi
    probs = np.real(np.diag(rho)) if noisy else np.abs(psi) ** 2
    probs = np.clip(probs, 0.0, None)
    return _binary_probs(probs / probs.sum(), n, levels)


def ideal_probabilities(circuit: XebCircuit) -> np.ndarray:
    return circuit_probabilities(circuit)


@dataclass(frozen=True)
class XebRecord:
    depth: int
    index: int
    p_ideal: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if abs(self.p_ideal.sum() - 1) > 1e-9:
            raise XebError("ideal distribution does not sum to 1")
        if self.shots <= 0:
            raise XebError("record has no shots")

    @property
    def shots(self) -> int:
        return int(np.sum(self.counts))

    @property
    def p_exp(self) -> np.ndarray:
        return self.counts / self.shots

    @property
    def kernel(self) -> float:
        return xeb_kernel(self.p_ideal, self.p_exp)


def sample_records(circuits: Sequence[XebCircuit], shots: int, seed=0, gate: GateImpl | None = None,
                   levels: int = 2, noise: XebNoise | None = None, device: DeviceModel | None = None,
                   readout_qubits=None) -> list[XebRecord]:
    """Simulate every circuit and draw ``shots`` readout samples from it."""
    if shots < 1:
        raise XebError("shots must be at least 1")
    rngs = [np.random.default_rng(s) for s in as_seed_sequence(seed).spawn(len(circuits))]
    index: dict[int, int] = {}
    out = []
    for circ, rng in zip(circuits, rngs):
        ideal = ideal_probabilities(circ)
        if gate is None and (noise is None or noise.empty):
            p = ideal
        elif gate is None and not any(noise.layer_depolarizing):
            p = _depolarized(ideal, noise, circ.depth)
        else:
            p = circuit_probabilities(circ, gate, levels, noise)
        if device is not None:
            binary = QuantumState((2,) * circ.n_qubits, np.diag(p).astype(complex))
            p = readout_probabilities(binary, device, readout_qubits)
        counts = rng.multinomial(shots, p / p.sum())
        i = index.get(circ.depth, 0)
        index[circ.depth] = i + 1
        out.append(XebRecord(circ.depth, i, ideal, counts))
    return out


# ---------------------------------------------------------------------------
# estimators


def xeb_kernel(p_ideal, p_exp) -> float:
    """``sum p_ideal p_exp / sum p_ideal^2``."""
    p_ideal = np.asarray(p_ideal, dtype=float)
    p_exp = np.asarray(p_exp, dtype=float)
    if p_ideal.shape != p_exp.shape:
        raise XebError("distribution shapes differ")
    return float(np.dot(p_ideal, p_exp) / np.dot(p_ideal, p_ideal))


def sequence_fidelity(records: Sequence[XebRecord]) -> float:
    """Kernel averaged over the circuits of one depth."""
    if not records:
        raise XebError("no circuits at this depth")
    return float(np.mean([r.kernel for r in records]))


def oxebit_reward(records: Sequence[XebRecord]) -> float:
    """Minimum kernel over a batch of circuits."""
    if not records:
        raise XebError("no circuits in batch")
    return float(min(r.kernel for r in records))


def group_by_depth(records: Sequence[XebRecord]) -> dict[int, list[XebRecord]]:
    out: dict[int, list[XebRecord]] = {}
    for r in records:
        out.setdefault(r.depth, []).append(r)
    return dict(sorted(out.items()))


def fidelity_curve(records: Sequence[XebRecord]) -> tuple[np.ndarray, np.ndarray]:
    groups = group_by_depth(records)
    return np.array(list(groups), dtype=float), np.array([sequence_fidelity(g) for g in groups.values()])


@dataclass(frozen=True)
class DecayFit:
    a: float
    b: float
    p: float
    sigma: tuple[float, float, float]
    residual_rms: float
    identifiable: bool
    converged: bool
    message: str = ""


def _varpro(m, f, p):
    basis = np.column_stack([p ** m, np.ones_like(m)])
    coef, *_ = np.linalg.lstsq(basis, f, rcond=None)
    return coef, float(np.sum((basis @ coef - f) ** 2))


def fit_decay(depths, fidelities, p_floor: float = 1e-6) -> DecayFit:
    """Fit ``F(m) = A p^m + B`` with ``0 < p <= 1``.

    A dense grid over p with (A, B) solved linearly provides the start for a
    bounded nonlinear least-squares refinement. The decay is flagged as not
    identifiable when the fitted exponential changes F by less than the
    residual scale over the depth range, when it does not beat a constant
    under an F-test at the 1% level, or when p sits at the upper bound.
    Unidentifiable fits are reported as the flat model ``A = 0, p = 1``.
    """
    m = np.asarray(depths, dtype=float)
    f = np.asarray(fidelities, dtype=float)
    if m.shape != f.shape or len(np.unique(m)) < 3:
        raise XebError("need fidelities at three or more distinct depths")
    if not np.all(np.isfinite(f)):
        raise XebError("non-finite sequence fidelity")
    grid = np.concatenate([np.linspace(0.05, 0.9, 86), 1 - np.geomspace(0.1, 1e-5, 200)])
    scores = [(_varpro(m, f, p)[1], p) for p in grid]
    _, p0 = min(scores)
    (a0, b0), _ = _varpro(m, f, p0)

    def resid(x):
        return x[0] * x[2] ** m + x[1] - f

    fit = least_squares(resid, [a0, b0, p0], bounds=([-np.inf, -np.inf, p_floor], [np.inf, np.inf, 1.0]),
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10000)
    a, b, p = fit.x
    r = resid(fit.x)
    rms = float(np.sqrt(np.mean(r ** 2)))
    dof = len(m) - 3
    s2 = float(np.sum(r ** 2) / dof) if dof > 0 else 0.0
    jac = fit.jac
    try:
        cov = np.linalg.pinv(jac.T @ jac) * s2
        sig = tuple(float(math.sqrt(max(c, 0.0))) for c in np.diag(cov))
    except np.linalg.LinAlgError:
        sig = (math.inf,) * 3
    span = abs(a) * abs(p ** m.min() - p ** m.max())
    scale = max(rms, 1e-12 * max(1.0, np.abs(f).max()))
    identifiable = bool(span > 3 * scale and p < 1.0 - 1e-12)
    if identifiable and dof > 0:
        # the decay must also beat a constant by more than noise would
        sse, sse_flat = float(np.sum(r ** 2)), float(np.sum((f - f.mean()) ** 2))
        identifiable = sse == 0.0 or (sse_flat - sse) / 2 / (sse / dof) > f_dist.ppf(0.99, 2, dof)
    msg = "" if identifiable else "decay constant not identifiable from these data"
    if not identifiable:
        # no detectable decay: report the flat model
        a, b, p = 0.0, float(f.mean()), 1.0
    if not fit.success:
        msg = f"fit did not converge: {fit.message}"
    return DecayFit(float(a), float(b), float(p), sig, rms, identifiable, bool(fit.success), msg)


def interleaved_fidelity(p_gate: float, p_ref: float, d: int) -> float:
    """``1 - ((d - 1)/d)(1 - p_gate / p_ref)``."""
    if p_ref <= 0:
        raise XebError("reference decay must be positive")
    f = 1.0 - (d - 1) / d * (1.0 - p_gate / p_ref)
    if f > 1.0:
        warnings.warn(f"interleaved fidelity {f:.5f} exceeds 1 (statistical fluctuation)")
    return f


def propagate_sigma(mu_gate: float, mu_ref: float, sigma_gate: float, sigma_ref: float, d: int) -> tuple[float, float]:
    """Mean and standard deviation of the gate fidelity from the decay statistics."""
    ratio = mu_gate / mu_ref
    mean = 1.0 - (d - 1) / d * (1.0 - ratio)
    sigma = (d - 1) / d * math.sqrt(ratio ** 2 * ((sigma_gate / mu_gate) ** 2 + (sigma_ref / mu_ref) ** 2))
    return mean, sigma


@dataclass(frozen=True)
class BootstrapResult:
    fidelity: float
    sigma: float
    mu_gate: float
    mu_ref: float
    sigma_gate: float
    sigma_ref: float
    p_gate: np.ndarray
    p_ref: np.ndarray


def bootstrap_decays(records: Sequence[XebRecord], resamples: int, rng: np.random.Generator) -> np.ndarray:
    """Decay constants refitted on datasets resampled with replacement within each depth."""
    groups = group_by_depth(records)
    if any(len(g) < 2 for g in groups.values()):
        raise XebError("bootstrap needs at least two circuits per depth")
    depths = np.array(list(groups), dtype=float)
    kernels = [np.array([r.kernel for r in g]) for g in groups.values()]
    out = np.empty(resamples)
    for i in range(resamples):
        f = [k[rng.integers(0, len(k), len(k))].mean() for k in kernels]
        out[i] = fit_decay(depths, f).p
    return out


def bootstrap_uncertainty(gate_records: Sequence[XebRecord], ref_records: Sequence[XebRecord], d: int,
                          resamples: int = DEFAULT_RESAMPLES, seed=0) -> BootstrapResult:
    rng_g, rng_r = (np.random.default_rng(s) for s in as_seed_sequence(seed).spawn(2))
    pg = bootstrap_decays(gate_records, resamples, rng_g)
    pr = bootstrap_decays(ref_records, resamples, rng_r)
    mg, mr = float(pg.mean()), float(pr.mean())
    sg, sr = float(pg.std(ddof=1)), float(pr.std(ddof=1))
    f, s = propagate_sigma(mg, mr, sg, sr, d)
    return BootstrapResult(f, s, mg, mr, sg, sr, pg, pr)


def decoherence_bound(device: DeviceModel, qubits: Sequence, tau_ns: float) -> float:
    """``(d / (2 (d + 1))) tau sum_k (Gamma1_k + Gamma_phi_k)`` with ``d = 2^N``."""
    d = 2 ** len(qubits)
    total = 0.0
    for q in qubits:
        qb = device.qubits[device.index(q)]
        if qb.gamma_phi < 0:
            raise XebError(f"{qb.name}: negative pure dephasing rate")
        total += qb.gamma1 + qb.gamma_phi
    return d / (2 * (d + 1)) * tau_ns * total


@dataclass(frozen=True)
class XebReport:
    depths: tuple[int, ...]
    k: int
    shots: int
    f_gate: tuple[float, ...]
    f_ref: tuple[float, ...]
    fit_gate: DecayFit
    fit_ref: DecayFit
    fidelity: float
    sigma: float

    def to_dict(self) -> dict:
        fit = lambda x: {"A": x.a, "B": x.b, "p": x.p, "sigma": list(x.sigma), "residual_rms": x.residual_rms,
                         "identifiable": x.identifiable}
        return {"depths": list(self.depths), "k": self.k, "shots": self.shots,
                "F_gate": list(self.f_gate), "F_ref": list(self.f_ref),
                "fit_gate": fit(self.fit_gate), "fit_ref": fit(self.fit_ref),
                "fidelity": self.fidelity, "sigma": self.sigma}


def interleaved_xeb(target: GateTarget, gate: GateImpl | None = None, depths: Sequence[int] = FULL_DEPTHS,
                    k: int = FULL_K, shots: int = DEFAULT_SHOTS, seed=0, noise: XebNoise | None = None,
                    resamples: int = DEFAULT_RESAMPLES) -> tuple[XebReport, list[XebRecord], list[XebRecord]]:
    """Reference and interleaved benchmarking of ``gate`` against ``target``."""
    n = int(round(math.log2(target.dimension)))
    s_ref, s_gate, s_shots_r, s_shots_g, s_boot = as_seed_sequence(seed).spawn(5)
    ref_c = generate_circuits(n, depths, k, None, s_ref)
    gate_c = generate_circuits(n, depths, k, target, s_gate)
    ref = sample_records(ref_c, shots, s_shots_r, noise=noise)
    rec = sample_records(gate_c, shots, s_shots_g, gate=gate, noise=noise)
    m, fr = fidelity_curve(ref)
    _, fg = fidelity_curve(rec)
    fit_r, fit_g = fit_decay(m, fr), fit_decay(m, fg)
    boot = bootstrap_uncertainty(rec, ref, target.dimension, resamples, s_boot)
    report = XebReport(tuple(int(x) for x in m), k, shots, tuple(fg), tuple(fr), fit_g, fit_r,
                       boot.fidelity, boot.sigma)
    return report, rec, ref
