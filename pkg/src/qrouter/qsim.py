"""Small dense simulator for coupled qudits in the rotating frame.

Units throughout the package: time in ns, Hamiltonians in angular frequency
(rad/ns). Use :func:`mhz` to convert a frequency quoted as f = omega / 2pi in
MHz into rad/ns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from scipy.linalg import expm

TWO_PI = 2.0 * np.pi

Coefficient = Union[complex, float, Callable[[float], complex]]


class SimulationError(ValueError):
    """Raised for malformed states, operators or evolution requests."""


def mhz(f_mhz):
    """Convert f/2pi in MHz to angular frequency in rad/ns."""
    return TWO_PI * np.asarray(f_mhz, dtype=float) * 1e-3 if np.ndim(f_mhz) else TWO_PI * float(f_mhz) * 1e-3


def ghz(f_ghz):
    return TWO_PI * np.asarray(f_ghz, dtype=float) if np.ndim(f_ghz) else TWO_PI * float(f_ghz)


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class QuantumState:
    """Pure state vector or density matrix over a tensor product of qudits."""

    dims: tuple[int, ...]
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 2 for d in dims):
            raise SimulationError(f"every site needs at least 2 levels, got {dims}")
        data = np.array(self.data, dtype=complex)
        total = math.prod(dims)
        if data.shape == (total,):
            norm = np.vdot(data, data).real
            if abs(norm - 1.0) > 1e-10:
                raise SimulationError(f"pure state not normalised (|psi|^2 = {norm!r})")
        elif data.shape == (total, total):
            if not np.allclose(data, data.conj().T, atol=1e-10, rtol=0):
                raise SimulationError("density matrix is not Hermitian")
            tr = np.trace(data).real
            if abs(tr - 1.0) > 1e-10:
                raise SimulationError(f"density matrix trace is {tr!r}")
            if np.linalg.eigvalsh(data).min() < -1e-9:
                raise SimulationError("density matrix has negative eigenvalues")
        else:
            raise SimulationError(f"data shape {data.shape} incompatible with dims {dims}")
        data.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @property
    def kind(self) -> str:
        return "pure" if self.data.ndim == 1 else "mixed"

    @property
    def is_pure(self) -> bool:
        return self.data.ndim == 1

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @classmethod
    def basis(cls, dims: Sequence[int], levels: Sequence[int]) -> "QuantumState":
        """Computational basis state, e.g. ``basis([2, 2], [1, 0])`` is |10>."""
        dims = tuple(dims)
        if len(levels) != len(dims) or any(not 0 <= l < d for l, d in zip(levels, dims)):
            raise SimulationError(f"levels {levels} out of range for dims {dims}")
        vec = np.zeros(math.prod(dims), dtype=complex)
        vec[np.ravel_multi_index(tuple(levels), dims)] = 1.0
        return cls(dims, vec)

    @classmethod
    def from_label(cls, label: str, dims: Sequence[int] | None = None) -> "QuantumState":
        levels = [int(c) for c in label]
        if dims is None:
            dims = [max(2, l + 1) for l in levels]
        return cls.basis(dims, levels)

    @classmethod
    def normalized(cls, dims: Sequence[int], vec) -> "QuantumState":
        vec = np.asarray(vec, dtype=complex)
        return cls(tuple(dims), vec / np.linalg.norm(vec))

    @classmethod
    def maximally_mixed(cls, dims: Sequence[int]) -> "QuantumState":
        n = math.prod(dims)
        return cls(tuple(dims), np.eye(n, dtype=complex) / n)

    def density(self) -> np.ndarray:
        if self.is_pure:
            return np.outer(self.data, self.data.conj())
        return np.array(self.data)

    def to_mixed(self) -> "QuantumState":
        return self if not self.is_pure else QuantumState(self.dims, self.density())

    def probabilities(self) -> np.ndarray:
        """Populations of the full product basis, flattened in C order."""
        if self.is_pure:
            p = np.abs(self.data) ** 2
        else:
            p = np.real(np.diag(self.data)).copy()
        p = np.clip(p, 0.0, None)
        return p / p.sum()

    def site_populations(self, site: int) -> np.ndarray:
        p = self.probabilities().reshape(self.dims)
        axes = tuple(i for i in range(len(self.dims)) if i != site)
        return p.sum(axis=axes)

    def excited_population(self, site: int) -> float:
        """Probability that ``site`` is found outside its ground level."""
        return float(1.0 - self.site_populations(site)[0])


def _clean_density(rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def _clean_vector(psi: np.ndarray) -> np.ndarray:
    return psi / np.linalg.norm(psi)


# ---------------------------------------------------------------------------
# operators


def local_operator(tag, d: int) -> np.ndarray:
    """Matrix of a single-site operator tag on a ``d``-level site."""
    if isinstance(tag, np.ndarray):
        if tag.shape != (d, d):
            raise SimulationError(f"custom matrix shape {tag.shape} does not match site dimension {d}")
        return tag.astype(complex)
    if isinstance(tag, tuple):
        name, n = tag
        if name != "projector" or not 0 <= n < d:
            raise SimulationError(f"bad local operator {tag!r} for dimension {d}")
        out = np.zeros((d, d), dtype=complex)
        out[n, n] = 1.0
        return out
    a = np.diag(np.sqrt(np.arange(1, d)), 1).astype(complex)
    if tag == "lower":
        return a
    if tag == "raise":
        return a.conj().T
    if tag == "number":
        return np.diag(np.arange(d)).astype(complex)
    if tag == "kerr":
        n = np.arange(d)
        return np.diag(n * (n - 1)).astype(complex)
    if tag == "identity":
        return np.eye(d, dtype=complex)
    raise SimulationError(f"unknown local operator tag {tag!r}")


def embed(dims: Sequence[int], factors: dict[int, np.ndarray]) -> np.ndarray:
    """Kronecker product placing ``factors`` on their sites, identity elsewhere."""
    out = np.ones((1, 1), dtype=complex)
    for site, d in enumerate(dims):
        out = np.kron(out, factors.get(site, np.eye(d, dtype=complex)))
    return out


@dataclass(frozen=True)
class Term:
    coeff: Coefficient
    factors: tuple[tuple[int, object], ...]

    @property
    def time_dependent(self) -> bool:
        return callable(self.coeff)


class OperatorExpr:
    """Sum of coefficient x (product of local site operators).

    Coefficients are numbers or callables ``t -> complex``. Expressions are
    immutable; ``term`` and ``+`` return new objects.
    """

    def __init__(self, dims: Sequence[int], terms: Iterable[Term] = ()):
        self.dims = tuple(int(d) for d in dims)
        self.terms: tuple[Term, ...] = tuple(terms)
        for t in self.terms:
            self._check_term(t)
        self._static: np.ndarray | None = None
        self._dynamic: list[tuple[Callable[[float], complex], np.ndarray]] | None = None

    def _check_term(self, term: Term):
        if term.factors and term.factors[0][0] == "__full__":
            return
        for site, tag in term.factors:
            if not 0 <= site < len(self.dims):
                raise SimulationError(f"site index {site} out of range for {len(self.dims)} sites")
            local_operator(tag, self.dims[site])

    def term(self, coeff: Coefficient, *factors: tuple[int, object]) -> "OperatorExpr":
        return OperatorExpr(self.dims, self.terms + (Term(coeff, tuple(factors)),))

    def hop(self, coeff: Coefficient, i: int, j: int) -> "OperatorExpr":
        """Add ``coeff (a_i^dag a_j + a_j^dag a_i)``."""
        return self.term(coeff, (i, "raise"), (j, "lower")).term(coeff, (j, "raise"), (i, "lower"))

    def __add__(self, other: "OperatorExpr") -> "OperatorExpr":
        if self.dims != other.dims:
            raise SimulationError(f"cannot add operators on {self.dims} and {other.dims}")
        return OperatorExpr(self.dims, self.terms + other.terms)

    @classmethod
    def from_matrix(cls, dims: Sequence[int], matrix, coeff: Coefficient = 1.0) -> "OperatorExpr":
        """Wrap a full-space matrix as a single custom term (one merged site)."""
        dims = tuple(dims)
        matrix = np.asarray(matrix, dtype=complex)
        n = math.prod(dims)
        if matrix.shape != (n, n):
            raise SimulationError(f"matrix shape {matrix.shape} does not match dims {dims}")
        return cls(dims, (Term(coeff, (("__full__", matrix),)),))

    @property
    def time_dependent(self) -> bool:
        return any(t.time_dependent for t in self.terms)

    def _term_matrix(self, term: Term) -> np.ndarray:
        if term.factors and term.factors[0][0] == "__full__":
            return term.factors[0][1]
        mats: dict[int, np.ndarray] = {}
        for site, tag in term.factors:
            m = local_operator(tag, self.dims[site])
            mats[site] = mats[site] @ m if site in mats else m
        return embed(self.dims, mats)

    def _assemble(self):
        if self._static is not None:
            return
        n = math.prod(self.dims)
        static = np.zeros((n, n), dtype=complex)
        dynamic = []
        for term in self.terms:
            m = self._term_matrix(term)
            if term.time_dependent:
                dynamic.append((term.coeff, m))
            else:
                static += complex(term.coeff) * m
        self._static, self._dynamic = static, dynamic

    def matrix(self, t: float = 0.0) -> np.ndarray:
        self._assemble()
        out = self._static.copy()
        for f, m in self._dynamic:
            out += complex(f(t)) * m
        return out

    def is_hermitian(self, times: Iterable[float] = (0.0,), atol: float = 1e-10) -> bool:
        for t in times:
            h = self.matrix(t)
            if not np.allclose(h, h.conj().T, atol=atol, rtol=0):
                return False
        return True


@dataclass(frozen=True)
class LindbladModel:
    """Collapse operators with rates in 1/ns; each entry is ``(operator, rate)``.

    The dissipator for ``(L, gamma)`` is ``gamma (L rho L^dag - {L^dag L, rho}/2)``.
    """

    collapse: tuple = ()

    def __post_init__(self):
        items = tuple((op, float(rate)) for op, rate in self.collapse)
        for _, rate in items:
            if not np.isfinite(rate) or rate < 0:
                raise SimulationError(f"collapse rate must be a nonnegative number, got {rate}")
        object.__setattr__(self, "collapse", items)

    def matrices(self, dims: Sequence[int]) -> list[tuple[np.ndarray, float]]:
        n = math.prod(dims)
        out = []
        for op, rate in self.collapse:
            m = op.matrix(0.0) if isinstance(op, OperatorExpr) else np.asarray(op, dtype=complex)
            if isinstance(op, OperatorExpr) and tuple(op.dims) != tuple(dims):
                raise SimulationError(f"collapse operator dims {op.dims} do not match {tuple(dims)}")
            if m.shape != (n, n):
                raise SimulationError(f"collapse operator shape {m.shape} incompatible with dimension {n}")
            out.append((m, rate))
        return out

    @property
    def empty(self) -> bool:
        return len(self.collapse) == 0


def qudit_noise(dims: Sequence[int], gamma1: Sequence[float], gamma_phi: Sequence[float]) -> LindbladModel:
    """Per-site relaxation ``a`` at rate gamma1 and number-operator dephasing.

    Dephasing uses ``sqrt(2 gamma_phi) n``, which makes 0-1 coherences decay
    at ``gamma_phi``.
    """
    base = OperatorExpr(dims)
    ops = []
    for site, (g1, gp) in enumerate(zip(gamma1, gamma_phi)):
        if g1 > 0:
            ops.append((base.term(1.0, (site, "lower")), g1))
        if gp > 0:
            ops.append((base.term(1.0, (site, "number")), 2.0 * gp))
    return LindbladModel(tuple(ops))


# ---------------------------------------------------------------------------
# time evolution


def _span(t_span) -> tuple[float, float]:
    if np.ndim(t_span) == 0:
        return 0.0, float(t_span)
    t0, t1 = t_span
    return float(t0), float(t1)


def _check_generator(state: QuantumState, hamiltonian: OperatorExpr, t0: float, t1: float):
    if tuple(hamiltonian.dims) != tuple(state.dims):
        raise SimulationError(f"Hamiltonian dims {hamiltonian.dims} do not match state dims {state.dims}")
    probes = np.linspace(t0, t1, 5) if hamiltonian.time_dependent else (t0,)
    if not hamiltonian.is_hermitian(probes):
        raise SimulationError("Hamiltonian is not Hermitian")


def unitary_from_hermitian(h: np.ndarray, tau: float) -> np.ndarray:
    """exp(-i h tau) for Hermitian ``h``."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * tau)) @ v.conj().T


_GAUSS = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)


def _magnus4_step(hfun: Callable[[float], np.ndarray], t: float, h: float) -> np.ndarray:
    # fourth-order Magnus with two Gauss-Legendre nodes; exactly unitary
    h1 = hfun(t + _GAUSS[0] * h)
    h2 = hfun(t + _GAUSS[1] * h)
    k = 0.5 * h * (h1 + h2) - 1j * (math.sqrt(3) / 12) * h * h * (h2 @ h1 - h1 @ h2)
    return unitary_from_hermitian(0.5 * (k + k.conj().T), 1.0)


def _n_steps(t0: float, t1: float, dt_max: float) -> int:
    return max(1, int(math.ceil((t1 - t0) / dt_max - 1e-12)))


def propagator(hamiltonian: OperatorExpr, t_span, dt_max: float = 0.05) -> np.ndarray:
    """Unitary generated by ``hamiltonian`` over ``t_span``."""
    if dt_max <= 0:
        raise SimulationError("dt_max must be positive")
    t0, t1 = _span(t_span)
    if not hamiltonian.time_dependent:
        return unitary_from_hermitian(hamiltonian.matrix(t0), t1 - t0)
    n = _n_steps(t0, t1, dt_max)
    h = (t1 - t0) / n
    u = np.eye(math.prod(hamiltonian.dims), dtype=complex)
    for i in range(n):
        u = _magnus4_step(hamiltonian.matrix, t0 + i * h, h) @ u
    return u


def evolve_pure(state: QuantumState, hamiltonian: OperatorExpr, t_span, dt_max: float = 0.05) -> QuantumState:
    """Schrodinger evolution of a pure state.

    Time-independent Hamiltonians are exponentiated exactly; otherwise a
    fixed-step fourth-order Magnus integrator with steps no longer than
    ``dt_max`` is used.
    """
    if not state.is_pure:
        raise SimulationError("evolve_pure needs a pure state; use evolve_lindblad for density matrices")
    if dt_max <= 0:
        raise SimulationError("dt_max must be positive")
    t0, t1 = _span(t_span)
    _check_generator(state, hamiltonian, t0, t1)
    if not hamiltonian.time_dependent:
        psi = unitary_from_hermitian(hamiltonian.matrix(t0), t1 - t0) @ state.data
        return QuantumState(state.dims, _clean_vector(psi))
    n = _n_steps(t0, t1, dt_max)
    h = (t1 - t0) / n
    psi = np.array(state.data)
    for i in range(n):
        psi = _magnus4_step(hamiltonian.matrix, t0 + i * h, h) @ psi
    return QuantumState(state.dims, _clean_vector(psi))


def liouvillian(h: np.ndarray, collapse: list[tuple[np.ndarray, float]]) -> np.ndarray:
    """Superoperator acting on row-major vec(rho)."""
    n = h.shape[0]
    eye = np.eye(n)
    sup = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for c, rate in collapse:
        cdc = c.conj().T @ c
        sup += rate * (np.kron(c, c.conj()) - 0.5 * np.kron(cdc, eye) - 0.5 * np.kron(eye, cdc.T))
    return sup


def _lindblad_rhs(h: np.ndarray, collapse, rho: np.ndarray) -> np.ndarray:
    out = -1j * (h @ rho - rho @ h)
    for c, rate in collapse:
        cd = c.conj().T
        out += rate * (c @ rho @ cd - 0.5 * (cd @ c @ rho + rho @ cd @ c))
    return out


_SUPEROP_MAX_DIM = 16


def evolve_lindblad(
    state: QuantumState,
    hamiltonian: OperatorExpr,
    noise: LindbladModel,
    t_span,
    dt_max: float = 0.05,
) -> QuantumState:
    """Lindblad master-equation evolution, always returning a density matrix.

    Time-independent problems on at most 16 levels are solved by exponentiating
    the Liouvillian; everything else uses classical RK4 on rho, which keeps the
    trace exactly.
    """
    if dt_max <= 0:
        raise SimulationError("dt_max must be positive")
    t0, t1 = _span(t_span)
    _check_generator(state, hamiltonian, t0, t1)
    collapse = noise.matrices(state.dims)
    rho = state.density()
    n = rho.shape[0]
    if not hamiltonian.time_dependent and n <= _SUPEROP_MAX_DIM:
        prop = expm(liouvillian(hamiltonian.matrix(t0), collapse) * (t1 - t0))
        rho = (prop @ rho.reshape(-1)).reshape(n, n)
        return QuantumState(state.dims, _clean_density(rho))
    steps = _n_steps(t0, t1, dt_max)
    h = (t1 - t0) / steps
    static = None if hamiltonian.time_dependent else hamiltonian.matrix(t0)
    hfun = (lambda t: static) if static is not None else hamiltonian.matrix
    for i in range(steps):
        t = t0 + i * h
        hm = hfun(t + 0.5 * h)
        k1 = _lindblad_rhs(hfun(t), collapse, rho)
        k2 = _lindblad_rhs(hm, collapse, rho + 0.5 * h * k1)
        k3 = _lindblad_rhs(hm, collapse, rho + 0.5 * h * k2)
        k4 = _lindblad_rhs(hfun(t + h), collapse, rho + h * k3)
        rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return QuantumState(state.dims, _clean_density(rho))


def evolve(state: QuantumState, hamiltonian: OperatorExpr, t_span, noise: LindbladModel | None = None,
           dt_max: float = 0.05) -> QuantumState:
    """Dispatch to the closed or open evolution path."""
    if noise is None or noise.empty:
        if state.is_pure:
            return evolve_pure(state, hamiltonian, t_span, dt_max)
        u = propagator(hamiltonian, t_span, dt_max)
        return QuantumState(state.dims, _clean_density(u @ state.data @ u.conj().T))
    return evolve_lindblad(state, hamiltonian, noise, t_span, dt_max)


def trajectory(
    state: QuantumState,
    hamiltonian: OperatorExpr,
    times: Sequence[float],
    noise: LindbladModel | None = None,
    dt_max: float = 0.05,
) -> list[QuantumState]:
    """States at each of the increasing ``times`` (the first is the initial time)."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0 or np.any(np.diff(times) < 0):
        raise SimulationError("times must be a nonempty increasing sequence")
    if not hamiltonian.time_dependent and (noise is None or noise.empty) and state.is_pure:
        _check_generator(state, hamiltonian, times[0], times[0])
        w, v = np.linalg.eigh(hamiltonian.matrix(times[0]))
        c0 = v.conj().T @ state.data
        out = []
        for t in times:
            psi = v @ (np.exp(-1j * w * (t - times[0])) * c0)
            out.append(QuantumState(state.dims, _clean_vector(psi)))
        return out
    out = [state]
    current = state
    for a, b in zip(times[:-1], times[1:]):
        if b > a:
            current = evolve(current, hamiltonian, (a, b), noise, dt_max)
        out.append(current)
    return out


# ---------------------------------------------------------------------------
# gates and measures


def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    u = np.asarray(u)
    return u.ndim == 2 and u.shape[0] == u.shape[1] and np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=atol, rtol=0)


def apply_unitary(state: QuantumState, u, sites: Sequence[int]) -> QuantumState:
    """Apply ``u`` to the listed sites (in the listed order)."""
    u = np.asarray(u, dtype=complex)
    sites = list(sites)
    if len(set(sites)) != len(sites) or any(not 0 <= s < len(state.dims) for s in sites):
        raise SimulationError(f"invalid site list {sites}")
    sub = [state.dims[s] for s in sites]
    k = math.prod(sub)
    if u.shape != (k, k):
        raise SimulationError(f"unitary shape {u.shape} does not match joint dimension {k}")
    if not is_unitary(u):
        raise SimulationError("operator is not unitary")
    nsite = len(state.dims)
    rest = [s for s in range(nsite) if s not in sites]
    perm = sites + rest
    inv = np.argsort(perm)
    ut = u.reshape(sub + sub)
    if state.is_pure:
        psi = state.data.reshape(state.dims).transpose(perm)
        psi = np.tensordot(ut, psi, axes=(list(range(len(sites), 2 * len(sites))), list(range(len(sites)))))
        psi = psi.transpose(inv).reshape(-1)
        return QuantumState(state.dims, _clean_vector(psi))
    full = embed_unitary(state.dims, u, sites)
    rho = full @ state.data @ full.conj().T
    return QuantumState(state.dims, _clean_density(rho))


def embed_unitary(dims: Sequence[int], u: np.ndarray, sites: Sequence[int]) -> np.ndarray:
    """Full-space matrix of ``u`` acting on ``sites``."""
    dims = tuple(dims)
    n = math.prod(dims)
    sites = list(sites)
    k = len(sites)
    sub = [dims[s] for s in sites]
    perm = sites + [s for s in range(len(dims)) if s not in sites]
    cols = np.eye(n, dtype=complex).reshape(dims + (n,)).transpose(perm + [len(dims)])
    out = np.tensordot(np.asarray(u, dtype=complex).reshape(sub + sub), cols,
                       axes=(list(range(k, 2 * k)), list(range(k))))
    out = out.transpose(list(np.argsort(perm)) + [len(dims)])
    return out.reshape(n, n)


def rx(theta: float, phase: float = 0.0, d: int = 2) -> np.ndarray:
    """Rotation by ``theta`` about the equatorial axis at angle ``phase`` from X.

    On qutrits the rotation acts on the 0-1 subspace and leaves level 2 alone.
    """
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    u = np.eye(d, dtype=complex)
    u[:2, :2] = [[c, -1j * s * np.exp(-1j * phase)], [-1j * s * np.exp(1j * phase), c]]
    return u


def x90(phase: float = 0.0, d: int = 2) -> np.ndarray:
    """X(phase)/2 pulse; ``x90()`` is X/2 and ``x90(pi/2)`` is Y/2."""
    return rx(math.pi / 2, phase, d)


def xgate(d: int = 2) -> np.ndarray:
    return rx(math.pi, 0.0, d)


def fidelity(a: QuantumState, b: QuantumState) -> float:
    """State fidelity.

    ``|<a|b>|^2`` for two pure states, ``<psi|rho|psi>`` = tr(rho_ideal rho)
    when one side is pure, and the Uhlmann fidelity for two mixed states.
    """
    if a.dims != b.dims:
        raise SimulationError(f"dimension mismatch: {a.dims} vs {b.dims}")
    if a.is_pure and b.is_pure:
        f = abs(np.vdot(a.data, b.data)) ** 2
    elif a.is_pure or b.is_pure:
        psi, rho = (a.data, b.data) if a.is_pure else (b.data, a.data)
        f = np.real(np.vdot(psi, rho @ psi))
    else:
        w, v = np.linalg.eigh(a.data)
        sq = (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T
        ev = np.linalg.eigvalsh(sq @ b.data @ sq)
        f = np.sum(np.sqrt(np.clip(ev, 0, None))) ** 2
    return float(min(1.0, max(0.0, f)))


def random_hermitian(n: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    m = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (m + m.conj().T) / math.sqrt(n)


def random_state(dims: Sequence[int], rng: np.random.Generator) -> QuantumState:
    n = math.prod(dims)
    return QuantumState.normalized(dims, rng.normal(size=n) + 1j * rng.normal(size=n))
