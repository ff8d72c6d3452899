"""Control schedules, waveform rendering, Gaussian filtering and flux distortion.

Controls are frequency detunings (or couplings) in MHz. A schedule with
``n_segments`` knots spread evenly over the duration (knot k sits at
``k T / (n_segments - 1)``) is rendered either as a nearest-knot step
function or as a monotone cubic through the knots.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import least_squares, minimize_scalar
from scipy.signal import lfilter

from .qsim import QuantumState, apply_unitary

SMOOTHING_MODES = ("none", "interpolate")


class ScheduleError(ValueError):
    """Invalid control schedule."""


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant control channels.

    Parameters
    ----------
    channels : mapping of channel name to knot values (MHz)
        Either all ``n_segments`` values, whose padding entries are forced to
        zero, or only the ``n_segments - 2 * padding`` free values.
    duration_ns : float
    n_segments : int
        Knots including the zero paddings.
    padding : int
        Zero knots at each end.
    smoothing : {"none", "interpolate"}
    filter_mhz : float or None
        Gaussian filter cutoff applied after rendering.
    """

    channels: Mapping[str, Sequence[float]]
    duration_ns: float
    n_segments: int = 8
    padding: int = 1
    smoothing: str = "none"
    filter_mhz: float | None = None
    _values: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.duration_ns > 0:
            raise ScheduleError("schedule duration must be positive")
        if self.n_segments < 2:
            raise ScheduleError("need at least two segments")
        if self.padding < 0 or 2 * self.padding >= self.n_segments:
            raise ScheduleError(f"padding {self.padding} leaves no free segment out of {self.n_segments}")
        if self.smoothing not in SMOOTHING_MODES:
            raise ScheduleError(f"smoothing must be one of {SMOOTHING_MODES}, got {self.smoothing!r}")
        if self.filter_mhz is not None and not self.filter_mhz > 0:
            raise ScheduleError("filter cutoff must be positive")
        values = {}
        for name, v in dict(self.channels).items():
            v = np.asarray(v, dtype=float).reshape(-1)
            if not np.all(np.isfinite(v)):
                raise ScheduleError(f"channel {name!r} has non-finite values")
            if len(v) == self.n_free:
                full = np.zeros(self.n_segments)
                full[self.padding:self.n_segments - self.padding] = v
            elif len(v) == self.n_segments:
                full = v.copy()
                full[:self.padding] = 0.0
                full[self.n_segments - self.padding:] = 0.0
            else:
                raise ScheduleError(
                    f"channel {name!r} has {len(v)} values; expected {self.n_free} or {self.n_segments}")
            full.setflags(write=False)
            values[name] = full
        object.__setattr__(self, "channels", {k: tuple(v) for k, v in values.items()})
        object.__setattr__(self, "_values", values)

    @property
    def n_free(self) -> int:
        return self.n_segments - 2 * self.padding

    @property
    def knot_times(self) -> np.ndarray:
        return np.linspace(0.0, self.duration_ns, self.n_segments)

    def values(self, channel: str) -> np.ndarray:
        return self._values[channel]

    def free_values(self, channel: str) -> np.ndarray:
        return self._values[channel][self.padding:self.n_segments - self.padding].copy()

    @classmethod
    def from_action(cls, action: Sequence[float], names: Sequence[str], duration_ns: float, **kwargs) -> "ControlSchedule":
        """Split a flat action vector into equal-length free-value blocks per channel."""
        action = np.asarray(action, dtype=float)
        if len(action) % len(names):
            raise ScheduleError(f"action length {len(action)} not divisible by {len(names)} channels")
        blocks = action.reshape(len(names), -1)
        return cls(dict(zip(names, blocks)), duration_ns, **kwargs)


def sample_times(duration_ns: float, sample_rate: float) -> np.ndarray:
    """Sample centres ``(i + 0.5) / rate`` for ``round(duration * rate)`` samples."""
    n = int(round(duration_ns * sample_rate))
    if n < 1:
        raise ScheduleError(f"duration {duration_ns} ns gives no samples at {sample_rate} GS/s")
    return (np.arange(n) + 0.5) / sample_rate


def render_channel(schedule: ControlSchedule, channel: str, sample_rate: float = 1.0) -> np.ndarray:
    if schedule.filter_mhz is not None and sample_rate * 1e3 <= 2 * schedule.filter_mhz:
        raise ScheduleError(
            f"sample rate {sample_rate} GS/s is not above twice the {schedule.filter_mhz} MHz cutoff")
    t = sample_times(schedule.duration_ns, sample_rate)
    knots, v = schedule.knot_times, schedule.values(channel)
    if schedule.smoothing == "none":
        spacing = knots[1] - knots[0]
        idx = np.clip(np.floor(t / spacing + 0.5).astype(int), 0, len(v) - 1)
        wave = v[idx]
    else:
        wave = PchipInterpolator(knots, v)(t)
    if schedule.filter_mhz is not None:
        wave = gaussian_filter(wave, schedule.filter_mhz, sample_rate)
    return wave


def render_waveform(schedule: ControlSchedule, sample_rate: float = 1.0) -> dict[str, np.ndarray]:
    """Sample every channel at ``sample_rate`` GS/s."""
    return {name: render_channel(schedule, name, sample_rate) for name in schedule.channels}


# ---------------------------------------------------------------------------
# Gaussian filter


CUTOFF_GAIN = 0.5


def gaussian_transfer(f_mhz, cutoff_mhz: float) -> np.ndarray:
    """Amplitude response ``exp(-f^2 / (2 sigma_f^2))`` with gain 0.5 at the cutoff."""
    sigma_f = cutoff_mhz / math.sqrt(2.0 * math.log(1.0 / CUTOFF_GAIN))
    return np.exp(-0.5 * (np.asarray(f_mhz) / sigma_f) ** 2)


def gaussian_filter(waveform, cutoff_mhz: float, sample_rate: float = 1.0) -> np.ndarray:
    """Gaussian low-pass filter applied in the frequency domain.

    The waveform is padded with its edge values by several kernel widths so
    that constant segments at the ends pass through unchanged.
    """
    if not cutoff_mhz > 0:
        raise ValueError("cutoff must be positive")
    x = np.asarray(waveform, dtype=float)
    if x.size == 0:
        return x.copy()
    sigma_f = cutoff_mhz / math.sqrt(2.0 * math.log(1.0 / CUTOFF_GAIN))
    sigma_t_samples = sample_rate * 1e3 / (2 * math.pi * sigma_f)
    pad = int(math.ceil(10 * sigma_t_samples)) + 8
    xp = np.pad(x, pad, mode="edge")
    f = np.fft.rfftfreq(len(xp), 1.0 / (sample_rate * 1e3))
    y = np.fft.irfft(np.fft.rfft(xp) * gaussian_transfer(f, cutoff_mhz), n=len(xp))
    return y[pad:pad + len(x)]


def bandwidth_mhz(waveform, sample_rate: float = 1.0, level_db: float = -20.0) -> float:
    """Highest frequency whose amplitude spectrum is within ``level_db`` of its peak."""
    x = np.asarray(waveform, dtype=float)
    spectrum = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    f = np.fft.rfftfreq(len(x), 1.0 / (sample_rate * 1e3))
    if spectrum.max() == 0:
        return 0.0
    above = np.nonzero(spectrum >= spectrum.max() * 10 ** (level_db / 20))[0]
    return float(f[above[-1]])


# ---------------------------------------------------------------------------
# flux distortion


@dataclass(frozen=True)
class DistortionModel:
    """Step response ``s(t) = 1 + sum_k A_k exp(-t / tau_k)`` (tau in ns)."""

    poles: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        poles = tuple((float(a), float(tau)) for a, tau in self.poles)
        for a, tau in poles:
            if not np.isfinite(a):
                raise ValueError("pole amplitude must be finite")
            if not (np.isfinite(tau) and tau > 0):
                raise ValueError(f"decay time must be positive, got {tau}")
        object.__setattr__(self, "poles", poles)

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([a for a, _ in self.poles])

    @property
    def taus(self) -> np.ndarray:
        return np.array([tau for _, tau in self.poles])

    def step_response(self, t_ns) -> np.ndarray:
        t = np.asarray(t_ns, dtype=float)
        out = np.ones_like(t)
        for a, tau in self.poles:
            out = out + a * np.exp(-t / tau)
        return out

    def coefficients(self, sample_rate: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
        """IIR ``(num, den)`` of ``1 + sum_k A_k (1 - z^-1) / (1 - lambda_k z^-1)``."""
        dt = 1.0 / sample_rate
        den = np.array([1.0])
        for _, tau in self.poles:
            den = np.convolve(den, [1.0, -math.exp(-dt / tau)])
        num = den.copy()
        for k, (a, tau) in enumerate(self.poles):
            part = np.array([a, -a])
            for j, (_, tau_j) in enumerate(self.poles):
                if j != k:
                    part = np.convolve(part, [1.0, -math.exp(-dt / tau_j)])
            num[:len(part)] += part
        return num, den


def apply_distortion(waveform, model: DistortionModel, sample_rate: float = 1.0) -> np.ndarray:
    """Waveform seen by the qubit after the line's distortion."""
    if not model.poles:
        return np.asarray(waveform, dtype=float).copy()
    num, den = model.coefficients(sample_rate)
    return lfilter(num, den, np.asarray(waveform, dtype=float))


def predistort(waveform, model: DistortionModel, sample_rate: float = 1.0) -> np.ndarray:
    """Exact inverse filter of ``apply_distortion``."""
    if not model.poles:
        return np.asarray(waveform, dtype=float).copy()
    num, den = model.coefficients(sample_rate)
    if len(num) > 1 and np.any(np.abs(np.roots(num)) >= 1.0):
        raise ValueError("distortion model has no stable inverse")
    return lfilter(den, num, np.asarray(waveform, dtype=float))


def square_pulse(amplitude: float, length_ns: float, total_ns: float, sample_rate: float = 1.0) -> np.ndarray:
    n = int(round(total_ns * sample_rate))
    out = np.zeros(n)
    out[:int(round(length_ns * sample_rate))] = amplitude
    return out


class FluxProbeEnv:
    """Single qubit behind a hidden distortion, probed by Ramsey-style phase tomography.

    Each probe prepares the equator state, plays a square detuning pulse
    through the hidden line, idles for a delay and reads out the accumulated
    phase from ``<X>`` and ``<Y>``.
    """

    def __init__(self, hidden: DistortionModel, amplitude_mhz: float = 20.0, length_ns: float = 100.0,
                 sample_rate: float = 1.0, shots: int | None = None, seed=None):
        self._hidden = hidden
        self.amplitude_mhz = float(amplitude_mhz)
        self.length_ns = float(length_ns)
        self.sample_rate = float(sample_rate)
        self.shots = shots
        self._rng = np.random.default_rng(seed)

    def detuning(self, delay_ns: float, predistortion: DistortionModel | None = None) -> np.ndarray:
        x = square_pulse(self.amplitude_mhz, self.length_ns, self.length_ns + delay_ns, self.sample_rate)
        if predistortion is not None:
            x = predistort(x, predistortion, self.sample_rate)
        return apply_distortion(x, self._hidden, self.sample_rate)

    def phase(self, delay_ns: float, predistortion: DistortionModel | None = None) -> float:
        """Accumulated phase ``atan2(-<Y>, <X>)`` after the pulse and the delay."""
        delta = self.detuning(delay_ns, predistortion)
        phi = 2 * math.pi * 1e-3 * np.sum(delta) / self.sample_rate
        # H = 2 pi delta n is diagonal, so the propagator is a phase on |1>
        plus = QuantumState((2,), np.array([1.0, 1.0]) / math.sqrt(2))
        psi = apply_unitary(plus, np.diag([1.0, np.exp(-1j * phi)]), [0])
        c0, c1 = psi.data
        ex, ey = 2 * np.real(np.conj(c0) * c1), 2 * np.imag(np.conj(c0) * c1)
        if self.shots:
            ex = 2 * self._rng.binomial(self.shots, 0.5 * (1 + ex)) / self.shots - 1
            ey = 2 * self._rng.binomial(self.shots, 0.5 * (1 + ey)) / self.shots - 1
        return math.atan2(-ey, ex)

    def ideal_phase(self, delay_ns: float) -> float:
        n = int(round(self.length_ns * self.sample_rate))
        return 2 * math.pi * 1e-3 * self.amplitude_mhz * n / self.sample_rate


def _wrap(x):
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class DistortionFit:
    model: DistortionModel
    residual_rms: float
    underdetermined: bool
    delays_ns: tuple[float, ...]


def _pole_basis(env: FluxProbeEnv, taus: Sequence[float], delays: np.ndarray) -> np.ndarray:
    # excess phase at each delay per unit pole amplitude; linear in A for fixed tau
    total = env.length_ns + delays.max()
    x = square_pulse(env.amplitude_mhz, env.length_ns, total, env.sample_rate)
    ends = np.round((env.length_ns + delays) * env.sample_rate).astype(int)
    cols = []
    for tau in taus:
        y = apply_distortion(x, DistortionModel(((1.0, tau),)), env.sample_rate) - x
        c = np.concatenate([[0.0], np.cumsum(y)]) * 2 * math.pi * 1e-3 / env.sample_rate
        cols.append(c[ends])
    return np.array(cols).T


def calibrate_predistortion(env: FluxProbeEnv, delays_ns: Sequence[float] | None = None, n_poles: int = 1,
                            tau_bounds_ns: tuple[float, float] = (1.0, 5000.0),
                            identity_threshold: float = 1e-4) -> DistortionFit:
    """Fit exponential distortion poles to the excess phase of square-pulse probes."""
    delays = np.asarray(np.arange(0.0, 1001.0, 10.0) if delays_ns is None else delays_ns, dtype=float)
    if delays.ndim != 1 or len(delays) < 2 * n_poles + 1:
        raise ValueError(f"need at least {2 * n_poles + 1} probe delays")
    excess = np.array([_wrap(env.phase(d) - env.ideal_phase(d)) for d in delays])
    scale = max(np.abs(excess).max(), 1e-12)

    def amplitudes(log_taus):
        basis = _pole_basis(env, np.exp(log_taus), delays)
        a, *_ = np.linalg.lstsq(basis, excess, rcond=None)
        return a, basis

    def resid(log_taus):
        a, basis = amplitudes(log_taus)
        return (basis @ a - excess) / scale

    lo, hi = np.log(tau_bounds_ns)
    if n_poles == 1:
        grid = np.linspace(lo, hi, 60)
        best = grid[np.argmin([np.sum(resid([g]) ** 2) for g in grid])]
        step = grid[1] - grid[0]
        res = minimize_scalar(lambda g: np.sum(resid([g]) ** 2), bounds=(max(lo, best - step), min(hi, best + step)),
                              method="bounded", options={"xatol": 1e-10})
        start = np.array([res.x])
    else:
        start = np.linspace(lo + 1.0, min(hi, np.log(delays.max())), n_poles)
    fit = least_squares(resid, start, bounds=(lo, hi), xtol=1e-14, ftol=1e-14, gtol=1e-14)
    a, basis = amplitudes(fit.x)
    taus = np.exp(fit.x)
    rms = float(np.sqrt(np.mean((basis @ a - excess) ** 2)))
    if np.all(np.abs(a) < identity_threshold):
        return DistortionFit(DistortionModel(), rms, False, tuple(delays))
    under = bool(np.any(taus > 2 * delays.max()))
    if under:
        warnings.warn("distortion fit is under-determined: decay time exceeds twice the longest probe delay")
    order = np.argsort(taus)
    model = DistortionModel(tuple((float(a[k]), float(taus[k])) for k in order))
    return DistortionFit(model, rms, under, tuple(delays))
