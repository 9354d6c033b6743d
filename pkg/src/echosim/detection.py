"""Heterodyne synthesis, spectra, echo extraction, decay fits, phase matching.

Each optical transition beats against the local oscillator at its own radio
frequency; with a single physical LO the beats differ by exactly the nominal
transition offsets, so the input (2-5) and echo (3-4) appear 14.8 MHz apart
for the default level system.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import curve_fit

from .ensemble import EmissionRecord
from .levels import LevelSystem, transition_frequency
from .sequence import PathwayPrediction

TWO_PI = 2.0 * math.pi
C_LIGHT = 299792458.0


class AliasingError(ValueError):
    """Heterodyne sample rate too low for the configured beat frequencies."""


class EchoBelowFloor(RuntimeError):
    """No echo found above the numerical floor inside the gate."""

    def __init__(self, floor, value, message=None):
        self.floor = floor
        self.value = value
        super().__init__(message or
                         f"gated peak {value:.3e} is below the floor {floor:.3e}")


class FitError(ValueError):
    """Decay fit could not be performed on the given points."""


# -- heterodyne ---------------------------------------------------------------

@dataclass(frozen=True)
class LOConfig:
    """Local-oscillator settings: one physical LO, per-transition beats.

    The reference transition beats at ``base_beat_hz``; every other
    transition's beat is offset by its nominal frequency difference.
    Explicit ``beats`` override the derived values.
    """

    sample_rate_hz: float = 80e6
    base_beat_hz: float = 25e6
    ref_transition: tuple = (2, 5)
    noise_sigma: float = 0.0
    noise_seed: int = 0
    beats: dict | None = None


@dataclass
class HeterodyneTrace:
    samples: np.ndarray
    sample_rate_hz: float
    t_start: float
    beat_hz: dict
    noise_sigma: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t_start + np.arange(len(self.samples)) / self.sample_rate_hz

    def to_csv(self, path) -> None:
        lines = ["time_s,signal"]
        t = self.times
        lines += [f"{t[i]:.17g},{self.samples[i]:.17g}" for i in range(len(t))]
        Path(path).write_text("\n".join(lines) + "\n")


def beat_frequencies(lo: LOConfig, record: EmissionRecord) -> dict:
    if lo.beats is not None:
        return {tuple(k): v for k, v in lo.beats.items()}
    ref = record.nominal_offsets_hz[tuple(lo.ref_transition)]
    return {t: lo.base_beat_hz + (off - ref)
            for t, off in record.nominal_offsets_hz.items()}


def heterodyne(record: EmissionRecord, lo: LOConfig) -> HeterodyneTrace:
    """Mix every recorded transition onto its beat frequency.

    s(t) = sum_ij Re[E_ij(t) exp(i 2 pi f_ij t)] plus optional seeded white
    noise.  Envelopes are linearly interpolated inside observation windows
    and zero outside.
    """
    beats = beat_frequencies(lo, record)
    bandwidth = max(w.times.size / max(w.times[-1] - w.times[0], 1e-12) / 2
                    for w in record.windows)
    f_need = 2.0 * (max(abs(b) for b in beats.values()) + bandwidth)
    if lo.sample_rate_hz < f_need:
        raise AliasingError(
            f"sample rate {lo.sample_rate_hz:.3g} Hz below required {f_need:.3g} Hz")
    t0 = min(w.times[0] for w in record.windows)
    t1 = max(w.times[-1] for w in record.windows)
    n = int(math.floor((t1 - t0) * lo.sample_rate_hz)) + 1
    t = t0 + np.arange(n) / lo.sample_rate_hz
    s = np.zeros(n)
    for ti, trans in enumerate(record.transitions):
        f = beats[trans]
        for w in record.windows:
            mask = (t >= w.times[0]) & (t <= w.times[-1])
            if not mask.any():
                continue
            env = (np.interp(t[mask], w.times, w.fields[ti].real)
                   + 1j * np.interp(t[mask], w.times, w.fields[ti].imag))
            s[mask] += np.real(env * np.exp(1j * TWO_PI * f * t[mask]))
    if lo.noise_sigma > 0:
        rng = np.random.default_rng(lo.noise_seed)
        s = s + rng.normal(0.0, lo.noise_sigma, n)
    return HeterodyneTrace(samples=s, sample_rate_hz=lo.sample_rate_hz,
                           t_start=t0, beat_hz=beats, noise_sigma=lo.noise_sigma)


def amplitude_spectrum(trace: HeterodyneTrace, window: tuple | None = None,
                       taper: str = "hann"):
    """Single-sided amplitude spectrum of a time slice of the trace.

    Normalized by the taper's coherent gain so a unit-amplitude sinusoid
    reports 1.0 at its frequency.  Returns (freqs_hz, amplitude).
    """
    t = trace.times
    if window is None:
        sel = np.ones(len(t), dtype=bool)
    else:
        sel = (t >= window[0]) & (t <= window[1])
    x = trace.samples[sel]
    if x.size == 0:
        raise ValueError("empty spectrum window")
    if taper == "hann":
        w = np.hanning(x.size)
    elif taper in (None, "none", "boxcar"):
        w = np.ones(x.size)
    else:
        raise ValueError(f"unknown taper {taper!r}")
    spec = np.fft.rfft(x * w)
    freqs = np.fft.rfftfreq(x.size, d=1.0 / trace.sample_rate_hz)
    amp = 2.0 * np.abs(spec) / w.sum()
    amp[0] /= 2.0
    if x.size % 2 == 0:
        amp[-1] /= 2.0
    return freqs, amp


def spectrum_to_csv(freqs, amp, path) -> None:
    lines = ["frequency_hz,amplitude"]
    lines += [f"{freqs[i]:.17g},{amp[i]:.17g}" for i in range(len(freqs))]
    Path(path).write_text("\n".join(lines) + "\n")


# -- echo extraction ----------------------------------------------------------

@dataclass(frozen=True)
class EchoMeasurement:
    time: float
    amplitude: complex          # sampled complex field at the peak
    magnitude: float            # parabola-refined |E| at the peak
    floor: float


def extract_echo(record: EmissionRecord, prediction: PathwayPrediction,
                 gate_halfwidth: float | None = None,
                 floor_rel: float = 1e-12) -> EchoMeasurement:
    """Peak complex amplitude on the predicted transition inside the gate.

    The gate defaults to +-3 input-envelope FWHM around the predicted time.
    Raises EchoBelowFloor (carrying floor and measured value) when the gated
    peak does not rise above floor_rel times the record's global maximum.
    """
    if gate_halfwidth is None:
        fwhm = record.metadata.get("input_envelope_scale_s")
        gate_halfwidth = 3.0 * fwhm if fwhm else None
    trans = tuple(prediction.echo_transition)
    if trans not in record.transitions:
        raise ValueError(f"transition {trans} was not recorded")
    times, vals = record.field(trans)
    mask = np.ones(len(times), dtype=bool)
    if gate_halfwidth is not None:
        mask = (times >= prediction.echo_time - gate_halfwidth) & \
               (times <= prediction.echo_time + gate_halfwidth)
    if not mask.any():
        raise EchoBelowFloor(0.0, 0.0, "echo gate contains no samples")
    global_peak = max(np.abs(w.fields).max() for w in record.windows)
    floor = floor_rel * global_peak
    idx = np.flatnonzero(mask)
    amp = np.abs(vals[idx])
    m = int(np.argmax(amp))
    peak_val = amp[m]
    if peak_val <= floor:
        raise EchoBelowFloor(floor, float(peak_val))
    # 3-point parabolic refinement removes most sampling-grid bias
    t_peak, mag = times[idx[m]], peak_val
    if 0 < m < len(idx) - 1 and idx[m] - 1 == idx[m - 1] and idx[m] + 1 == idx[m + 1]:
        y0, y1, y2 = amp[m - 1], amp[m], amp[m + 1]
        denom = y0 - 2 * y1 + y2
        if denom < 0:
            delta = 0.5 * (y0 - y2) / denom
            dt = times[idx[m] + 1] - times[idx[m]]
            t_peak = times[idx[m]] + delta * dt
            mag = y1 - 0.25 * (y0 - y2) * delta
    return EchoMeasurement(time=float(t_peak), amplitude=complex(vals[idx[m]]),
                           magnitude=float(mag), floor=float(floor))


# -- decay fitting ------------------------------------------------------------

DECAY_MODELS = ("exponential", "gaussian", "lorentzian_ft", "voigt_ft")


@dataclass
class DecayFit:
    """Fitted decay curve: model name, parameters, extrapolation, residuals.

    Parameters by model:
      exponential   T2_s
      lorentzian_ft gamma_hz        (amplitude ~ exp(-2 pi gamma t))
      gaussian      sigma_hz        (amplitude ~ exp(-(2 pi sigma t)^2 / 2))
      voigt_ft      gamma_hz, sigma_hz (product of the two factors)
    """

    model: str
    params: dict
    zero_delay_amplitude: float
    residual_norm: float
    ci: dict = field(default_factory=dict)
    n_points: int = 0

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        a = self.zero_delay_amplitude
        if self.model == "exponential":
            return a * np.exp(-t / self.params["T2_s"])
        if self.model == "lorentzian_ft":
            return a * np.exp(-TWO_PI * self.params["gamma_hz"] * t)
        if self.model == "gaussian":
            return a * np.exp(-0.5 * (TWO_PI * self.params["sigma_hz"] * t) ** 2)
        if self.model == "voigt_ft":
            return a * np.exp(-TWO_PI * self.params["gamma_hz"] * t
                              - 0.5 * (TWO_PI * self.params["sigma_hz"] * t) ** 2)
        raise FitError(f"unknown model {self.model!r}")

    def to_dict(self) -> dict:
        return {"model": self.model, "params": self.params,
                "zero_delay_amplitude": self.zero_delay_amplitude,
                "residual_norm": self.residual_norm, "ci": self.ci,
                "n_points": self.n_points}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    def curve_to_csv(self, path, delays) -> None:
        """Tabulate the fitted curve at the given delays."""
        vals = self.evaluate(delays)
        lines = ["delay_s,fitted_amplitude"]
        lines += [f"{t:.17g},{v:.17g}" for t, v in zip(delays, vals)]
        Path(path).write_text("\n".join(lines) + "\n")


def _loglin_fit(t, y, powers):
    """Least squares of ln(y) against the given powers of t; returns
    (coeffs, 1-sigma errors)."""
    X = np.stack([t ** p for p in powers], axis=1)
    ln_y = np.log(y)
    coef, res, rank, _ = np.linalg.lstsq(X, ln_y, rcond=None)
    if rank < len(powers):
        raise FitError("degenerate design matrix (duplicate delays?)")
    dof = len(t) - len(powers)
    if dof > 0:
        resid = ln_y - X @ coef
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(X.T @ X)
        err = np.sqrt(np.diag(cov))
    else:
        err = np.zeros(len(powers))
    return coef, err


def fit_decay(points, model: str = "exponential") -> DecayFit:
    """Fit amplitude-vs-delay data with one of the decay models.

    The exponential model is fit by least squares in log amplitude; the
    others use a nonlinear fit seeded from a log-domain solve.  The
    zero-delay amplitude is the extrapolated A(0).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise FitError("points must be (delay, amplitude) pairs")
    t, y = pts[:, 0], pts[:, 1]
    if len(t) < 2:
        raise FitError("need at least two points")
    if len(np.unique(t)) != len(t):
        raise FitError("degenerate design matrix (duplicate delays?)")
    if np.any(y <= 0):
        raise FitError("non-positive amplitudes cannot be fit")
    if model not in DECAY_MODELS:
        raise FitError(f"unknown model {model!r}; options: {DECAY_MODELS}")

    if model in ("exponential", "lorentzian_ft"):
        coef, err = _loglin_fit(t, y, (0, 1))
        a0 = math.exp(coef[0])
        rate = -coef[1]
        if rate <= 0:
            raise FitError("fitted amplitude grows with delay; no decay constant")
        if model == "exponential":
            params = {"T2_s": 1.0 / rate}
            ci = {"T2_s": err[1] / rate ** 2, "zero_delay_amplitude": a0 * err[0]}
        else:
            params = {"gamma_hz": rate / TWO_PI}
            ci = {"gamma_hz": err[1] / TWO_PI, "zero_delay_amplitude": a0 * err[0]}
        fit = DecayFit(model, params, a0, 0.0, ci, len(t))
    elif model == "gaussian":
        coef, err = _loglin_fit(t, y, (0, 2))
        if coef[1] >= 0:
            raise FitError("fitted amplitude grows with delay; no decay constant")
        sigma0 = math.sqrt(-2.0 * coef[1]) / TWO_PI
        a0 = math.exp(coef[0])

        def f(tt, a, sigma):
            return a * np.exp(-0.5 * (TWO_PI * sigma * tt) ** 2)

        popt, pcov = curve_fit(f, t, y, p0=(a0, sigma0), maxfev=10000)
        perr = np.sqrt(np.abs(np.diag(pcov)))
        fit = DecayFit(model, {"sigma_hz": abs(popt[1])}, popt[0], 0.0,
                       {"sigma_hz": perr[1], "zero_delay_amplitude": perr[0]}, len(t))
    else:  # voigt_ft
        coef, err = _loglin_fit(t, y, (0, 1, 2))
        a0 = math.exp(coef[0])
        g0 = max(-coef[1], 0.0) / TWO_PI
        s0 = math.sqrt(2.0 * max(-coef[2], 1e-30)) / TWO_PI

        def f(tt, a, gamma, sigma):
            return a * np.exp(-TWO_PI * gamma * tt - 0.5 * (TWO_PI * sigma * tt) ** 2)

        popt, pcov = curve_fit(f, t, y, p0=(a0, g0, s0), maxfev=20000)
        perr = np.sqrt(np.abs(np.diag(pcov)))
        fit = DecayFit(model, {"gamma_hz": abs(popt[1]), "sigma_hz": abs(popt[2])},
                       popt[0], 0.0,
                       {"gamma_hz": perr[1], "sigma_hz": perr[2],
                        "zero_delay_amplitude": perr[0]}, len(t))
    resid = fit.evaluate(t) - y
    fit.residual_norm = float(np.sqrt(np.mean(resid ** 2)))
    # a Voigt component may legitimately vanish, but some decay must remain
    if sum(fit.params.values()) <= 0:
        raise FitError("fit collapsed to a non-decaying solution")
    return fit


def calibrate_excess_dephasing(t2_s: float, target_t2_s: float, delays_s,
                               sigma_bounds=(1e2, 1e6)) -> float:
    """Width of two equal Gaussian splitting spreads that make a combined
    decay look exponential with the target time constant.

    The model amplitude over total delay t is
    ``exp(-t / T2) * exp(-(2 pi sqrt(2) sigma t / 2)^2 / 2)`` (the splitting
    shifts add, each interval contributes half the total delay); the
    returned sigma makes a log-linear exponential fit over ``delays_s``
    report ``target_t2_s``.
    """
    delays = np.asarray(delays_s, dtype=float)

    def fitted_rate(sigma):
        # log-linear fit done directly in the log domain (no underflow for
        # wide bracketing scans)
        ln_amp = (-delays / t2_s
                  - 0.5 * (TWO_PI * math.sqrt(2.0) * sigma * delays / 2.0) ** 2)
        slope = np.polyfit(delays, ln_amp, 1)[0]
        return -slope

    if 1.0 / fitted_rate(0.0) <= target_t2_s:
        raise FitError("target decay is slower than the bare T2")
    from scipy.optimize import brentq
    return float(brentq(lambda s: fitted_rate(s) - 1.0 / target_t2_s,
                        sigma_bounds[0], sigma_bounds[1], rtol=1e-6))


# -- phase matching -----------------------------------------------------------

@dataclass(frozen=True)
class PhaseMatchResult:
    k_echo: tuple               # rad/m vector required by the pulse geometry
    direction: tuple            # unit emission direction
    delta_k: float              # rad/m closure residual along the direction
    penalty: float              # sinc^2(|delta_k| L / 2)

    def to_dict(self) -> dict:
        return {"k_echo_rad_m": list(self.k_echo), "direction": list(self.direction),
                "delta_k_rad_m": self.delta_k, "penalty": self.penalty}


def _unit(v, name):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValueError(f"{name} must be a non-zero vector")
    return v / n


def sinc_sq_penalty(delta_k: float, length_m: float) -> float:
    x = 0.5 * abs(delta_k) * length_m
    if x == 0.0:
        return 1.0
    return (math.sin(x) / x) ** 2


def phase_match(k_in, k_pi1=None, k_pi2=None, k_pi=None, *,
                wavelengths: dict, length_m: float) -> PhaseMatchResult:
    """Wavevector closure of the echo geometry.

    Four-level geometry (k_pi1 and k_pi2 given): the echo is emitted with
    k = k_pi1 + k_pi2 - k_in, the momentum bookkeeping of one stimulated
    absorption per pi pulse against the input's contribution.  Two-level
    geometry (k_pi given): k = 2 k_pi - k_in.  The residual is the length
    mismatch between that vector and the free-space echo wavenumber; the
    emitted power is penalized by sinc^2(|dk| L / 2).

    ``wavelengths`` needs keys in {"input", "pi1", "pi2", "pi", "echo"}.
    """
    if length_m <= 0:
        raise ValueError("length_m must be positive")
    u_in = _unit(k_in, "k_in")
    if k_pi1 is not None and k_pi2 is not None:
        u1 = _unit(k_pi1, "k_pi1")
        u2 = _unit(k_pi2, "k_pi2")
        k_vec = (TWO_PI / wavelengths["pi1"] * u1
                 + TWO_PI / wavelengths["pi2"] * u2
                 - TWO_PI / wavelengths["input"] * u_in)
    elif k_pi is not None:
        u = _unit(k_pi, "k_pi")
        k_vec = 2.0 * TWO_PI / wavelengths["pi"] * u - TWO_PI / wavelengths["input"] * u_in
    else:
        raise ValueError("give k_pi1 and k_pi2 (4-level) or k_pi (2-level)")
    k_mag = np.linalg.norm(k_vec)
    if k_mag == 0:
        raise ValueError("degenerate geometry: zero emission wavevector")
    delta_k = k_mag - TWO_PI / wavelengths["echo"]
    return PhaseMatchResult(k_echo=tuple(k_vec), direction=tuple(k_vec / k_mag),
                            delta_k=float(delta_k),
                            penalty=sinc_sq_penalty(delta_k, length_m))


def transition_wavelengths(ls: LevelSystem, transitions,
                           base_wavelength_m: float = 605.977e-9) -> dict:
    """Optical wavelengths of transitions, offset from a base carrier."""
    nu0 = C_LIGHT / base_wavelength_m
    out = {}
    for trans in transitions:
        off = transition_frequency(ls, *trans)
        out[tuple(trans)] = C_LIGHT / (nu0 + off)
    return out


def brute_force_penalty(delta_k: float, length_m: float, n: int = 20001) -> float:
    """Quadrature oracle: |mean over z of exp(i dk z)|^2 along the crystal."""
    z = np.linspace(0.0, length_m, n)
    return float(np.abs(np.trapezoid(np.exp(1j * delta_k * z), z) / length_m) ** 2)
