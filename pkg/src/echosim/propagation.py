"""1-D weak-field propagation through the prepared absorbing feature.

Conventions: ``alpha_l`` is the peak optical depth in the intensity sense
(on-resonance intensity transmission = exp(-alpha_l)); field amplitudes
therefore carry alpha_l / 2 in every exponent.  The population-difference
factor ``s`` is +1 for a fully absorbing feature and -1 for full inversion.

The echo solver integrates

    dE/dz = (alpha/2) [ -s(z) E + source(z, t) ]

over uniform slices with the homogeneous part treated exactly per slice
(exponential update) and the source at the slice midpoint, so Beer-Lambert
transmission is reproduced to rounding for zero source and the source
integral converges at second order in the slice width.  Bright rephasing
pulses are taken as undepleted: they set ``s`` uniformly in z and do not
propagate here.  The echo is propagated with the peak optical depth of its
line (resonant-line approximation).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Medium:
    """Prepared spectral feature: peak optical depth plus normalized profile.

    The profile is tabulated against detuning from the feature center
    (max 1); omit it for a spectrally flat feature.  ``s_input`` and
    ``s_echo`` are the population-difference factors seen by the weak input
    before the rephasing pulses and by the echo after them.
    """

    alpha_l: float
    profile_detuning_hz: tuple = ()
    profile: tuple = ()
    n_slices: int = 64
    s_input: float = 1.0
    s_echo: float = -1.0

    def __post_init__(self):
        if self.alpha_l < 0:
            raise ValueError("alpha_l must be >= 0")
        if self.n_slices < 8:
            raise ValueError("need at least 8 slices")
        if len(self.profile) != len(self.profile_detuning_hz):
            raise ValueError("profile and detuning axis must match")
        if len(self.profile):
            p = np.asarray(self.profile, dtype=float)
            if p.min() < 0 or not math.isclose(p.max(), 1.0, rel_tol=1e-9):
                raise ValueError("profile must be >= 0 with max 1")
        for s in (self.s_input, self.s_echo):
            if not -1.0 <= s <= 1.0:
                raise ValueError("population factors lie in [-1, 1]")

    def profile_at(self, detuning_hz):
        """Normalized absorption profile, 1 on resonance for a flat feature."""
        detuning_hz = np.asarray(detuning_hz, dtype=float)
        if not len(self.profile):
            return np.ones_like(detuning_hz)
        return np.interp(detuning_hz, np.asarray(self.profile_detuning_hz),
                         np.asarray(self.profile), left=0.0, right=0.0)


def transmit_weak_pulse(medium: Medium, detuning_hz, spectrum, s=None):
    """Linear-response transmission of a weak pulse spectrum.

    E_out(w) = E_in(w) exp(-(alpha_l/2) profile(w) s); s defaults to the
    medium's input-side population factor.
    """
    if s is None:
        s = medium.s_input
    spectrum = np.asarray(spectrum, dtype=complex)
    atten = np.exp(-0.5 * medium.alpha_l * medium.profile_at(detuning_hz) * s)
    return spectrum * atten


def echo_field(medium: Medium, source, s_echo=None, input_attenuation=True,
               n_slices=None):
    """Exit field of the echo for a z-uniform normalized source coherence.

    ``source`` is the rephased-coherence envelope normalized so that perfect
    rephasing of the input-created coherence equals 1 (scalar or array over
    time).  The source at depth z additionally carries the input pulse's
    amplitude attenuation exp(-(alpha_l/2) z/L); the growing echo sees the
    post-pulse population factor (inverted medium by default, so the echo
    experiences gain).  Returns the exit amplitude in input-peak units.
    """
    if s_echo is None:
        s_echo = medium.s_echo
    n = n_slices or medium.n_slices
    src = np.asarray(source, dtype=complex)
    alpha = medium.alpha_l
    dz = 1.0 / n                     # z in units of L
    g = math.exp(-0.5 * alpha * s_echo * dz)
    e = np.zeros_like(src)
    for m in range(n):
        z_mid = (m + 0.5) * dz
        src_m = src * (math.exp(-0.5 * alpha * z_mid) if input_attenuation else 1.0)
        e = e * g + 0.5 * alpha * dz * math.sqrt(g) * src_m
    return e


def slice_echo_gain(medium: Medium, check_convergence=True, tol=5e-3) -> float:
    """Peak echo amplitude per unit rephased coherence (unit source).

    Raises if doubling the slice count moves the result by more than tol.
    """
    g1 = float(np.abs(echo_field(medium, 1.0)))
    if check_convergence:
        g2 = float(np.abs(echo_field(medium, 1.0, n_slices=2 * medium.n_slices)))
        if abs(g2 - g1) > tol * max(abs(g2), 1e-300):
            raise PropagationError(
                f"slice integration not converged: {g1:.6g} vs {g2:.6g}")
        return g2
    return g1


def ideal_echo_gain(alpha_l: float) -> float:
    """Closed form for an absorbing feature fully inverted by the rephasing
    pulses: sinh(alpha_l / 2), which tends to alpha_l / 2 for thin media."""
    return math.sinh(0.5 * alpha_l)


def efficiency(record=None, prediction=None, medium=None,
               rephasing_amplitude=None, gate_halfwidth=None):
    """Echo amplitude efficiency, peak |E_echo| / peak |E_input, incident|.

    Two modes: give an EmissionRecord plus PathwayPrediction (thin-sample
    records are normalized to unit input peak, so the gated echo peak is the
    ratio directly), or give a Medium plus the rephased-coherence amplitude
    (fraction of the created coherence that rephases) for the 1-D result.
    May exceed 1 in strongly inverted media.
    """
    if medium is not None:
        if rephasing_amplitude is None:
            raise ValueError("1-D mode needs the rephased-coherence amplitude")
        return abs(rephasing_amplitude) * slice_echo_gain(medium)
    if record is None or prediction is None:
        raise ValueError("record mode needs both the record and the prediction")
    if record.metadata.get("no_input"):
        raise PropagationError("record has no input pulse to normalize against")
    from .detection import extract_echo
    meas = extract_echo(record, prediction, gate_halfwidth=gate_halfwidth)
    return meas.magnitude
