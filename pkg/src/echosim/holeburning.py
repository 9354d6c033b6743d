"""Rate-equation spectral preparation: subgroup isolation and feature burning.

Each grid point is one ion class, labelled by where its 2-5 transition sits
relative to the target class (detuning axis).  A class interacts with a pump
field through any of its nine ground-excited transitions; the offset of
transition (i, j) from the class's 2-5 position is ``a_i + b_j`` with
``a_i = E2 - E_ground_i`` and ``b_j = E_excited_j - E5``.

Optical excitation is adiabatically eliminated (pump steps last tens of
milliseconds against a 160 us excited lifetime), so pumping is a direct
ground-to-ground redistribution weighted by the branching table.  Fields
applied together act simultaneously: one rate matrix per grid point,
advanced by its exact matrix exponential, which gives every schedule a true
steady state (hence idempotent re-pumping).

The swept coverage of a field is a flat top of the sweep range convolved
with a Gaussian interaction kernel of the given linewidth (FWHM).  A
Lorentzian kernel's 1/x^2 wings would cross-pump every class at the
1e-3 * rate level even megahertz away, washing out the subgroup isolation
over a 40 ms schedule; measured pumping cross-talk falls much faster at
such offsets, which the Gaussian kernel captures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq
from scipy.special import erf

from .levels import LevelSystem
from .propagation import Medium


class PreparationError(RuntimeError):
    """Requested feature cannot be prepared (reports the achievable maximum)."""


def transition_offsets(ls: LevelSystem) -> np.ndarray:
    """(3, 3) table: offset of transition (ground i, excited j) from 2-5."""
    a = ls.ground_offsets_hz[1] - ls.ground_offsets_hz      # E2 - E_i
    b = ls.excited_offsets_hz - ls.excited_offsets_hz[1]    # E_j - E5
    return a[:, None] + b[None, :]


@dataclass
class PopulationGrid:
    """Ground-state populations per ion class on a uniform detuning axis."""

    detuning_hz: np.ndarray     # (N,)
    populations: np.ndarray     # (N, 3) ground populations, rows sum to 1
    offsets_hz: np.ndarray      # (3, 3) transition offset table
    dipole_sq: np.ndarray       # (3, 3) relative pump strengths
    branching: np.ndarray       # (3, 3) beta[ground i, excited j]

    def __post_init__(self):
        self.detuning_hz = np.asarray(self.detuning_hz, dtype=float)
        self.populations = np.asarray(self.populations, dtype=float)
        if self.populations.shape != (len(self.detuning_hz), 3):
            raise ValueError("populations must be (n_points, 3)")
        self.check_conservation()

    def check_conservation(self, tol=1e-9):
        err = np.abs(self.populations.sum(axis=1) - 1.0).max()
        if err > tol or self.populations.min() < -tol:
            raise ValueError(f"population conservation violated by {err:.3e}")

    @classmethod
    def thermal(cls, ls: LevelSystem, halfwidth_hz: float = 20e6,
                step_hz: float = 25e3) -> "PopulationGrid":
        if step_hz > 25e3:
            raise ValueError("grid step must be <= 25 kHz")
        n = 2 * int(round(halfwidth_hz / step_hz)) + 1
        axis = (np.arange(n) - n // 2) * step_hz
        pops = np.full((n, 3), 1.0 / 3.0)
        return cls(detuning_hz=axis, populations=pops,
                   offsets_hz=transition_offsets(ls),
                   dipole_sq=np.asarray(ls.dipole, dtype=float) ** 2,
                   branching=np.asarray(ls.branching, dtype=float))

    def copy(self) -> "PopulationGrid":
        return PopulationGrid(self.detuning_hz.copy(), self.populations.copy(),
                              self.offsets_hz, self.dipole_sq, self.branching)

    def absorption(self, freqs_hz, display_linewidth_hz: float = 50e3,
                   include=None) -> np.ndarray:
        """Relative absorption spectrum at lab frequencies (2-5 axis).

        Sums Lorentzians of the display linewidth over every populated
        class transition; ``include(nu, i, j)`` may mask contributions.
        """
        freqs_hz = np.asarray(freqs_hz, dtype=float)
        out = np.zeros_like(freqs_hz)
        hw = 0.5 * display_linewidth_hz
        for i in range(3):
            for j in range(3):
                d2 = self.dipole_sq[i, j]
                if d2 == 0.0:
                    continue
                centers = self.detuning_hz + self.offsets_hz[i, j]
                weight = self.populations[:, i] * d2
                if include is not None:
                    weight = weight * include(self.detuning_hz, i + 1, j + 4)
                line = hw ** 2 / ((freqs_hz[None, :] - centers[:, None]) ** 2 + hw ** 2)
                out += weight @ line
        return out

    def to_csv(self, path, display_linewidth_hz: float = 50e3) -> None:
        from pathlib import Path
        absorb = self.absorption(self.detuning_hz, display_linewidth_hz)
        lines = ["detuning_hz,n1,n2,n3,absorption"]
        for k in range(len(self.detuning_hz)):
            n1, n2, n3 = self.populations[k]
            lines.append(f"{self.detuning_hz[k]:.17g},{n1:.17g},{n2:.17g},"
                         f"{n3:.17g},{absorb[k]:.17g}")
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class PumpField:
    """One swept (or fixed) pump: center on the 2-5 axis, flat-top sweep
    half-width, peak rate, duration, and interaction linewidth (FWHM of the
    Gaussian kernel)."""

    center_hz: float
    sweep_halfwidth_hz: float
    peak_rate_hz: float
    duration_s: float
    linewidth_hz: float = 25e3

    def __post_init__(self):
        for name in ("peak_rate_hz", "duration_s", "linewidth_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sweep_halfwidth_hz < 0:
            raise ValueError("sweep half-width must be >= 0")

    @classmethod
    def at_transition(cls, ls: LevelSystem, transition, **kw) -> "PumpField":
        i, j = transition
        off = transition_offsets(ls)[i - 1, j - 4]
        return cls(center_hz=float(off), **kw)

    def coverage(self, x_hz) -> np.ndarray:
        """Fraction of the peak rate seen at offset x from the field center."""
        x = np.asarray(x_hz, dtype=float) - self.center_hz
        sigma = self.linewidth_hz / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        if self.sweep_halfwidth_hz == 0.0:
            return np.exp(-0.5 * (x / sigma) ** 2)
        w = self.sweep_halfwidth_hz
        rt2s = math.sqrt(2.0) * sigma
        return 0.5 * (erf((x + w) / rt2s) - erf((x - w) / rt2s))


def _rate_matrices(grid: PopulationGrid, fields) -> np.ndarray:
    """(N, 3, 3) ground-state rate matrices for simultaneous fields."""
    n = len(grid.detuning_hz)
    rates = np.zeros((n, 3, 3))       # pump rate out of ground i via excited j
    for f in fields:
        for i in range(3):
            for j in range(3):
                d2 = grid.dipole_sq[i, j]
                if d2 == 0.0:
                    continue
                x = grid.detuning_hz + grid.offsets_hz[i, j]
                rates[:, i, j] += f.peak_rate_hz * d2 * f.coverage(x)
    a = np.zeros((n, 3, 3))
    beta = grid.branching
    for i in range(3):
        for j in range(3):
            r = rates[:, i, j]
            a[:, i, i] -= r * (1.0 - beta[i, j])
            for k in range(3):
                if k != i:
                    a[:, k, i] += r * beta[k, j]
    return a


def apply_pump(grid: PopulationGrid, fields, duration_s: float | None = None
               ) -> PopulationGrid:
    """Advance the grid through simultaneous pump fields.

    ``fields`` is one PumpField or a list applied together; the duration
    defaults to the fields' common duration.  Exact exponential update per
    grid point; populations stay conserved to rounding.
    """
    if isinstance(fields, PumpField):
        fields = [fields]
    if duration_s is None:
        durations = {f.duration_s for f in fields}
        if len(durations) != 1:
            raise ValueError("simultaneous fields need a common duration")
        duration_s = durations.pop()
    if duration_s == 0.0:
        return grid.copy()
    a = _rate_matrices(grid, fields)
    prop = expm(a * duration_s)
    new_pops = np.einsum("nij,nj->ni", prop, grid.populations)
    out = grid.copy()
    out.populations = new_pops
    out.check_conservation()
    return out


# -- the two-stage preparation schedule ---------------------------------------

def isolation_fields(ls: LevelSystem, pump_rate_hz=1e3, sweep_halfwidth_hz=1e6,
                     repump_halfwidth_hz=75e3, duration_s=0.03,
                     linewidth_hz=25e3) -> list:
    """Subgroup isolation: sweeps on the four double-lambda transitions plus
    the narrow repump at the 1-5 frequency of the target class."""
    kw = dict(peak_rate_hz=pump_rate_hz, duration_s=duration_s,
              linewidth_hz=linewidth_hz)
    fields = [PumpField.at_transition(ls, t, sweep_halfwidth_hz=sweep_halfwidth_hz,
                                      **kw)
              for t in ((2, 5), (3, 5), (2, 4), (3, 4))]
    fields.append(PumpField.at_transition(ls, (1, 5),
                                          sweep_halfwidth_hz=repump_halfwidth_hz,
                                          **kw))
    return fields


def burnback_fields(ls: LevelSystem, pump_rate_hz=1e3, sweep_halfwidth_hz=1e6,
                    repump_halfwidth_hz=75e3, duration_s=0.02,
                    linewidth_hz=25e3) -> list:
    """Feature burn-back: keep level 3 empty with the 3-5 and 3-4 sweeps
    while the narrow 1-5 repump collects the target class into level 2."""
    kw = dict(peak_rate_hz=pump_rate_hz, duration_s=duration_s,
              linewidth_hz=linewidth_hz)
    fields = [PumpField.at_transition(ls, t, sweep_halfwidth_hz=sweep_halfwidth_hz,
                                      **kw)
              for t in ((3, 5), (3, 4))]
    fields.append(PumpField.at_transition(ls, (1, 5),
                                          sweep_halfwidth_hz=repump_halfwidth_hz,
                                          **kw))
    return fields


def cleanup_fields(ls: LevelSystem, pump_rate_hz=1e3, sweep_halfwidth_hz=1e6,
                   duration_s=0.01, linewidth_hz=25e3) -> list:
    """Final mop-up: the 3-5 and 3-4 sweeps alone, so level 3 empties once
    the repump stops feeding it."""
    kw = dict(peak_rate_hz=pump_rate_hz, duration_s=duration_s,
              linewidth_hz=linewidth_hz)
    return [PumpField.at_transition(ls, t, sweep_halfwidth_hz=sweep_halfwidth_hz,
                                    **kw)
            for t in ((3, 5), (3, 4))]


def _feature_fwhm(profile_x, profile_y) -> float:
    """FWHM of the contiguous peak region around the global maximum."""
    y = np.asarray(profile_y, dtype=float)
    x = np.asarray(profile_x, dtype=float)
    pk = int(np.argmax(y))
    half = 0.5 * y[pk]
    lo = pk
    while lo > 0 and y[lo - 1] >= half:
        lo -= 1
    hi = pk
    while hi < len(y) - 1 and y[hi + 1] >= half:
        hi += 1
    x_lo = x[lo] if lo == 0 else np.interp(half, [y[lo - 1], y[lo]], [x[lo - 1], x[lo]])
    x_hi = x[hi] if hi == len(x) - 1 else np.interp(half, [y[hi + 1], y[hi]],
                                                    [x[hi + 1], x[hi]])
    return float(x_hi - x_lo)


def _burned_width(ls, w15, pump_rate_hz, iso_s, burn_s, linewidth_hz,
                  sweep_halfwidth_hz, span_hz, step_hz) -> float:
    """FWHM of the n2 feature for a given repump half-width (fine mini-grid
    spanning only the feature region; classes elsewhere cannot alter it)."""
    grid = PopulationGrid.thermal(ls, halfwidth_hz=span_hz, step_hz=step_hz)
    grid = apply_pump(grid, isolation_fields(ls, pump_rate_hz, sweep_halfwidth_hz,
                                             w15, iso_s, linewidth_hz))
    grid = apply_pump(grid, burnback_fields(ls, pump_rate_hz, sweep_halfwidth_hz,
                                            w15, burn_s, linewidth_hz))
    # only the swept zone is prepared; thermal classes beyond it are not
    # part of the feature
    zone = np.abs(grid.detuning_hz) <= 0.9 * sweep_halfwidth_hz
    return _feature_fwhm(grid.detuning_hz[zone], grid.populations[zone, 1])


def solve_repump_halfwidth(ls: LevelSystem, feature_fwhm_hz: float,
                           pump_rate_hz=1e3, isolation_time_s=0.03,
                           burnback_time_s=0.02, linewidth_hz=25e3,
                           sweep_halfwidth_hz=1e6) -> float:
    """Sweep half-width of the narrow repump that yields the requested
    feature FWHM, accounting for saturation broadening."""
    span = max(4.0 * feature_fwhm_hz, 10.0 * linewidth_hz)
    step = min(25e3, feature_fwhm_hz / 16.0)

    def err(w15):
        return _burned_width(ls, w15, pump_rate_hz, isolation_time_s,
                             burnback_time_s, linewidth_hz, sweep_halfwidth_hz,
                             span, step) - feature_fwhm_hz

    lo = linewidth_hz / 4.0  # narrowest sweep that still burns a feature
    if err(lo) > 0:
        raise PreparationError(
            f"feature width {feature_fwhm_hz:.3g} Hz is below the minimum set "
            f"by the interaction linewidth and pump saturation ({err(lo) + feature_fwhm_hz:.3g} Hz)")
    hi = max(feature_fwhm_hz, 2 * lo)
    while err(hi) < 0:
        hi *= 2.0
        if hi > 0.5 * sweep_halfwidth_hz:
            raise PreparationError(
                "requested feature width approaches the isolation sweep range")
    return float(brentq(err, lo, hi, xtol=feature_fwhm_hz * 1e-3))


@dataclass
class PreparationResult:
    grid: PopulationGrid
    medium: Medium
    achieved_alpha_l: float
    feature_fwhm_hz: float
    repump_halfwidth_hz: float

    def __iter__(self):
        return iter((self.grid, self.medium))


def prepare_feature(ls: LevelSystem, absorption_target: float = 0.5,
                    alpha_l: float | None = None, feature_fwhm_hz: float = 200e3,
                    pump_rate_hz: float = 1e3, isolation_time_s: float = 0.03,
                    burnback_time_s: float = 0.02, cleanup_time_s: float = 0.01,
                    linewidth_hz: float = 25e3, sweep_halfwidth_hz: float = 1e6,
                    grid_halfwidth_hz: float = 20e6, grid_step_hz: float = 25e3,
                    alpha_l_per_population: float = 10.0, n_slices: int = 64,
                    solve_width: bool = True,
                    repump_halfwidth_hz: float | None = None) -> PreparationResult:
    """Run the full preparation and package the feature as a Medium.

    Stage one isolates the target frequency subgroup (every other class ends
    parked in a ground state dark to all five fields); stage two collects
    the target class into level 2; a short final stage runs the level-3
    sweeps alone so nothing is left in level 3 once the repump stops.  The
    resulting n2 absorption profile is normalized and scaled to the
    requested optical depth (``alpha_l = -ln(1 - absorption_target)`` unless
    given directly); the reachable maximum is ``alpha_l_per_population``
    times the peak profile.
    """
    if alpha_l is None:
        if not 0.0 <= absorption_target < 1.0:
            raise PreparationError("absorption target must be in [0, 1)")
        alpha_l = -math.log(1.0 - absorption_target)
    if repump_halfwidth_hz is None:
        if solve_width:
            repump_halfwidth_hz = solve_repump_halfwidth(
                ls, feature_fwhm_hz, pump_rate_hz, isolation_time_s,
                burnback_time_s, linewidth_hz, sweep_halfwidth_hz)
        else:
            repump_halfwidth_hz = max(1.0, 0.5 * (feature_fwhm_hz - linewidth_hz))

    grid = PopulationGrid.thermal(ls, halfwidth_hz=grid_halfwidth_hz,
                                  step_hz=grid_step_hz)
    grid = apply_pump(grid, isolation_fields(ls, pump_rate_hz, sweep_halfwidth_hz,
                                             repump_halfwidth_hz, isolation_time_s,
                                             linewidth_hz))
    grid = apply_pump(grid, burnback_fields(ls, pump_rate_hz, sweep_halfwidth_hz,
                                            repump_halfwidth_hz, burnback_time_s,
                                            linewidth_hz))
    if cleanup_time_s > 0:
        grid = apply_pump(grid, cleanup_fields(ls, pump_rate_hz, sweep_halfwidth_hz,
                                               cleanup_time_s, linewidth_hz))

    # feature profile on the input channel: n2 of each class absorbing on
    # 2-5, restricted to the feature neighborhood (populations parked in
    # level 2 by distant dark classes belong to other spectral regions)
    region = np.abs(grid.detuning_hz) <= max(8.0 * feature_fwhm_hz,
                                             4.0 * repump_halfwidth_hz)
    n2 = grid.populations[:, 1] * grid.dipole_sq[1, 1] * region
    peak = float(n2.max())
    max_alpha = alpha_l_per_population * peak
    if alpha_l > max_alpha:
        raise PreparationError(
            f"requested alpha_l {alpha_l:.3g} exceeds the achievable maximum "
            f"{max_alpha:.3g}")
    sel = n2 > 1e-6 * peak
    medium = Medium(alpha_l=alpha_l,
                    profile_detuning_hz=tuple(grid.detuning_hz[sel]),
                    profile=tuple(n2[sel] / peak), n_slices=n_slices)
    fwhm = _feature_fwhm(grid.detuning_hz[region], n2[region])
    return PreparationResult(grid=grid, medium=medium, achieved_alpha_l=alpha_l,
                             feature_fwhm_hz=fwhm,
                             repump_halfwidth_hz=repump_halfwidth_hz)


def off_target_absorption(grid: PopulationGrid, window_halfwidth_hz: float,
                          display_linewidth_hz: float = 2e3) -> float:
    """Largest in-window absorption not carried by the target 2-5 line,
    relative to the feature peak (contamination metric).

    Evaluated with a homogeneous-scale linewidth so the metric reflects
    actual population at the feature frequencies rather than display wings.
    """
    freqs = np.linspace(-window_halfwidth_hz, window_halfwidth_hz, 41)

    def only_target(nu, i, j):
        return ((i == 2) & (j == 5) &
                (np.abs(nu) <= window_halfwidth_hz)).astype(float)

    def excluding_target(nu, i, j):
        return 1.0 - only_target(nu, i, j)

    target = grid.absorption(freqs, display_linewidth_hz, include=only_target)
    rest = grid.absorption(freqs, display_linewidth_hz, include=excluding_target)
    return float(rest.max() / target.max())
