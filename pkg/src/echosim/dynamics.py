"""Density-matrix evolution through pulses and free-evolution gaps.

Frame convention: the state lives in the interaction picture of the nominal
level frequencies.  A class's inhomogeneity enters as per-level shifts
``ell`` (Hz): coherence ``rho[a, b]`` rotates at ``-(ell_a - ell_b)`` and a
pulse with carrier detuning ``d`` drives with the phase factor
``exp(i(phase - 2 pi d t))`` evaluated at absolute time ``t``, which keeps
multi-frequency sequences phase consistent without per-pulse frame hops.

Pulses are integrated with fixed-step RK4 over their truncated envelopes
(step <= min(envelope_width / max(1, area/pi), 1/f_max) / 100, so the error
stays flat in the pulse area; deterministic across platforms); free gaps
use the exact closed form: each coherence picks up
``exp((-i 2 pi detuning - 1/T2) * dt)`` and populations follow the matrix
exponential of the branching rate equations.

Recorded traces are co-rotating envelopes
``sigma_ab(t) = rho_ab(t) * exp(+i 2 pi (ell_a - ell_b) t)``: constant
during free evolution apart from dephasing, tagged with their class
detunings so the ensemble layer can reassemble emitted fields.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from . import _kernels
from .levels import AtomClass, DOUBLE_LAMBDA, LevelSystem, class_level_shifts
from .sequence import Pulse, SequenceTimeline

STEPS_PER_TIMESCALE = 100

TWO_PI = 2.0 * math.pi


class DensityMatrixError(ValueError):
    """A state violated Hermiticity, unit trace, or positivity."""


class IntegrationToleranceError(RuntimeError):
    """Step-halving comparison exceeded the requested tolerance."""


def set_threads(n: int) -> None:
    """Limit the compiled batch loops to n threads (results are identical
    for any thread count; this only trades latency)."""
    import numba
    numba.set_num_threads(max(1, int(n)))


# -- states ------------------------------------------------------------------

def ground_state(level: int = 2) -> np.ndarray:
    """Pure population in one level (default: the prepared feature state 2)."""
    rho = np.zeros((6, 6), dtype=np.complex128)
    rho[level - 1, level - 1] = 1.0
    return rho


def check_density_matrix(rho: np.ndarray, herm_tol=1e-12, trace_tol=1e-9,
                         eig_tol=1e-9) -> None:
    """Validate Hermiticity, unit trace, and positivity; raise on violation."""
    rho = np.asarray(rho)
    herm = np.abs(rho - np.conj(np.swapaxes(rho, -1, -2))).max()
    if herm > herm_tol:
        raise DensityMatrixError(f"not Hermitian: max asymmetry {herm:.3e}")
    tr = np.trace(rho, axis1=-2, axis2=-1)
    terr = np.abs(tr - 1.0).max()
    if terr > trace_tol:
        raise DensityMatrixError(f"trace deviates from 1 by {terr:.3e}")
    eigs = np.linalg.eigvalsh(rho)
    if eigs.min() < -eig_tol:
        raise DensityMatrixError(f"negative eigenvalue {eigs.min():.3e}")


# -- relaxation ---------------------------------------------------------------

@dataclass(frozen=True)
class RelaxationSpec:
    """Dephasing rates per coherence and population-transfer rates.

    ``dephasing[a, b]`` (s^-1, zero diagonal) damps ``rho[a, b]``;
    ``pop_rates`` is the rate matrix M of dp/dt = M p: excited lifetimes
    feed the grounds through the branching table, ground populations
    redistribute among the other grounds at the spin lifetime.  Coherences
    between two excited levels use the optical dephasing time.
    """

    dephasing: np.ndarray
    pop_rates: np.ndarray

    def __post_init__(self):
        deph = np.asarray(self.dephasing, dtype=float).copy()
        pop = np.asarray(self.pop_rates, dtype=float).copy()
        if deph.shape != (6, 6) or pop.shape != (6, 6):
            raise ValueError("relaxation tables must be 6x6")
        if np.any(deph < 0) or np.any(np.diag(deph) != 0):
            raise ValueError("dephasing rates must be >= 0 with zero diagonal")
        off = pop - np.diag(np.diag(pop))
        if np.any(off < 0):
            raise ValueError("population transfer rates must be >= 0")
        if np.abs(pop.sum(axis=0)).max() > 1e-12 * max(1.0, np.abs(pop).max()):
            raise ValueError("population rate matrix must conserve total population")
        deph.setflags(write=False)
        pop.setflags(write=False)
        object.__setattr__(self, "dephasing", deph)
        object.__setattr__(self, "pop_rates", pop)

    @classmethod
    def from_system(cls, ls: LevelSystem) -> "RelaxationSpec":
        deph = np.zeros((6, 6))
        for a in range(6):
            for b in range(6):
                if a == b:
                    continue
                a_exc, b_exc = a >= 3, b >= 3
                if a_exc != b_exc:
                    deph[a, b] = 1.0 / ls.t2_opt_s
                elif not a_exc:
                    deph[a, b] = 1.0 / ls.t2_spin_s
                else:
                    deph[a, b] = 1.0 / ls.t2_opt_s
        pop = np.zeros((6, 6))
        g_opt = 1.0 / ls.t1_opt_s
        for j in range(3, 6):
            pop[j, j] -= g_opt
            for i in range(3):
                pop[i, j] += ls.branching[i, j - 3] * g_opt
        g_spin = 1.0 / ls.t1_spin_s
        for g in range(3):
            pop[g, g] -= g_spin
            for g2 in range(3):
                if g2 != g:
                    pop[g2, g] += 0.5 * g_spin
        return cls(dephasing=deph, pop_rates=pop)

    @classmethod
    def off(cls) -> "RelaxationSpec":
        return cls(dephasing=np.zeros((6, 6)), pop_rates=np.zeros((6, 6)))


# -- detuning tables ----------------------------------------------------------

def level_shifts_of(d, ls: LevelSystem | None = None) -> np.ndarray:
    """Normalize a detuning description to per-level shifts (6,) in Hz.

    Accepts an AtomClass, a per-level array, or a pair-detuning table as
    produced by class_detunings (gauge fixed by shift(level 1) = 0).
    """
    if isinstance(d, AtomClass):
        return class_level_shifts(ls, d) if ls is not None else np.array(
            [0.0, 0.0, d.delta_g, d.delta_opt - d.delta_e, d.delta_opt, d.delta_opt])
    if isinstance(d, dict):
        shifts = np.zeros(6)
        for k in range(2, 7):
            shifts[k - 1] = d[(1, k)]
        return shifts
    arr = np.asarray(d, dtype=float)
    if arr.shape != (6,):
        raise ValueError("per-level shifts must have shape (6,)")
    return arr


def _rwa_check(pulses, ls: LevelSystem | None) -> None:
    if ls is None:
        return
    gaps = [ls.splitting_hz(1, 2), ls.splitting_hz(2, 3),
            ls.splitting_hz(4, 5), ls.splitting_hz(5, 6)]
    min_split = min(g for g in gaps if g > 0) if any(g > 0 for g in gaps) else 0.0
    if min_split == 0.0:
        return
    for p in pulses:
        bw = 0.44 / p.envelope.timescale
        if bw > 0.2 * min_split:
            warnings.warn(
                f"pulse bandwidth ~{bw:.3g} Hz exceeds 20% of the smallest "
                f"splitting {min_split:.3g} Hz; single-transition treatment "
                "is getting marginal", stacklevel=3)


# -- segment engine -----------------------------------------------------------

@dataclass
class WindowTrace:
    """Sampled co-rotating coherence envelopes for one observation window."""

    times: np.ndarray     # (S,)
    sigma: np.ndarray     # (K, T, S) complex, element rho[upper, lower]


@dataclass
class BatchTraces:
    """Per-class traces for a whole timeline run."""

    transitions: tuple    # T ordered (lower, upper) pairs
    windows: tuple        # WindowTrace per observation window
    shifts: np.ndarray    # (K, 6) per-level shifts in Hz
    final_rho: np.ndarray

    def sigma(self, window: int, transition) -> np.ndarray:
        t = self.transitions.index(tuple(transition))
        return self.windows[window].sigma[:, t, :]

    def detuning_hz(self, transition) -> np.ndarray:
        """Emitting-element detuning (shift_upper - shift_lower) per class."""
        i, j = transition
        return self.shifts[:, j - 1] - self.shifts[:, i - 1]


def _pulse_intervals(pulses):
    """Disjoint time intervals with their active pulse sets."""
    edges = sorted({e for p in pulses for e in p.support})
    intervals = []
    for a, b in zip(edges, edges[1:]):
        active = [p for p in pulses if p.support[0] <= a and p.support[1] >= b]
        if active:
            intervals.append((a, b, tuple(active)))
    return intervals


def _integrate_interval(rho, ell_rad, t0, t1, active, relax, n_steps,
                        snap_times, snap_rows, snap_cols, level_pos=None):
    """RK4-advance all classes over [t0, t1]; returns snapshots (K,S,T)
    taken at the grid step nearest each snapshot time."""
    dt = (t1 - t0) / n_steps
    t_half = t0 + np.arange(2 * n_steps + 1) * (0.5 * dt)
    P = len(active)
    drv_i = np.empty(P, dtype=np.int64)
    drv_j = np.empty(P, dtype=np.int64)
    drv_amp = np.empty((P, 2 * n_steps + 1), dtype=np.float64)
    drv_ph = np.empty((P, 2 * n_steps + 1), dtype=np.complex128)
    for m, p in enumerate(active):
        i, j = p.transition
        drv_i[m] = level_pos[i - 1] if level_pos else i - 1
        drv_j[m] = level_pos[j - 1] if level_pos else j - 1
        drv_amp[m] = 0.5 * p.envelope.rabi(t_half - p.t0, p.area)
        drv_ph[m] = np.exp(1j * (p.phase - TWO_PI * p.carrier_detuning_hz * t_half))
    if len(snap_times):
        steps = np.clip(np.rint((np.asarray(snap_times) - t0) / dt), 0, n_steps)
        snap_steps = steps.astype(np.int64)
    else:
        snap_steps = np.empty(0, dtype=np.int64)
    snap_out = np.empty((rho.shape[0], len(snap_steps), len(snap_rows)),
                        dtype=np.complex128)
    _kernels.rk4_segment(rho, ell_rad, n_steps, dt, drv_i, drv_j, drv_amp,
                         drv_ph, relax.dephasing, relax.pop_rates,
                         snap_steps, np.asarray(snap_rows, dtype=np.int64),
                         np.asarray(snap_cols, dtype=np.int64), snap_out)
    grid_times = t0 + snap_steps * dt
    return snap_out, grid_times


def _steps_for(t0, t1, active, shifts):
    f_max = float(np.abs(shifts).max()) if shifts.size else 0.0
    f_max += max(abs(p.carrier_detuning_hz) for p in active)
    # resolve both the envelope and the full Rabi rotation (RK4 error grows
    # as theta^5 at fixed step count, so steps scale with the pulse area)
    h = min(p.envelope.timescale / max(1.0, p.area / math.pi) for p in active)
    h /= STEPS_PER_TIMESCALE
    if f_max > 0:
        h = min(h, 1.0 / (STEPS_PER_TIMESCALE * f_max))
    return max(1, int(math.ceil((t1 - t0) / h)))


def _free_advance(rho, shifts, relax, duration):
    """Exact free evolution: detuning phases, dephasing, rate-equation
    populations via the matrix exponential."""
    if duration == 0.0:
        return rho
    omega = TWO_PI * (shifts[:, :, None] - shifts[:, None, :])
    factor = np.exp((-1j * omega - relax.dephasing[None]) * duration)
    pops = np.einsum("kaa->ka", rho).real.copy()
    rho *= factor
    prop = expm(relax.pop_rates * duration)
    new_pops = pops @ prop.T
    idx = np.arange(rho.shape[-1])
    rho[:, idx, idx] = new_pops
    return rho


class _CompactRelax:
    """Relaxation tables restricted to the active level subspace."""

    def __init__(self, dephasing, pop_rates):
        self.dephasing = dephasing
        self.pop_rates = pop_rates


def _active_levels(rho0, pulses, relax) -> np.ndarray:
    """0-based indices of levels that can ever acquire amplitude.

    A level is active if it starts populated or coherent, is driven by a
    pulse, or receives population flow from an active level; everything
    else is identically zero for the whole run and is dropped exactly.
    """
    mask = np.zeros(6, dtype=bool)
    mag = np.abs(np.asarray(rho0)).reshape(-1, 6, 6).sum(axis=0)
    mask |= (mag.sum(axis=0) > 0) | (mag.sum(axis=1) > 0)
    for p in pulses:
        mask[p.transition[0] - 1] = True
        mask[p.transition[1] - 1] = True
    changed = True
    while changed:
        changed = False
        for d in range(6):
            if not mask[d] and np.any(relax.pop_rates[d, mask] != 0.0):
                mask[d] = True
                changed = True
    return np.flatnonzero(mask)


def _hermitize(rho):
    # guards against rounding drift; RK4 preserves Hermiticity exactly in
    # real arithmetic
    np.copyto(rho, 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2))))


def run_classes(tl: SequenceTimeline, shifts: np.ndarray, ls: LevelSystem,
                relax: RelaxationSpec, rho0=None, record_transitions=None,
                tol: float | None = None, validate: bool = True) -> BatchTraces:
    """Evolve a batch of classes through the timeline, sampling coherences
    in every observation window.

    Pure function of its arguments; classes never interact, and identical
    inputs give bit-identical traces at any thread count.
    """
    shifts = np.atleast_2d(np.asarray(shifts, dtype=float))
    K = shifts.shape[0]
    if record_transitions is None:
        record_transitions = DOUBLE_LAMBDA
    record_transitions = tuple(tuple(t) for t in record_transitions)

    if rho0 is None:
        rho0 = ground_state(2)
    _rwa_check(tl.pulses, ls)

    # restrict everything to the active level subspace (exact: dropped
    # levels hold no amplitude and receive none)
    act = _active_levels(rho0, tl.pulses, relax)
    pos = {int(a): m for m, a in enumerate(act)}
    full_shifts = shifts
    shifts = shifts[:, act]
    relax_c = _CompactRelax(np.ascontiguousarray(relax.dephasing[np.ix_(act, act)]),
                            np.ascontiguousarray(relax.pop_rates[np.ix_(act, act)]))
    rho_full0 = np.asarray(rho0, dtype=np.complex128)
    rho = np.array(np.broadcast_to(rho_full0, (K, 6, 6))[:, act][:, :, act],
                   order="C")
    # recorded transitions whose levels were dropped stay identically zero
    rec_map = [(t_idx, pos[j - 1], pos[i - 1])
               for t_idx, (i, j) in enumerate(record_transitions)
               if (i - 1) in pos and (j - 1) in pos]
    rows = np.array([r for (_, r, _) in rec_map], dtype=np.int64)
    cols = np.array([c for (_, _, c) in rec_map], dtype=np.int64)
    t_slots = np.array([t for (t, _, _) in rec_map], dtype=np.int64)

    intervals = _pulse_intervals(tl.pulses)
    win_times = [w.sample_times() for w in tl.windows]
    out = [np.zeros((K, len(record_transitions), len(t)), dtype=np.complex128)
           for t in win_times]

    flat = []
    for wi, times in enumerate(win_times):
        flat.extend((t, wi, si) for si, t in enumerate(times))
    flat.sort(key=lambda x: (x[0], x[1], x[2]))

    starts = [iv[0] for iv in intervals]
    t_cur = min([0.0] + starts + [t for (t, _, _) in flat[:1]])
    ell_rad = TWO_PI * shifts
    omega_rec = TWO_PI * (shifts[:, rows] - shifts[:, cols])   # (K, T_active)

    ptr = 0

    def gap_samples(until):
        nonlocal ptr, rho
        t0 = t_cur
        sigma0 = None
        while ptr < len(flat) and flat[ptr][0] < until:
            ts, wi, si = flat[ptr]
            if sigma0 is None:
                sigma0 = rho[:, rows, cols] * np.exp(1j * omega_rec * t0)
            decay = np.exp(-relax_c.dephasing[rows, cols][None, :] * (ts - t0))
            out[wi][:, t_slots, si] = sigma0 * decay
            ptr += 1

    def integrate(t0, t1, active):
        nonlocal rho, ptr
        snap = []
        while ptr < len(flat) and flat[ptr][0] < t1:
            snap.append(flat[ptr])
            ptr += 1
        snap_times = [s[0] for s in snap]
        n = _steps_for(t0, t1, active, shifts)
        if tol is not None:
            coarse = rho.copy()
            _integrate_interval(coarse, ell_rad, t0, t1, active, relax_c, n,
                                [], rows, cols, pos)
        result, grid_times = _integrate_interval(rho, ell_rad, t0, t1, active,
                                                 relax_c,
                                                 2 * n if tol is not None else n,
                                                 snap_times, rows, cols, pos)
        if tol is not None:
            diff = np.abs(rho - coarse).max()
            if diff > tol:
                raise IntegrationToleranceError(
                    f"step halving changed the state by {diff:.3e} > tol {tol:.3e}")
        for m, ((ts, wi, si), gt) in enumerate(zip(snap, grid_times)):
            # envelopes are recorded at the nearest integrator grid time but
            # stored under the requested sample time (error <= dt/2)
            out[wi][:, t_slots, si] = result[:, m, :] * np.exp(1j * omega_rec * gt)

    for (a, b, active) in intervals:
        if a > t_cur:
            gap_samples(a)
            rho = _free_advance(rho, shifts, relax_c, a - t_cur)
        t_cur = a
        integrate(a, b, active)
        _hermitize(rho)
        t_cur = b
    if ptr < len(flat):
        gap_samples(np.inf)

    if validate:
        check_density_matrix(rho)
    final = np.zeros((K, 6, 6), dtype=np.complex128)
    final[:, act[:, None], act[None, :]] = rho
    return BatchTraces(transitions=record_transitions,
                       windows=tuple(WindowTrace(t, o) for t, o in zip(win_times, out)),
                       shifts=full_shifts, final_rho=final)


# -- public single-class operations ------------------------------------------

def apply_pulse(rho: np.ndarray, pulse: Pulse, d, relax: RelaxationSpec,
                tol: float | None = None, ls: LevelSystem | None = None,
                validate: bool = True) -> np.ndarray:
    """Integrate one pulse over its truncated envelope.

    ``rho`` is the state at the start of the envelope support; the returned
    state is at the end of the support.  ``d`` is the class's detuning
    description (AtomClass, pair table, or per-level shifts).  When ``tol``
    is given the integration is repeated at half step and the difference
    must stay below ``tol``.
    """
    shifts = np.atleast_2d(level_shifts_of(d, ls))
    _rwa_check([pulse], ls)
    state = np.array(rho, dtype=np.complex128).reshape(1, 6, 6).copy()
    t0, t1 = pulse.support
    n = _steps_for(t0, t1, [pulse], shifts)
    if tol is not None:
        coarse = state.copy()
        _integrate_interval(coarse, TWO_PI * shifts, t0, t1, [pulse], relax, n,
                            [], [], [])
        _integrate_interval(state, TWO_PI * shifts, t0, t1, [pulse], relax, 2 * n,
                            [], [], [])
        diff = np.abs(state - coarse).max()
        if diff > tol:
            raise IntegrationToleranceError(
                f"step halving changed the state by {diff:.3e} > tol {tol:.3e}")
    else:
        _integrate_interval(state, TWO_PI * shifts, t0, t1, [pulse], relax, n,
                            [], [], [])
    _hermitize(state)
    if validate:
        check_density_matrix(state[0])
    return state[0]


def free_evolve(rho: np.ndarray, duration: float, d, relax: RelaxationSpec,
                ls: LevelSystem | None = None) -> np.ndarray:
    """Exact free evolution for one class over ``duration`` seconds."""
    if duration < 0:
        raise ValueError("duration must be >= 0")
    shifts = np.atleast_2d(level_shifts_of(d, ls))
    state = np.array(rho, dtype=np.complex128).reshape(1, 6, 6).copy()
    state = _free_advance(state, shifts, relax, duration)
    return state[0]


def run_class(tl: SequenceTimeline, c: AtomClass, ls: LevelSystem,
              relax: RelaxationSpec, rho0=None, record_transitions=None,
              tol: float | None = None) -> BatchTraces:
    """Evolve a single atom class through the timeline (K = 1 traces)."""
    shifts = class_level_shifts(ls, c)
    return run_classes(tl, shifts[None, :], ls, relax, rho0=rho0,
                       record_transitions=record_transitions, tol=tol)
