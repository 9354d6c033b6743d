"""Class sampling, batched runs, and reduction to macroscopic emission.

The emitted field on an optical pair (i, j) is the weighted coherent sum of
the per-class envelopes with their detuning phases restored,

    E_ij(t) = i * kappa * sum_k w_k d_ij sigma_ij^(k)(t) exp(-i 2 pi D_k t),

in units of the input pulse's peak amplitude (kappa = 2 pi times the
thin-sample coupling rate in Hz over the input peak Rabi frequency; the
coupling rate is a scale knob, absolute efficiencies live in the
propagation model).  The incident input pulse itself is added to its
channel with unit peak so heterodyne spectra show both the transmitted
input and the echo.

Reductions run in class-index order with numpy's single-threaded pairwise
summation, so records are bit-identical for a given seed at any thread
count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dynamics import BatchTraces, RelaxationSpec, run_classes
from .levels import (AtomClass, DOUBLE_LAMBDA, DetuningModel, Distribution,
                     LevelSystem, class_level_shifts, transition_frequency)
from .sequence import SequenceTimeline

TWO_PI = 2.0 * math.pi


class SamplingError(ValueError):
    """Unsupported distribution/strategy combination or bad spec."""


@dataclass(frozen=True)
class AreaSpread:
    """Discrete weighted set of global pulse-area factors (beam inhomogeneity)."""

    factors: tuple = (1.0,)
    weights: tuple = (1.0,)

    def __post_init__(self):
        f = np.asarray(self.factors, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if f.ndim != 1 or f.shape != w.shape or f.size == 0:
            raise SamplingError("area factors and weights must be matching 1-D lists")
        if np.any(f <= 0):
            raise SamplingError("area factors must be positive")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise SamplingError("area-factor weights must be >= 0 and sum to 1")
        object.__setattr__(self, "factors", tuple(f))
        object.__setattr__(self, "weights", tuple(w / w.sum()))

    @classmethod
    def gaussian(cls, sigma: float, n: int = 8) -> "AreaSpread":
        """Gauss-Hermite discretization of a Gaussian factor spread around 1."""
        x, w = np.polynomial.hermite.hermgauss(n)
        factors = 1.0 + math.sqrt(2.0) * sigma * x
        w = w / math.sqrt(math.pi)
        keep = factors > 0
        return cls(tuple(factors[keep]), tuple(w[keep] / w[keep].sum()))


@dataclass(frozen=True)
class EnsembleSpec:
    """How to draw atom classes and which coherences to record.

    ``n_classes`` is the total sample count for ``monte_carlo`` and the
    per-active-dimension node count for ``grid`` and ``gauss_quadrature``
    (the total is then the product over dimensions with nonzero width).
    """

    model: DetuningModel
    n_classes: int = 64
    sampling: str = "gauss_quadrature"
    seed: int = 0
    area_spread: AreaSpread = field(default_factory=AreaSpread)
    record_transitions: tuple = DOUBLE_LAMBDA
    grid_gauss_halfwidth_sigmas: float = 5.0
    grid_lorentz_halfwidth_hwhms: float = 50.0

    def __post_init__(self):
        if self.n_classes < 1:
            raise SamplingError("n_classes must be >= 1")
        if self.sampling not in ("monte_carlo", "grid", "gauss_quadrature"):
            raise SamplingError(f"unknown sampling strategy {self.sampling!r}")


def _quadrature_nodes(dist: Distribution, n: int):
    if dist.is_point:
        return np.array([0.0]), np.array([1.0])
    if dist.shape == "gaussian":
        x, w = np.polynomial.hermite.hermgauss(n)
        nodes = math.sqrt(2.0) * dist.width_hz * x
        w = w / math.sqrt(math.pi)
    elif dist.shape == "uniform":
        x, w = np.polynomial.legendre.leggauss(n)
        nodes = dist.width_hz * x
        w = w / 2.0
    elif dist.shape == "lorentzian":
        # substitute x = gamma tan(theta); the Lorentzian weight becomes flat
        x, w = np.polynomial.legendre.leggauss(n)
        theta = 0.5 * math.pi * x
        nodes = dist.width_hz * np.tan(theta)
        w = w / 2.0
    else:
        raise SamplingError(f"gauss_quadrature does not support {dist.shape!r}")
    # drop numerically weightless tails so they cannot inflate step counts
    keep = w > 1e-14
    nodes, w = nodes[keep], w[keep]
    return nodes, w / w.sum()


def _grid_nodes(dist: Distribution, n: int, spec: EnsembleSpec):
    if dist.is_point:
        return np.array([0.0]), np.array([1.0])
    if dist.shape == "tabulated":
        nodes = np.asarray(dist.nodes_hz, dtype=float)
        w = np.asarray(dist.weights, dtype=float)
        return nodes, w / w.sum()
    if dist.shape == "gaussian":
        half = spec.grid_gauss_halfwidth_sigmas * dist.width_hz
        nodes = np.linspace(-half, half, n)
        w = np.exp(-0.5 * (nodes / dist.width_hz) ** 2)
    elif dist.shape == "uniform":
        nodes = np.linspace(-dist.width_hz, dist.width_hz, n)
        w = np.ones_like(nodes)
    elif dist.shape == "lorentzian":
        half = spec.grid_lorentz_halfwidth_hwhms * dist.width_hz
        nodes = np.linspace(-half, half, n)
        w = 1.0 / (1.0 + (nodes / dist.width_hz) ** 2)
    else:
        raise SamplingError(f"grid does not support {dist.shape!r}")
    return nodes, w / w.sum()


def _mc_samples(dist: Distribution, n: int, rng: np.random.Generator):
    if dist.is_point:
        return np.zeros(n)
    if dist.shape == "gaussian":
        return rng.normal(0.0, dist.width_hz, n)
    if dist.shape == "uniform":
        return rng.uniform(-dist.width_hz, dist.width_hz, n)
    if dist.shape == "lorentzian":
        return dist.width_hz * np.tan(math.pi * (rng.random(n) - 0.5))
    if dist.shape == "tabulated":
        nodes = np.asarray(dist.nodes_hz, dtype=float)
        w = np.asarray(dist.weights, dtype=float)
        return rng.choice(nodes, size=n, p=w / w.sum())
    raise SamplingError(f"monte_carlo does not support {dist.shape!r}")


def sample_classes(spec: EnsembleSpec) -> list:
    """Draw the atom classes of the ensemble; deterministic for a given seed.

    Grid and quadrature modes build the product of per-dimension node sets
    (optical x ground x excited) with product weights; Monte Carlo draws the
    three detunings jointly.  Weights always sum to 1.
    """
    dists = (spec.model.optical, spec.model.ground, spec.model.excited)
    if spec.sampling == "monte_carlo":
        rng = np.random.default_rng(spec.seed)
        cols = [_mc_samples(d, spec.n_classes, rng) for d in dists]
        w = 1.0 / spec.n_classes
        return [AtomClass(cols[0][k], cols[1][k], cols[2][k], w)
                for k in range(spec.n_classes)]
    maker = _grid_nodes if spec.sampling == "grid" else _quadrature_nodes
    if spec.sampling == "gauss_quadrature":
        per_dim = [maker(d, spec.n_classes) for d in dists]
    else:
        per_dim = [maker(d, spec.n_classes, spec) for d in dists]
    classes = []
    (no, wo), (ng, wg), (ne, we) = per_dim
    norm = 0.0
    for a in range(len(no)):
        for b in range(len(ng)):
            for c in range(len(ne)):
                norm += wo[a] * wg[b] * we[c]
    for a in range(len(no)):
        for b in range(len(ng)):
            for c in range(len(ne)):
                classes.append(AtomClass(no[a], ng[b], ne[c],
                                         wo[a] * wg[b] * we[c] / norm))
    return classes


def class_shift_array(ls: LevelSystem, classes) -> np.ndarray:
    return np.stack([class_level_shifts(ls, c) for c in classes])


# -- emission ----------------------------------------------------------------

@dataclass
class EmissionWindow:
    times: np.ndarray        # (S,)
    fields: np.ndarray       # (T, S) complex, per recorded transition


@dataclass
class EmissionRecord:
    """Macroscopic complex field amplitudes per window and transition."""

    transitions: tuple
    windows: tuple
    nominal_offsets_hz: dict
    metadata: dict

    def field(self, transition) -> tuple:
        """(times, values) concatenated over windows for one transition."""
        t = self.transitions.index(tuple(transition))
        times = np.concatenate([w.times for w in self.windows])
        vals = np.concatenate([w.fields[t] for w in self.windows])
        order = np.argsort(times, kind="stable")
        return times[order], vals[order]

    def window_field(self, window: int, transition) -> tuple:
        t = self.transitions.index(tuple(transition))
        w = self.windows[window]
        return w.times, w.fields[t]

    def peak(self, transition, t_min=None, t_max=None):
        """(time, complex amplitude) of max |E| on a transition, optionally gated."""
        times, vals = self.field(transition)
        mask = np.ones(len(times), dtype=bool)
        if t_min is not None:
            mask &= times >= t_min
        if t_max is not None:
            mask &= times <= t_max
        if not mask.any():
            raise ValueError("empty gate")
        idx = np.flatnonzero(mask)
        best = idx[np.argmax(np.abs(vals[idx]))]
        return times[best], vals[best]

    def to_csv(self, path) -> None:
        cols = ["time_s", "window"]
        for (i, j) in self.transitions:
            cols += [f"E{i}{j}_re", f"E{i}{j}_im"]
        lines = [",".join(cols)]
        for wi, w in enumerate(self.windows):
            for s in range(len(w.times)):
                row = [f"{w.times[s]:.17g}", str(wi)]
                for t in range(len(self.transitions)):
                    row += [f"{w.fields[t, s].real:.17g}", f"{w.fields[t, s].imag:.17g}"]
                lines.append(",".join(row))
        Path(path).write_text("\n".join(lines) + "\n")

    def manifest(self) -> dict:
        return {
            "transitions": [list(t) for t in self.transitions],
            "nominal_offsets_hz": {f"{i}{j}": v for (i, j), v in
                                   sorted(self.nominal_offsets_hz.items())},
            **self.metadata,
        }

    def save_manifest(self, path) -> None:
        Path(path).write_text(json.dumps(self.manifest(), indent=2, sort_keys=True))


def input_pulse_of(tl: SequenceTimeline):
    """The first sub-pi pulse, used as the normalization reference."""
    for p in tl.pulses:
        if p.area < math.pi:
            return p
    return None


def emit(classes, traces: BatchTraces, tl: SequenceTimeline, ls: LevelSystem,
         coupling_rate_hz: float = 1e6, include_input: bool = True,
         input_scale: float = 1.0, metadata: dict | None = None) -> EmissionRecord:
    """Reduce per-class traces to an EmissionRecord (thin-sample mode)."""
    weights = np.array([c.weight for c in classes], dtype=float)
    if len(classes) != traces.shifts.shape[0]:
        raise ValueError("class count does not match trace batch size")
    inp = input_pulse_of(tl)
    if inp is not None:
        omega_peak = inp.envelope.peak_rabi(inp.area)
    else:
        omega_peak = 1.0
    kappa = TWO_PI * coupling_rate_hz / omega_peak

    windows = []
    for wt in traces.windows:
        fields = np.zeros((len(traces.transitions), len(wt.times)), dtype=np.complex128)
        for t, trans in enumerate(traces.transitions):
            d = ls.dipole_amplitude(*trans)
            if d == 0.0:
                continue
            det = traces.detuning_hz(trans)                     # (K,)
            phase = np.exp(-1j * TWO_PI * det[:, None] * wt.times[None, :])
            contrib = (weights * d)[:, None] * wt.sigma[:, t, :] * phase
            fields[t] = 1j * kappa * contrib.sum(axis=0)
        if include_input and inp is not None:
            ti = traces.transitions.index(inp.transition) if inp.transition in traces.transitions else None
            if ti is not None:
                env = inp.envelope.rabi(wt.times - inp.t0, inp.area) / omega_peak
                carrier = np.exp(1j * (inp.phase - TWO_PI * inp.carrier_detuning_hz * wt.times))
                fields[ti] += input_scale * env * carrier
        windows.append(EmissionWindow(times=wt.times, fields=fields))

    offsets = {trans: transition_frequency(ls, *trans) for trans in traces.transitions}
    meta = {
        "n_classes": len(classes),
        "timeline_hash": tl.hash(),
        "coupling_rate_hz": coupling_rate_hz,
        "input_peak_rabi_rad_s": omega_peak,
        "amplitude_unit": "input pulse peak",
    }
    if inp is not None:
        meta["input_envelope_scale_s"] = inp.envelope.timescale
    else:
        meta["no_input"] = True
    meta.update(metadata or {})
    return EmissionRecord(transitions=traces.transitions, windows=tuple(windows),
                          nominal_offsets_hz=offsets, metadata=meta)


def _add_records(acc: EmissionRecord, rec: EmissionRecord, w: float) -> None:
    for wa, wb in zip(acc.windows, rec.windows):
        wa.fields += w * wb.fields


def run_experiment(tl: SequenceTimeline, ls: LevelSystem, spec: EnsembleSpec,
                   relax: RelaxationSpec, rho0=None, tol=None,
                   coupling_rate_hz: float = 1e6, include_input: bool = True,
                   validate: bool = True) -> EmissionRecord:
    """Sample classes, run the timeline once per area factor, and weight-sum
    the emissions.  Deterministic for a fixed seed at any thread count."""
    classes = sample_classes(spec)
    shifts = class_shift_array(ls, classes)
    record: EmissionRecord | None = None
    for factor, fw in zip(spec.area_spread.factors, spec.area_spread.weights):
        tl_f = tl.with_area_factor(factor) if factor != 1.0 else tl
        traces = run_classes(tl_f, shifts, ls, relax, rho0=rho0,
                             record_transitions=spec.record_transitions,
                             tol=tol, validate=validate)
        rec = emit(classes, traces, tl, ls, coupling_rate_hz=coupling_rate_hz,
                   include_input=include_input, input_scale=factor)
        if record is None:
            for w in rec.windows:
                w.fields *= fw
            record = rec
        else:
            _add_records(record, rec, fw)
    record.metadata.update({
        "seed": spec.seed,
        "sampling": spec.sampling,
        "n_classes_requested": spec.n_classes,
        "area_factors": list(spec.area_spread.factors),
        "area_weights": list(spec.area_spread.weights),
    })
    return record
