"""Pulse-sequence language: parsing, validation, and echo-pathway prediction.

The language is line oriented with ``#`` comments::

    system <file>
    let <name> = <duration expression>
    pulse at=<time> trans=<w25|2-5> area=<x>pi env=gauss(fwhm=<dur>)|square(dur=<dur>)
          [phase=<x>pi] [detune=<freq>] [k=(x,y,z)]
    observe from=<time> to=<time> rate=<freq>

Durations take ``us|ms|s`` suffixes, frequencies ``Hz|kHz|MHz``.  Times are
absolute from t = 0 and may be simple expressions of earlier ``let`` names,
e.g. ``2*tau_a+tau_b-8us``.  ``at`` is the pulse center (envelope peak).

Pathway prediction walks the coherence label through the pulse train treating
each post-input pulse as a full swap of its two levels, accumulates the
optical-detuning phase per free interval, and solves for the time where it
cancels.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .levels import LevelSystem, is_excited

_DUR_RE = re.compile(r"^([+-]?\d*\.?\d+(?:[eE][+-]?\d+)?)(us|ms|s)$")
_FREQ_RE = re.compile(r"^([+-]?\d*\.?\d+(?:[eE][+-]?\d+)?)(Hz|kHz|MHz)$")
_PI_RE = re.compile(r"^([+-]?\d*\.?\d+(?:[eE][+-]?\d+)?)pi$")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_NUM_RE = re.compile(r"^[+-]?\d*\.?\d+(?:[eE][+-]?\d+)?$")

_DUR_SCALE = {"us": 1e-6, "ms": 1e-3, "s": 1.0}
_FREQ_SCALE = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6}

GAUSSIAN_TRUNCATION_FWHM = 3.0
# Integral of exp(-4 ln2 t^2 / fwhm^2) over the real line, per unit fwhm.
_GAUSS_AREA_PER_FWHM = math.sqrt(math.pi / (4.0 * math.log(2.0)))


class SequenceError(ValueError):
    """Parse or validation failure, carrying line/column when known."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f"line {line}"
            if column is not None:
                loc += f", col {column}"
            loc = f" ({loc})"
        super().__init__(message + loc)


class NoRephasingPathway(RuntimeError):
    """No coherence pathway of the timeline rephases after the last pulse."""


@dataclass(frozen=True)
class GaussianEnvelope:
    fwhm: float

    @property
    def support_halfwidth(self) -> float:
        return GAUSSIAN_TRUNCATION_FWHM * self.fwhm

    @property
    def timescale(self) -> float:
        return self.fwhm

    def peak_rabi(self, area: float) -> float:
        return area / (self.fwhm * _GAUSS_AREA_PER_FWHM)

    def rabi(self, t_rel, area: float):
        """Rabi frequency Omega(t) in rad/s at times relative to the center."""
        t_rel = np.asarray(t_rel, dtype=float)
        out = self.peak_rabi(area) * np.exp(-4.0 * math.log(2.0) * (t_rel / self.fwhm) ** 2)
        # small relative slack so grid endpoints are never excluded by rounding
        return np.where(np.abs(t_rel) <= self.support_halfwidth * (1 + 1e-9), out, 0.0)

    def canonical(self) -> str:
        return f"gauss(fwhm={_fmt_dur(self.fwhm)})"


@dataclass(frozen=True)
class SquareEnvelope:
    duration: float

    @property
    def support_halfwidth(self) -> float:
        return 0.5 * self.duration

    @property
    def timescale(self) -> float:
        return self.duration

    def peak_rabi(self, area: float) -> float:
        return area / self.duration

    def rabi(self, t_rel, area: float):
        t_rel = np.asarray(t_rel, dtype=float)
        return np.where(np.abs(t_rel) <= self.support_halfwidth * (1 + 1e-9),
                        self.peak_rabi(area), 0.0)

    def canonical(self) -> str:
        return f"square(dur={_fmt_dur(self.duration)})"


@dataclass(frozen=True)
class Pulse:
    """One shaped optical pulse addressing a single transition.

    ``t0`` is the envelope center; ``area`` is the resonant rotation angle
    theta = integral of Omega dt over the (truncated) envelope.
    """

    t0: float
    transition: tuple
    area: float
    envelope: object
    phase: float = 0.0
    carrier_detuning_hz: float = 0.0
    k_vector: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if self.area < 0:
            raise SequenceError("pulse area must be >= 0")
        if self.envelope.timescale <= 0:
            raise SequenceError("envelope width must be positive")
        i, j = self.transition
        if not (1 <= i < j <= 6):
            raise SequenceError(f"bad transition pair {self.transition}")
        k = np.asarray(self.k_vector, dtype=float)
        if k.shape != (3,) or not np.isfinite(k).all() or np.linalg.norm(k) == 0:
            raise SequenceError("k vector must be a finite non-zero 3-vector")
        object.__setattr__(self, "k_vector", tuple(k / np.linalg.norm(k)))

    @property
    def support(self) -> tuple:
        h = self.envelope.support_halfwidth
        return (self.t0 - h, self.t0 + h)

    def scaled(self, area_factor: float) -> "Pulse":
        return Pulse(self.t0, self.transition, self.area * area_factor,
                     self.envelope, self.phase, self.carrier_detuning_hz, self.k_vector)

    def canonical(self) -> str:
        i, j = self.transition
        parts = [
            f"pulse at={_fmt_dur(self.t0)}",
            f"trans={i}-{j}",
            f"area={_fmt_pi(self.area)}",
            f"env={self.envelope.canonical()}",
        ]
        if self.phase != 0.0:
            parts.append(f"phase={_fmt_pi(self.phase)}")
        if self.carrier_detuning_hz != 0.0:
            parts.append(f"detune={repr(self.carrier_detuning_hz)}Hz")
        if tuple(self.k_vector) != (0.0, 0.0, 1.0):
            kx, ky, kz = self.k_vector
            parts.append(f"k=({repr(kx)},{repr(ky)},{repr(kz)})")
        return " ".join(parts)


@dataclass(frozen=True)
class ObservationWindow:
    t_start: float
    t_stop: float
    sample_rate_hz: float

    def __post_init__(self):
        if self.t_stop <= self.t_start:
            raise SequenceError("observation window must have to > from")
        if self.sample_rate_hz <= 0:
            raise SequenceError("observation rate must be positive")

    def sample_times(self) -> np.ndarray:
        n = int(math.floor((self.t_stop - self.t_start) * self.sample_rate_hz)) + 1
        return self.t_start + np.arange(n) / self.sample_rate_hz

    def canonical(self) -> str:
        return (f"observe from={_fmt_dur(self.t_start)} to={_fmt_dur(self.t_stop)} "
                f"rate={repr(self.sample_rate_hz)}Hz")


@dataclass(frozen=True)
class SequenceTimeline:
    """Validated, time-ordered pulse program."""

    pulses: tuple
    windows: tuple = ()
    lets: dict = field(default_factory=dict)
    system_file: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(sorted(self.pulses, key=lambda p: p.t0)))
        object.__setattr__(self, "windows", tuple(self.windows))
        for p in self.pulses:
            if p.t0 < 0:
                raise SequenceError(f"negative pulse time {p.t0}")
        # Truncated supports of pulses sharing a transition must not overlap.
        by_trans: dict = {}
        for p in self.pulses:
            by_trans.setdefault(p.transition, []).append(p)
        for trans, plist in by_trans.items():
            plist.sort(key=lambda p: p.t0)
            for a, b in zip(plist, plist[1:]):
                if a.support[1] > b.support[0]:
                    raise SequenceError(
                        f"pulses on transition {trans} overlap near t={b.t0}")

    @property
    def total_duration(self) -> float:
        ends = [p.support[1] for p in self.pulses] + [w.t_stop for w in self.windows]
        return max(ends) if ends else 0.0

    def canonical(self) -> str:
        lines = []
        if self.system_file:
            lines.append(f"system {self.system_file}")
        for name in sorted(self.lets):
            lines.append(f"let {name} = {_fmt_dur(self.lets[name])}")
        lines.extend(p.canonical() for p in self.pulses)
        lines.extend(w.canonical() for w in self.windows)
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def with_area_factor(self, factor: float) -> "SequenceTimeline":
        return SequenceTimeline(
            pulses=tuple(p.scaled(factor) for p in self.pulses),
            windows=self.windows, lets=dict(self.lets), system_file=self.system_file)


@dataclass(frozen=True)
class PathwayPrediction:
    echo_time: float
    echo_transition: tuple
    echo_k: tuple
    phase_conjugation_count: int


def _fmt_dur(seconds: float) -> str:
    return f"{repr(float(seconds))}s"


def _fmt_pi(rad: float) -> str:
    return f"{repr(rad / math.pi)}pi"


def format_sequence(tl: SequenceTimeline) -> str:
    """Canonical printer; parse(format(parse(x))) == parse(x)."""
    return tl.canonical()


def _parse_scalar_with_unit(token, regex, scale, kind, line_no, col):
    m = regex.match(token)
    if not m:
        raise SequenceError(f"expected {kind} (got {token!r})", line_no, col)
    return float(m.group(1)) * scale[m.group(2)]


def _parse_term(body, lets, line_no, col):
    coef = 1.0
    if "*" in body:
        coef_str, body = body.split("*", 1)
        if not _NUM_RE.match(coef_str):
            raise SequenceError(f"bad coefficient {coef_str!r}", line_no, col)
        coef = float(coef_str)
    if _DUR_RE.match(body):
        return coef * _parse_scalar_with_unit(body, _DUR_RE, _DUR_SCALE, "duration",
                                              line_no, col)
    if _NAME_RE.match(body):
        if body not in lets:
            raise SequenceError(f"unknown name {body!r}", line_no, col)
        return coef * lets[body]
    raise SequenceError(f"bad term {body!r} (durations need us/ms/s units)", line_no, col)


def _parse_time_expr(expr, lets, line_no, col):
    """Sum of signed terms; a term is [coef*]name or a duration literal.

    Signs inside exponents (1e-06) do not split terms.
    """
    if not expr:
        raise SequenceError("empty time expression", line_no, col)
    parts = re.split(r"(?<![eE])([+-])", expr)
    total = 0.0
    idx = 0
    sign = 1.0
    if parts[0] == "":
        if len(parts) < 3:
            raise SequenceError(f"cannot parse time expression {expr!r}", line_no, col)
        sign = -1.0 if parts[1] == "-" else 1.0
        idx = 2
    while idx < len(parts):
        term = parts[idx]
        if term == "":
            raise SequenceError(f"cannot parse time expression {expr!r}", line_no, col)
        total += sign * _parse_term(term, lets, line_no, col)
        if idx + 1 >= len(parts):
            break
        sign = -1.0 if parts[idx + 1] == "-" else 1.0
        idx += 2
    return total


def _parse_transition(token, line_no, col):
    m = re.match(r"^w(\d)(\d)$", token) or re.match(r"^(\d)-(\d)$", token)
    if not m:
        raise SequenceError(f"unknown transition name {token!r}", line_no, col)
    i, j = int(m.group(1)), int(m.group(2))
    if not (1 <= i < j <= 6):
        raise SequenceError(f"transition levels out of range in {token!r}", line_no, col)
    return (i, j)


def _parse_envelope(token, line_no, col):
    m = re.match(r"^gauss\(fwhm=([^)]+)\)$", token)
    if m:
        return GaussianEnvelope(_parse_scalar_with_unit(m.group(1), _DUR_RE, _DUR_SCALE,
                                                        "duration", line_no, col))
    m = re.match(r"^square\(dur=([^)]+)\)$", token)
    if m:
        return SquareEnvelope(_parse_scalar_with_unit(m.group(1), _DUR_RE, _DUR_SCALE,
                                                      "duration", line_no, col))
    raise SequenceError(f"unknown envelope {token!r}", line_no, col)


def _parse_fields(tokens, line_no, line):
    fields = {}
    for tok in tokens:
        if "=" not in tok:
            raise SequenceError(f"expected key=value (got {tok!r})", line_no, line.find(tok) + 1)
        key, val = tok.split("=", 1)
        if key in fields:
            raise SequenceError(f"duplicate field {key!r}", line_no, line.find(tok) + 1)
        fields[key] = (val, line.find(tok) + 1)
    return fields


def parse_sequence(text: str, system: LevelSystem | None = None,
                   base_dir=None) -> SequenceTimeline:
    """Parse a pulse program into a validated timeline.

    A ``system <file>`` line loads the named level-system JSON (relative to
    ``base_dir``); otherwise the caller-provided ``system`` is attached.
    Parsing is pure apart from that one optional file read.
    """
    lets: dict = {}
    pulses: list = []
    windows: list = []
    system_file = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "system":
            if len(tokens) != 2:
                raise SequenceError("system takes one file argument", line_no, 1)
            system_file = tokens[1]
            from pathlib import Path
            path = Path(base_dir or ".") / system_file
            system = LevelSystem.load(path)
        elif head == "let":
            if len(tokens) < 4 or tokens[2] != "=":
                raise SequenceError("let syntax: let <name> = <duration>", line_no, 1)
            name = tokens[1]
            if not _NAME_RE.match(name):
                raise SequenceError(f"bad name {name!r}", line_no, line.find(name) + 1)
            lets[name] = _parse_time_expr("".join(tokens[3:]), lets, line_no,
                                          line.find("=") + 2)
        elif head == "pulse":
            fields = _parse_fields(tokens[1:], line_no, line)
            for req in ("at", "trans", "area", "env"):
                if req not in fields:
                    raise SequenceError(f"pulse missing {req}=", line_no, 1)
            at_val, at_col = fields["at"]
            t0 = _parse_time_expr(at_val, lets, line_no, at_col)
            if t0 < 0:
                raise SequenceError(f"negative time {at_val!r}", line_no, at_col)
            trans = _parse_transition(fields["trans"][0], line_no, fields["trans"][1])
            m = _PI_RE.match(fields["area"][0])
            if not m:
                raise SequenceError("area must be of the form <x>pi", line_no, fields["area"][1])
            area = float(m.group(1)) * math.pi
            env = _parse_envelope(fields["env"][0], line_no, fields["env"][1])
            phase = 0.0
            if "phase" in fields:
                m = _PI_RE.match(fields["phase"][0])
                if not m:
                    raise SequenceError("phase must be of the form <x>pi", line_no,
                                        fields["phase"][1])
                phase = float(m.group(1)) * math.pi
            detune = 0.0
            if "detune" in fields:
                detune = _parse_scalar_with_unit(fields["detune"][0], _FREQ_RE, _FREQ_SCALE,
                                                 "frequency", line_no, fields["detune"][1])
            kvec = (0.0, 0.0, 1.0)
            if "k" in fields:
                m = re.match(r"^\(([^,]+),([^,]+),([^)]+)\)$", fields["k"][0])
                if not m:
                    raise SequenceError("k must be (x,y,z)", line_no, fields["k"][1])
                kvec = tuple(float(g) for g in m.groups())
            try:
                pulses.append(Pulse(t0, trans, area, env, phase, detune, kvec))
            except SequenceError as e:
                raise SequenceError(e.args[0], line_no, 1) from None
        elif head == "observe":
            fields = _parse_fields(tokens[1:], line_no, line)
            for req in ("from", "to", "rate"):
                if req not in fields:
                    raise SequenceError(f"observe missing {req}=", line_no, 1)
            t_from = _parse_time_expr(fields["from"][0], lets, line_no, fields["from"][1])
            t_to = _parse_time_expr(fields["to"][0], lets, line_no, fields["to"][1])
            rate = _parse_scalar_with_unit(fields["rate"][0], _FREQ_RE, _FREQ_SCALE,
                                           "frequency", line_no, fields["rate"][1])
            try:
                windows.append(ObservationWindow(t_from, t_to, rate))
            except SequenceError as e:
                raise SequenceError(e.args[0], line_no, 1) from None
        else:
            raise SequenceError(f"unknown directive {head!r}", line_no, 1)
    try:
        tl = SequenceTimeline(pulses=tuple(pulses), windows=tuple(windows),
                              lets=lets, system_file=system_file)
    except SequenceError as e:
        raise SequenceError(e.args[0]) from None
    object.__setattr__(tl, "system", system)
    return tl


# -- pathway bookkeeping ---------------------------------------------------

def predict_pathway(tl: SequenceTimeline, ls: LevelSystem) -> PathwayPrediction:
    """Predict echo time, transition, and wavevector from the pulse train.

    The input must be the first pulse and sub-pi; each following pulse is
    treated as a full swap of its two levels applied at its center time.
    The phase accumulated by the common optical shift cancels at the echo;
    delays are measured center to center.
    """
    if len(tl.pulses) < 2:
        raise NoRephasingPathway("need an input pulse plus at least one rephasing pulse")
    pulses = tl.pulses
    inp = pulses[0]
    if inp.area >= math.pi:
        raise NoRephasingPathway("first pulse must be a sub-pi input")
    gi, xj = inp.transition
    if is_excited(gi) or not is_excited(xj):
        raise NoRephasingPathway("input pulse must drive a ground-excited pair")

    # Track the coherence element rho[row, col] created by the input
    # (row = excited ket, col = ground bra).  Its phase rate carries the
    # common optical shift with coefficient -(excited(row) - excited(col)).
    row, col = xj, gi
    k_coeff = np.array(inp.k_vector, dtype=float)

    def opt_coeff(r, c):
        return -(int(is_excited(r)) - int(is_excited(c)))

    phase = 0.0
    coeffs = [opt_coeff(row, col)]
    t_prev = inp.t0
    for p in pulses[1:]:
        phase += coeffs[-1] * (p.t0 - t_prev)
        t_prev = p.t0
        a, b = p.transition
        kp = np.array(p.k_vector, dtype=float)
        if row in (a, b):
            new_row = b if row == a else a
            if is_excited(new_row) and not is_excited(row):
                k_coeff = k_coeff + kp      # ket raised: absorb from the pulse mode
            elif is_excited(row) and not is_excited(new_row):
                k_coeff = k_coeff - kp      # ket lowered: stimulated emission
            row = new_row
        if col in (a, b):
            new_col = b if col == a else a
            if is_excited(new_col) and not is_excited(col):
                k_coeff = k_coeff - kp      # bra raised
            elif is_excited(col) and not is_excited(new_col):
                k_coeff = k_coeff + kp      # bra lowered
            col = new_col
        coeffs.append(opt_coeff(row, col))

    c_final = coeffs[-1]
    lo, hi = min(row, col), max(row, col)
    if c_final == 0 or is_excited(lo) or not is_excited(hi):
        raise NoRephasingPathway("final coherence is not on an optical transition")
    t_rephase = -phase / c_final
    if t_rephase <= 0:
        raise NoRephasingPathway("accumulated detuning phase never cancels")

    flips = 0
    nonzero = [c for c in coeffs if c != 0]
    for a, b in zip(nonzero, nonzero[1:]):
        if a * b < 0:
            flips += 1
    # The emitting element is rho[excited, ground]; if the tracked element
    # ended up as its conjugate the emitted wavevector flips sign.
    k_echo = k_coeff if is_excited(row) else -k_coeff
    return PathwayPrediction(
        echo_time=t_prev + t_rephase,
        echo_transition=(lo, hi),
        echo_k=tuple(k_echo),
        phase_conjugation_count=flips,
    )


# -- canonical program builders --------------------------------------------

def four_level_echo_program(tau_a, tau_b=0.0, input_area_pi=0.01,
                            input_fwhm=1e-6, pi1_fwhm=0.6e-6, pi2_fwhm=1e-6,
                            window_halfwidth=8e-6, sample_rate_hz=16e6,
                            input_window=True) -> str:
    """Text of the canonical four-level echo: input on 2-5, pi pulses on 3-5
    and 2-4, echo expected on 3-4 at 2*tau_a + tau_b."""
    lines = [
        f"let tau_a = {_fmt_dur(tau_a)}",
        f"let tau_b = {_fmt_dur(tau_b)}",
        f"pulse at=0s trans=w25 area={repr(input_area_pi)}pi env=gauss(fwhm={_fmt_dur(input_fwhm)})",
        f"pulse at=tau_a trans=w35 area=1pi env=gauss(fwhm={_fmt_dur(pi1_fwhm)})",
        f"pulse at=tau_a+tau_b trans=w24 area=1pi env=gauss(fwhm={_fmt_dur(pi2_fwhm)})",
    ]
    if input_window:
        lines.append(
            f"observe from=-{_fmt_dur(3 * input_fwhm + 1e-6)} "
            f"to={_fmt_dur(3 * input_fwhm + 2e-6)} rate={repr(sample_rate_hz)}Hz")
    lines.append(
        f"observe from=2*tau_a+tau_b-{_fmt_dur(window_halfwidth)} "
        f"to=2*tau_a+tau_b+{_fmt_dur(window_halfwidth)} rate={repr(sample_rate_hz)}Hz")
    return "\n".join(lines) + "\n"


def two_level_echo_program(tau, input_area_pi=0.01, input_fwhm=1e-6,
                           pi_fwhm=0.6e-6, window_halfwidth=8e-6,
                           sample_rate_hz=16e6, input_window=True) -> str:
    """Text of the standard two-pulse echo on 2-5, echo at 2*tau."""
    lines = [
        f"let tau = {_fmt_dur(tau)}",
        f"pulse at=0s trans=w25 area={repr(input_area_pi)}pi env=gauss(fwhm={_fmt_dur(input_fwhm)})",
        f"pulse at=tau trans=w25 area=1pi env=gauss(fwhm={_fmt_dur(pi_fwhm)})",
    ]
    if input_window:
        lines.append(
            f"observe from=-{_fmt_dur(3 * input_fwhm + 1e-6)} "
            f"to={_fmt_dur(3 * input_fwhm + 2e-6)} rate={repr(sample_rate_hz)}Hz")
    lines.append(
        f"observe from=2*tau-{_fmt_dur(window_halfwidth)} "
        f"to=2*tau+{_fmt_dur(window_halfwidth)} rate={repr(sample_rate_hz)}Hz")
    return "\n".join(lines) + "\n"
