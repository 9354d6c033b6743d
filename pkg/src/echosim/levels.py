"""Level structure and inhomogeneity model for the six-level Pr ensemble.

Levels are labelled 1..6: ground hyperfine manifold {1, 2, 3} and excited
manifold {4, 5, 6}.  All energies are stored as manifold-local offsets in Hz
(ground levels relative to level 1, excited levels relative to level 4); the
optical carrier between the manifolds is dropped because every computation
runs in rotating frames where only offsets matter.

Per-ion inhomogeneity is described by three numbers:

* ``delta_opt`` - common optical shift of all ground-excited transitions,
* ``delta_g``   - shift of the ground splitting between levels 2 and 3,
* ``delta_e``   - shift of the excited splitting between levels 4 and 5.

These map onto per-level frequency shifts ``(0, 0, dg, D - de, D, D)``, from
which every transition detuning follows as a difference.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GROUND = (1, 2, 3)
EXCITED = (4, 5, 6)

# Double-lambda subset used by the echo sequences: input 2-5, rephasing
# pulses 3-5 and 2-4, echo 3-4.
DOUBLE_LAMBDA = ((2, 5), (3, 5), (2, 4), (3, 4))


class LevelModelError(ValueError):
    """Raised when a level-system description violates its invariants."""


def is_excited(level: int) -> bool:
    return level >= 4


def _as_readonly(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LevelSystem:
    """Static description of the six-level system and its material constants.

    ``dipole[i-1, j-4]`` is the relative transition amplitude of the
    ground(i)-excited(j) pair, normalized so the strongest is 1.
    ``branching[i-1, j-4]`` is the probability that a decay out of excited
    level j lands in ground level i; each column sums to 1.
    """

    ground_offsets_hz: np.ndarray
    excited_offsets_hz: np.ndarray
    t1_opt_s: float
    t2_opt_s: float
    t1_spin_s: float
    t2_spin_s: float
    dipole: np.ndarray
    branching: np.ndarray
    n_levels: int = 6

    def __post_init__(self):
        object.__setattr__(self, "ground_offsets_hz", _as_readonly(self.ground_offsets_hz))
        object.__setattr__(self, "excited_offsets_hz", _as_readonly(self.excited_offsets_hz))
        object.__setattr__(self, "dipole", _as_readonly(self.dipole))
        object.__setattr__(self, "branching", _as_readonly(self.branching))
        if self.n_levels != 6:
            raise LevelModelError("only the six-level model is supported")
        if self.ground_offsets_hz.shape != (3,) or self.excited_offsets_hz.shape != (3,):
            raise LevelModelError("need three ground and three excited offsets")
        if self.ground_offsets_hz[0] != 0.0 or self.excited_offsets_hz[0] != 0.0:
            raise LevelModelError("offsets are manifold-local: levels 1 and 4 sit at 0")
        if self.dipole.shape != (3, 3) or self.branching.shape != (3, 3):
            raise LevelModelError("dipole and branching tables must be 3x3")
        if np.any(self.dipole < 0) or not np.isclose(self.dipole.max(), 1.0):
            raise LevelModelError("dipole amplitudes must be >= 0 with max normalized to 1")
        if np.any(self.branching < 0) or not np.allclose(self.branching.sum(axis=0), 1.0, atol=1e-12):
            raise LevelModelError("branching columns must be probabilities summing to 1")
        for name in ("t1_opt_s", "t2_opt_s", "t1_spin_s", "t2_spin_s"):
            if getattr(self, name) <= 0:
                raise LevelModelError(f"{name} must be positive")
        # Lindblad positivity: total optical dephasing cannot beat lifetime
        # broadening, 1/T2 >= 1/(2 T1).
        if 1.0 / self.t2_opt_s < 1.0 / (2.0 * self.t1_opt_s) - 1e-12:
            raise LevelModelError("t2_opt_s violates 1/T2 >= 1/(2 T1)")

    def __eq__(self, other):
        if not isinstance(other, LevelSystem):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    # -- frequency bookkeeping -------------------------------------------

    def level_offset_hz(self, level: int) -> float:
        """Manifold-local frequency offset of a level (carrier dropped)."""
        self._check_level(level)
        if is_excited(level):
            return float(self.excited_offsets_hz[level - 4])
        return float(self.ground_offsets_hz[level - 1])

    def splitting_hz(self, i: int, j: int) -> float:
        """Positive splitting between two same-manifold levels."""
        return abs(self.level_offset_hz(j) - self.level_offset_hz(i))

    @property
    def input_echo_offset_hz(self) -> float:
        """Frequency gap between the input (2-5) and echo (3-4) transitions."""
        return self.splitting_hz(2, 3) + self.splitting_hz(4, 5)

    def dipole_amplitude(self, i: int, j: int) -> float:
        """Relative dipole amplitude of an optical pair, 0 for same-manifold pairs."""
        i, j = min(i, j), max(i, j)
        if not (i in GROUND and j in EXCITED):
            return 0.0
        return float(self.dipole[i - 1, j - 4])

    def _check_level(self, level: int) -> None:
        if not 1 <= level <= self.n_levels:
            raise LevelModelError(f"level {level} out of range 1..{self.n_levels}")

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n_levels": self.n_levels,
            "ground_offsets_hz": self.ground_offsets_hz.tolist(),
            "excited_offsets_hz": self.excited_offsets_hz.tolist(),
            "t1_opt_s": self.t1_opt_s,
            "t2_opt_s": self.t2_opt_s,
            "t1_spin_s": self.t1_spin_s,
            "t2_spin_s": self.t2_spin_s,
            "dipole": self.dipole.tolist(),
            "branching": self.branching.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LevelSystem":
        return cls(
            ground_offsets_hz=d["ground_offsets_hz"],
            excited_offsets_hz=d["excited_offsets_hz"],
            t1_opt_s=d["t1_opt_s"],
            t2_opt_s=d["t2_opt_s"],
            t1_spin_s=d["t1_spin_s"],
            t2_spin_s=d["t2_spin_s"],
            dipole=d["dipole"],
            branching=d["branching"],
            n_levels=d.get("n_levels", 6),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "LevelSystem":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Distribution:
    """1-D detuning distribution: shape in {gaussian, lorentzian, uniform, tabulated}.

    ``width_hz`` is the Gaussian sigma, the Lorentzian HWHM, or the uniform
    half-width.  Width 0 collapses to the point 0.  ``tabulated`` carries its
    own nodes/weights (used for feature profiles read off a population grid).
    """

    shape: str = "gaussian"
    width_hz: float = 0.0
    nodes_hz: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if self.shape not in ("gaussian", "lorentzian", "uniform", "tabulated"):
            raise LevelModelError(f"unknown distribution shape {self.shape!r}")
        if self.width_hz < 0:
            raise LevelModelError("distribution width must be >= 0")
        if self.shape == "tabulated":
            if len(self.nodes_hz) == 0 or len(self.nodes_hz) != len(self.weights):
                raise LevelModelError("tabulated distribution needs matching nodes and weights")

    @property
    def is_point(self) -> bool:
        return self.shape != "tabulated" and self.width_hz == 0.0


@dataclass(frozen=True)
class DetuningModel:
    """Joint inhomogeneity model.

    The optical shift is common to all four optical transitions of one ion;
    the hyperfine splitting shifts are independent of it and of each other.
    """

    optical: Distribution = field(default_factory=Distribution)
    ground: Distribution = field(default_factory=Distribution)
    excited: Distribution = field(default_factory=Distribution)


@dataclass(frozen=True)
class AtomClass:
    """One frequency class: shared detunings plus its quadrature weight."""

    delta_opt: float
    delta_g: float
    delta_e: float
    weight: float


def build_default_system(
    ground_splittings_hz=(17.3e6, 10.2e6),
    excited_splittings_hz=(4.6e6, 4.8e6),
    t1_opt_s=160e-6,
    t2_opt_s=150e-6,
    t1_spin_s=100.0,
    t2_spin_s=1.0,
    dipole=None,
    branching=None,
    input_echo_offset_hz=14.8e6,
) -> LevelSystem:
    """Default Pr-like system.

    Ground splittings are (1-2, 2-3), excited are (4-5, 5-6).  The defaults
    put the echo transition 14.8 MHz below the input transition, which is
    validated here (custom systems may choose otherwise).

    The default dipole table gives unit amplitude to the double-lambda subset
    {2,3}x{4,5} and to the 1-5 repump transition; the 1-4 pair is taken as
    negligibly weak so the frequency-subgroup isolation has a dark state for
    every ion class, and the remaining spectator pairs are weak.
    """
    g12, g23 = ground_splittings_hz
    e45, e56 = excited_splittings_hz
    if dipole is None:
        dipole = [
            [0.0, 1.0, 0.3],
            [1.0, 1.0, 0.1],
            [1.0, 1.0, 0.1],
        ]
    if branching is None:
        branching = np.full((3, 3), 1.0 / 3.0)
    ls = LevelSystem(
        ground_offsets_hz=[0.0, g12, g12 + g23],
        excited_offsets_hz=[0.0, e45, e45 + e56],
        t1_opt_s=t1_opt_s,
        t2_opt_s=t2_opt_s,
        t1_spin_s=t1_spin_s,
        t2_spin_s=t2_spin_s,
        dipole=dipole,
        branching=branching,
    )
    if abs(ls.input_echo_offset_hz - input_echo_offset_hz) > 1.0:
        raise LevelModelError(
            f"ground 2-3 plus excited 4-5 splitting is {ls.input_echo_offset_hz:.0f} Hz, "
            f"expected {input_echo_offset_hz:.0f} Hz"
        )
    return ls


def transition_frequency(ls: LevelSystem, i: int, j: int) -> float:
    """Signed rotating-frame offset of the i->j transition in Hz.

    Antisymmetric in (i, j); optical pairs report the difference of
    manifold-local offsets (the carrier is dropped).
    """
    ls._check_level(i)
    ls._check_level(j)
    return ls.level_offset_hz(j) - ls.level_offset_hz(i)


def class_level_shifts(ls: LevelSystem, c: AtomClass) -> np.ndarray:
    """Per-level frequency shifts (Hz) of one atom class, levels 1..6.

    Level 3 carries the ground-splitting shift, level 4 carries minus the
    excited-splitting shift, and all excited levels carry the optical shift.
    """
    return np.array([
        0.0,
        0.0,
        c.delta_g,
        c.delta_opt - c.delta_e,
        c.delta_opt,
        c.delta_opt,
    ])


def class_detunings(ls: LevelSystem, c: AtomClass) -> dict:
    """Detuning of every level pair (i < j) for one class, in Hz.

    The detuning of pair (i, j) is the class's actual transition frequency
    minus the nominal one, i.e. shift(j) - shift(i).  The double-lambda
    entries come out as D, D-dg, D-de, D-dg-de and the spin pair (2,3) as dg,
    so the loop closure d25 - d35 - d24 + d34 = 0 holds identically.
    """
    shifts = class_level_shifts(ls, c)
    table = {}
    for i in range(1, ls.n_levels + 1):
        for j in range(i + 1, ls.n_levels + 1):
            table[(i, j)] = float(shifts[j - 1] - shifts[i - 1])
    return table
