"""Semiclassical simulator of two- and four-level photon echoes in a
double-lambda rare-earth ensemble: pulse-sequence language, density-matrix
dynamics, inhomogeneous ensemble averaging, spectral holeburning
preparation, 1-D propagation, and heterodyne detection analysis."""

__version__ = "0.1.0"

from .levels import (AtomClass, DetuningModel, Distribution, LevelSystem,
                     build_default_system, class_detunings, transition_frequency)
from .sequence import (ObservationWindow, PathwayPrediction, Pulse,
                       SequenceTimeline, format_sequence,
                       four_level_echo_program, parse_sequence,
                       predict_pathway, two_level_echo_program)
from .dynamics import (RelaxationSpec, apply_pulse, free_evolve, ground_state,
                       run_class, run_classes, set_threads)
from .ensemble import (AreaSpread, EmissionRecord, EnsembleSpec, emit,
                       run_experiment, sample_classes)
from .propagation import Medium, echo_field, efficiency, transmit_weak_pulse
from .holeburning import (PopulationGrid, PumpField, apply_pump,
                          prepare_feature)
from .detection import (DecayFit, EchoMeasurement, HeterodyneTrace, LOConfig,
                        PhaseMatchResult, amplitude_spectrum, extract_echo,
                        fit_decay, heterodyne, phase_match)
