"""Structured quantum state tomography: simulation, reconstruction and checks."""

from .qcore import DensityError, fidelity, frobenius_distance, trace_distance, validate_density
from .structures import MpoState, StructureModel, mpo_to_density, project_mpo, project_structure
from .povm import Povm, PovmEnsemble, PovmError, SignedPovm
from .sampler import MeasurementRecord, measure_ensemble, population_frequencies
from .estimators import EstimateResult, EstimatorConfig, StepSizeError, reconstruct

__version__ = "0.1.0"
