"""Multi-source RSS localization by parametric sparse Bayesian dictionary learning."""

from .bench import StudyConfig, TrialRecord, rmse, run_study, summarize
from .crlb import CrlbReport, ParameterVector, crlb_bounds, fim, mean_response, scene_crlb
from .dictionary import GridSpec, OffsetBounds, ParametricDictionary, assemble_dictionary, init_uniform_grid
from .exceptions import ContractViolation, InvalidInputError, SolverDivergence
from .propagation import Point2D, PropagationModel, dbm_to_linear, linear_to_db, path_gain
from .scene import MeasurementSet, Scene, SceneConfig, random_scene, simulate_measurements
from .solver import PsbdlConfig, PsbdlResult, run_psbdl

__version__ = "0.1.0"
