"""Calibration engine for coupled box-ecosystem simulation models.

The pieces, in pipeline order: a message-mediated simulation kernel
(`kernel`), influence-graph discovery (`knowledge`), steady-state
sensitivity analysis (`sensitivity`), fit metrics (`fitness`), the
sensitivity-guided calibration agent with its random-search baseline
(`calibrate`), model-database and observation file handling (`modeldb`),
report rendering (`report`), a TCP remote-control protocol (`remote`),
and the command line (`cli`).
"""

__version__ = "1.0.0"

from .calibrate import (
    AgentConfig,
    CalibrationResult,
    Driver,
    KnowledgeBundle,
    SweepRecord,
    build_bundle,
    calibrate,
    random_search,
    select_driver,
    sweep,
)
from .errors import EcocalError
from .fitness import FitReport, ObservationRecord, ObservationSet, evaluate, worst_fit
from .fixtures import build_logistic_pair, build_npz_model
from .kernel import (
    BehaviorContext,
    ClampDirective,
    ClassSpec,
    Message,
    Model,
    ParameterSpec,
    SimClock,
    Trajectory,
    VariableSpec,
)
from .knowledge import RelationshipMatrix, discover, influencers_of, load_matrix, save_matrix
from .modeldb import (
    ModelDatabase,
    generate_synthetic_observations,
    load_model_db,
    load_observations,
    save_model_db,
    save_observations,
)
from .sensitivity import (
    InterSensitivityMatrix,
    IntraSensitivityMatrix,
    PerturbationPlan,
    intra_sensitivity,
    inter_sensitivity,
    load_sensitivities,
    save_sensitivities,
    steady_state_value,
)

__all__ = [
    "__version__",
    "AgentConfig",
    "BehaviorContext",
    "CalibrationResult",
    "ClampDirective",
    "ClassSpec",
    "Driver",
    "EcocalError",
    "FitReport",
    "InterSensitivityMatrix",
    "IntraSensitivityMatrix",
    "KnowledgeBundle",
    "Message",
    "Model",
    "ModelDatabase",
    "ObservationRecord",
    "ObservationSet",
    "ParameterSpec",
    "PerturbationPlan",
    "RelationshipMatrix",
    "SimClock",
    "SweepRecord",
    "Trajectory",
    "VariableSpec",
    "build_bundle",
    "build_logistic_pair",
    "build_npz_model",
    "calibrate",
    "discover",
    "evaluate",
    "generate_synthetic_observations",
    "influencers_of",
    "inter_sensitivity",
    "intra_sensitivity",
    "load_matrix",
    "load_model_db",
    "load_observations",
    "load_sensitivities",
    "random_search",
    "save_matrix",
    "save_model_db",
    "save_observations",
    "save_sensitivities",
    "select_driver",
    "steady_state_value",
    "sweep",
    "worst_fit",
]
