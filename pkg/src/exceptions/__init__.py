"""Custom exceptions module."""

from .BaseProjectException import BaseProjectException

from .ModelException import (
    ModelParseException,
    ModelValidationException,
    DanglingLayerReferenceException,
    ModelRangeException,
    ModelSaveException
)

from .PredictorException import (
    FeatureArityException,
    MissingRegressionException,
    UnderdeterminedFitException,
    PredictorFileException
)

from .ProfilerException import (
    KernelShapeException,
    EmptyTensorException,
    TimerResolutionException,
    MeasurementFileException,
    ProfileFitException
)

from .PlannerException import (
    PlanIndexException,
    PlanRequestException
)

from .SimulatorException import (
    PlanMismatchException,
    SweepSpecException,
    ReportWriteException
)

from .SettingsException import ConfigException

from .ProtocolException import (
    FrameTooLargeException,
    MalformedFrameException,
    RemoteErrorException,
    ConnectionLostException,
    InfeasiblePlanException
)

__all__ = [
    "BaseProjectException",
    "ModelParseException",
    "ModelValidationException",
    "DanglingLayerReferenceException",
    "ModelRangeException",
    "ModelSaveException",
    "FeatureArityException",
    "MissingRegressionException",
    "UnderdeterminedFitException",
    "PredictorFileException",
    "KernelShapeException",
    "EmptyTensorException",
    "TimerResolutionException",
    "MeasurementFileException",
    "ProfileFitException",
    "PlanIndexException",
    "PlanRequestException",
    "PlanMismatchException",
    "SweepSpecException",
    "ReportWriteException",
    "FrameTooLargeException",
    "MalformedFrameException",
    "RemoteErrorException",
    "ConnectionLostException",
    "InfeasiblePlanException",
    "ConfigException"
]
