"""Polarization-OAM ququart simulator: MUB states, optical pipelines and tomography."""

__version__ = "0.1.0"

from .errors import (CalibrationError, ConfigurationError, DomainError, InputError,
                     InsufficientDataError, QuquartError, TruncationError)
from .hilbert import (DEFAULT_SPACE, DensityMatrix, ModeSpace, StateVector, mub_state,
                      mub_table)
from .optics import PipelineConfig, qplate_operator, run_pipeline
from .tomography import (MUB_20, SEPARABLE_36, CountsRecord, NoiseModel, f_exp, fidelity,
                         linear_entropy, mub_reconstruct, simulate_counts)
