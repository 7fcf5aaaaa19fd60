"""Cooperative physical-layer authentication for underwater acoustic sensor networks.

Sensors compress channel features (number of taps, average tap power,
relative RMS delay, smoothed received power) into a few values with small
neural encoders; a sink fuses them into a score and thresholds it to tell
the legitimate transmitter from an impersonator.
"""
from .config import ExperimentConfig, load_config, read_config
from .datagen import CopulaSpec, SplitSpec, fit_kde, generate_dataset, reference_marginals, split_dataset
from .estimators import CooperativeAuthenticator, SensorEncoder
from .evaluation import compute_rates, evaluate, optimize_threshold
from .exceptions import (
    ConfigurationError,
    DegenerateDataError,
    DomainError,
    EmptyInputError,
    InputShapeError,
    MissingClassError,
    ParseError,
    TrainingDivergedError,
    UwAuthError,
)
from .nn import LayerSpec, MlpNetwork, TrainConfig, train
from .pdp import PowerDelayProfile, extract_features
from .runner import run_experiment
from .schemes import AE, CLDAE, GLOBAL, LD, AuthenticatorBundle, parse_global_config

__version__ = "0.1.0"
