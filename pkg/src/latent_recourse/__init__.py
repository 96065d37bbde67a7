"""Latent-space algorithmic recourse for classifiers and causal decision models."""

__version__ = "0.1.0"

from .errors import ContractError, DataError, NumericError, RecourseError, ShapeError, UnsupportedVersionError  # noqa: E402,F401
from .schema import Attribute, AttributeSchema, load_schema, save_schema  # noqa: E402,F401
from .data import Dataset, Encoder, ingest_csv, write_csv  # noqa: E402,F401
from .nn import DenseNetwork, train_classifier  # noqa: E402,F401
from .genmodel import HeterogeneousVAE, train_vae  # noqa: E402,F401
from .causal import CausalDecisionModel, estimate_ate, infer_z, predict_outcome_do, train_causal  # noqa: E402,F401
from .revise import (ReviseConfig, RecourseResult, cost, lambda_sweep, lambda_sweep_batch,  # noqa: E402,F401
                     objective, revise, revise_batch, revise_causal, revise_causal_batch)
from .audit import AuditReport, confounding_audit, recourse_metrics, render_recourse_table  # noqa: E402,F401
from .persistence import load_model, save_model  # noqa: E402,F401
