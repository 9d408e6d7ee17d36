"""Differentially private synthetic tabular data.

Train diffusion or WGAN generators under an (epsilon, delta) budget enforced
by an RDP accountant, sample mixed-type tables back out, and score the
results with a fidelity metric suite.  See the README for the tour; the CLI
entry point is ``tabsynth``.
"""

from .accountant import RdpLedger, accumulate_step, fresh_ledger, to_epsilon_delta
from .diffusion import DENOISER, NOISE_PREDICTOR, DiffusionConfig
from .encoding import EncodedMatrix, column_spans, decode, encode
from .errors import (BundleError, ConfigError, DegenerateDataError, ParseError,
                     PrivacyError, SchemaError, TabsynthError)
from .gan import DPWGAN, GanConfig
from .metrics import (FidelityReport, chi2_distance, evaluate, ks_distance,
                      marginal_distance, pca_projection_histogram,
                      pmse_ratio, precision_recall_curves)
from .models import (MODEL_KINDS, load_bundle, make_config, sample_encoded,
                     sample_table, save_bundle, train_model)
from .privacy import PrivacyParams, gaussian_sigma
from .schema import (ColumnKind, ColumnSchema, RawTable, TableSchema,
                     infer_schema, load_schema, load_table, parse_table,
                     save_schema, write_table)

__version__ = "0.1.0"

__all__ = [
    "BundleError", "ColumnKind", "ColumnSchema", "ConfigError", "DENOISER",
    "DPWGAN", "DegenerateDataError", "DiffusionConfig", "EncodedMatrix",
    "FidelityReport", "GanConfig", "MODEL_KINDS", "NOISE_PREDICTOR",
    "ParseError", "PrivacyError", "PrivacyParams", "RawTable", "RdpLedger",
    "SchemaError", "TableSchema", "TabsynthError", "accumulate_step",
    "chi2_distance", "column_spans", "decode", "encode", "evaluate",
    "fresh_ledger", "gaussian_sigma", "infer_schema", "ks_distance",
    "load_bundle", "load_schema", "load_table", "make_config",
    "marginal_distance", "parse_table", "pca_projection_histogram",
    "pmse_ratio", "precision_recall_curves", "sample_encoded", "sample_table",
    "save_bundle", "save_schema", "to_epsilon_delta", "train_model",
    "write_table",
]
