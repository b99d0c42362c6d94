from .config import ConfigError, ExperimentConfig, load_config
from .dataset import ManifestError, export_dataset, import_dataset, read_manifest
from .experiments import (
    AdversarialExample,
    Cell,
    PrecisionCurve,
    TransferMatrix,
    derive_seed,
    evaluate_transfer,
    precision_sweep_config,
    prefix_attack_config,
    run_attack_batch,
    run_precision_sweep,
    run_prefix_experiment,
    trace_transfer_losses,
)
from .report import UnknownFormatError, render_report

__all__ = [
    "AdversarialExample",
    "Cell",
    "ConfigError",
    "ExperimentConfig",
    "ManifestError",
    "PrecisionCurve",
    "TransferMatrix",
    "UnknownFormatError",
    "derive_seed",
    "evaluate_transfer",
    "export_dataset",
    "import_dataset",
    "load_config",
    "precision_sweep_config",
    "prefix_attack_config",
    "read_manifest",
    "render_report",
    "run_attack_batch",
    "run_precision_sweep",
    "run_prefix_experiment",
    "trace_transfer_losses",
]
