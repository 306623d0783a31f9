"""Automated novelty assessment of research submissions, with an evaluation harness."""

from .assessment import NoveltyReport
from .errors import NoveltyEngineError, StageError
from .evaluation import MetricsSummary, cohen_kappa
from .gateway import Gateway, ProviderSettings
from .pipeline import PipelineConfig, RunManifest, run_assess, run_evaluate, run_stats

__version__ = "0.1.0"

__all__ = [
    "Gateway",
    "MetricsSummary",
    "NoveltyEngineError",
    "NoveltyReport",
    "PipelineConfig",
    "ProviderSettings",
    "RunManifest",
    "StageError",
    "cohen_kappa",
    "run_assess",
    "run_evaluate",
    "run_stats",
]
