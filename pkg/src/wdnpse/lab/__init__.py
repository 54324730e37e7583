"""Monte-Carlo oracle, samplers, statistics and source-impact sweeps."""

from .mcs import SampleBatch, empirical_covariance, run_mcs, sample_linearized
from .pdfs import histogram_sup_error, pipe_headloss_pdf, pump_headgain_pdf
from .sampling import SourceGroup, sample_group, sample_sources
from .stats import KSResult, MetricReport, compare, ks_normality_test
from .sweep import DEFAULT_GRID, ImpactTable, source_impact_sweep

__all__ = [
    "SampleBatch", "empirical_covariance", "run_mcs", "sample_linearized",
    "histogram_sup_error", "pipe_headloss_pdf", "pump_headgain_pdf",
    "SourceGroup", "sample_group", "sample_sources",
    "KSResult", "MetricReport", "compare", "ks_normality_test",
    "DEFAULT_GRID", "ImpactTable", "source_impact_sweep",
]
