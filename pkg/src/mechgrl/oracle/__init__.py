"""Exact oracles: rational valuation tables, their variants, IC/IR sweeps and GUM transfers."""
from .gum import GUM, GUMRun, gum_martingale_check, gum_run, inflate_report, random_report, truthful_report
from .tables import (
    KINDS,
    OracleTables,
    SelfRationalQ,
    alternative_tables,
    expected_cumulative_utility,
    make_tables,
    rational_tables,
    realisable_cu,
    self_rational_q,
    self_rational_tables,
    unrolled_cumulative_utility,
)
from .verify import VerificationReport, check_bayes_nash_ic, check_ir, sample_misreports

__all__ = [
    "GUM", "GUMRun", "gum_martingale_check", "gum_run", "inflate_report", "random_report", "truthful_report",
    "KINDS", "OracleTables", "SelfRationalQ", "alternative_tables", "expected_cumulative_utility",
    "make_tables", "rational_tables", "realisable_cu", "self_rational_q", "self_rational_tables",
    "unrolled_cumulative_utility", "VerificationReport", "check_bayes_nash_ic", "check_ir", "sample_misreports",
]
