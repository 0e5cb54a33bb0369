"""Verification harness: gradient checks, operator oracles and invariant suites."""

from cfkit.verify.gradcheck import gradcheck
from cfkit.verify.mutations import perturbed_conv_indexing
from cfkit.verify.oracle import default_cases, oracle_sweep
from cfkit.verify.suites import SUITES, run_invariant_suite

__all__ = [
    "gradcheck",
    "oracle_sweep",
    "default_cases",
    "run_invariant_suite",
    "SUITES",
    "perturbed_conv_indexing",
]
