"""Desk-scale simulation and verification toolkit for Gaussian approximation
of nonconventional sums of mixing stationary processes.

The package covers the full construction chain: stationary process models
with enumerable window laws, exact dependence (mixing) coefficients, index
families and summand decomposition, limiting variances, block/martingale
approximation with error diagnostics, Skorokhod embedding into Brownian
motion, and a statistical verification harness (CLT, quadratic-variation LLN,
approximation-rate exponents, iterated-logarithm envelope) with a CLI.
"""

from nonconv.models import (
    ProcessModel,
    Trajectory,
    MomentTable,
    build_process,
    iid_model,
    markov_model,
    smeared_model,
    two_state_chain,
    rademacher_iid,
    doubling_map_model,
    gauss_map_model,
    symbolic_quotient,
    sample_path,
    sample_at_indices,
    pair_distribution,
    conditional_expectation,
    moment_table,
    export_trajectory,
    read_trajectory,
)

__version__ = "0.1.0"
