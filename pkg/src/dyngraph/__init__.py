"""Dynamical inhomogeneous random graphs and their local tree limits.

Simulators for finite marked graphs whose edges refresh over time, the
growth-and-segmentation branching trees that arise as their local weak
limits, exact neighborhood extraction, joint couplings with quantitative
failure bounds, history metrics, and a contact process running on top of
either object.
"""

from ._version import __version__
from .contact import (InfectionTrace, estimate_In, estimate_theta,
                      run_contact, section_presets)
from .coupling import (CoupleReport, CoupleResult, FailureBound,
                       MarkovCouplingResult, binomial_poisson_tv,
                       couple_ball_with_tree, couple_markov, dynperc_bound,
                       exploration_law_prob, failure_bound,
                       maximal_binpoi_coupling)
from .dirg import (DynGraphTrace, SimulationSizeError, earliest_open,
                   pairwise_coupling_bound, sample_initial_graph,
                   simulate_edge_updating, simulate_vertex_updating)
from .dynball import (BallExtraction, extract_ball, extract_component,
                      spacetime_distance, spacetime_distances)
from .experiments import (ConfigError, ExperimentResult, run,
                          two_root_independence, write_result)
from .gsmpgw import (LimitProcessParams, monotone_coupled_sample,
                     sample_mpgw, simulate_gsmpgw, simulate_vgsmpgw)
from .kernels import (FactorKernel, FinitaryApproximation, GraphicalDiagnostics,
                      Kernel, KernelDomainError, MarkSpace, MatrixKernel,
                      PrefAttachKernel, StrongKernel, UnaryKernel,
                      UpdateEtaKernel, VertexRateKernel, WeakKernel,
                      connection_prob, constant_kernel,
                      finitary_approximation, graphical_check)
from .metrics import (CanonicalCode, TVEstimate, canonical_code, isomorphic,
                      local_distance, tv_estimate)
from .segtree import (OPEN, SEGMENTED, OrderedSegmentedTree,
                      SegTreeTrajectory, TreeStructureError, grow,
                      merge_at_root, segment, subtree_at, truncate,
                      well_order, without_subtree)
from .vertexspace import VertexSpaceRealization, discrepancy, realize

__all__ = [
    "__version__",
    # kernels and spaces
    "Kernel", "KernelDomainError", "MarkSpace", "MatrixKernel",
    "FactorKernel", "PrefAttachKernel", "StrongKernel", "WeakKernel",
    "UpdateEtaKernel", "UnaryKernel", "VertexRateKernel", "constant_kernel",
    "connection_prob", "FinitaryApproximation", "finitary_approximation",
    "GraphicalDiagnostics", "graphical_check",
    "VertexSpaceRealization", "realize", "discrepancy",
    # segmented trees
    "OPEN", "SEGMENTED", "OrderedSegmentedTree", "SegTreeTrajectory",
    "TreeStructureError", "grow", "segment", "merge_at_root", "truncate",
    "subtree_at", "without_subtree", "well_order",
    # limit processes
    "LimitProcessParams", "sample_mpgw", "simulate_gsmpgw",
    "simulate_vgsmpgw", "monotone_coupled_sample",
    # finite graphs and neighborhoods
    "DynGraphTrace", "SimulationSizeError", "earliest_open",
    "sample_initial_graph", "simulate_edge_updating",
    "simulate_vertex_updating", "pairwise_coupling_bound",
    "BallExtraction", "extract_ball", "extract_component",
    "spacetime_distance", "spacetime_distances",
    # couplings and bounds
    "MarkovCouplingResult", "couple_markov", "binomial_poisson_tv",
    "maximal_binpoi_coupling", "exploration_law_prob", "FailureBound",
    "failure_bound", "dynperc_bound", "CoupleReport", "CoupleResult",
    "couple_ball_with_tree",
    # metrics
    "CanonicalCode", "canonical_code", "isomorphic", "local_distance",
    "TVEstimate", "tv_estimate",
    # contact process
    "InfectionTrace", "run_contact", "estimate_In", "estimate_theta",
    "section_presets",
    # experiments
    "ConfigError", "ExperimentResult", "run", "two_root_independence",
    "write_result",
]
