"""Mechanical event-study bias from first-detection treatment timing.

Simulation, stacked PPML estimation, closed-form null paths and a unigram
mixture detector.
"""

__version__ = "0.1.0"

from .data import AuthorPanel, PaperEvent, PaperTable  # noqa: E402
from .exceptions import ConfigurationError, ConvergenceError, InputError, NoCohortsError  # noqa: E402
from .flag_rules import (NEVER, HazardParams, TreatmentAssignment, bernoulli_flags,  # noqa: E402
                         detection_hazard, first_detection_timing, keyword_flags, random_timing)
from .panel_dgp import (ConstantMeans, DgpConfig, EmpiricalMeans, GammaMeans,  # noqa: E402
                        draw_author_means, expand_to_papers, simulate_panel)
from .event_stack import StackConfig, StackedDataset, assign_pseudo_dates, build_stacks, fit_stacked, regressor_layout  # noqa: E402
from .ppml_hdfe import EventStudyFit, FeSpec, cluster_vcov, fit_ppml, wald_test  # noqa: E402
from .null_theory import (NullPath, OutputPmf, conditional_mean_oracle, gamma_null_general,  # noqa: E402
                          gamma_null_poisson, poisson_pmf)
from .text_mixture import (WordLLRTable, classify, estimate_alpha, fit_word_llr, sentence_llrs,  # noqa: E402
                           synth_paired_corpus)
from .experiment_runner import (ExperimentConfig, McSummary, aggregate, run_monte_carlo,  # noqa: E402
                                run_placebo_suite, run_replication, run_scenario_pair)
