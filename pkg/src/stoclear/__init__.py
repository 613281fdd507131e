"""Stochastic two-settlement electricity market clearing, pricing and verification."""
from .formats import dump_instance, load_embedded, loads_instance, parse_instance, resolve_instance
from .formulations import (CANONICAL, CLAIRVOYANT, MEAN_VECTOR, STATE_VECTOR, DispatchSolution,
                           build_canonical, build_clairvoyant, build_mean_vector,
                           build_state_vector, extract_dispatch)
from .generate import random_instance
from .lp import LpModel, LpSolution, check_kkt, solve_lp
from .metrics import evaluate, guarantee_checks, relationship_checks
from .model import (Bus, Instance, Line, Participant, Scenario, ScenarioSet, perturb_bids,
                    product_scenarios, realized_value, social_surplus, validate_instance)
from .ph import PhParams, PhResult, solve_progressive_hedging
from .pricing import (Clearing, DualSolution, clear_and_price, derive_sigma_from_mu,
                      extract_duals, payments_canonical, payments_mean_vector,
                      payments_state_vector, price_distortion, select_duals)
from .runner import ExperimentConfig, run_experiment, verify

__version__ = "0.1.0"
