"""Numerical toolkit for parallel repetition of entangled two-player games."""

from .appendix import marginal_influence_stats
from .blocks import (
    classify_block,
    collision_probability,
    collision_probability_bruteforce,
    conditional_success,
    find_stable_block_size,
    predinc_increase,
    stinespring,
)
from .errors import (
    EntrepError,
    FormatError,
    GameClassError,
    InvalidInputError,
    ResourceLimitError,
    UnsupportedStrategyError,
    ValidationError,
)
from .game import Game, chsh_game, classical_value_bruteforce, classify_game, load_game
from .orthogonalize import (
    joint_block_orthogonalize,
    orthogonalization_lemma,
    procrustes_orthonormalize,
    serial_block_projectors,
)
from .repeated import build_product_strategy, build_scrambling_strategy
from .repetition import estimate_repeated_value, make_spec
from .strategy import QuantumStrategy, evaluate_value, load_strategy, seesaw_optimize

__version__ = "0.1.0"
