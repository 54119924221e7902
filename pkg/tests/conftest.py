import numpy as np
import pytest

from entrep.game import chsh_game, game_to_json
from entrep.strategy import chsh_optimal_strategy, strategy_to_json


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def chsh_files(tmp_path):
    g = chsh_game()
    game = tmp_path / "chsh.json"
    strat = tmp_path / "chsh_opt.json"
    game.write_text(game_to_json(g))
    strat.write_text(strategy_to_json(chsh_optimal_strategy(), g))
    return game, strat


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
