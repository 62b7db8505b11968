"""
Configuration pytest du laboratoire.

Ajoute l'option --runslow : les essais marqués `slow` (apprentissage PPO
complet, balayage des six préréglages, comparaisons statistiques) sont
ignorés sans elle.
"""

import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="Lance aussi les essais longs (marqués slow)",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="essai long : utiliser --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
