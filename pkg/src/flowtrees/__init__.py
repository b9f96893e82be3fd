"""Numerical gradient flow trees over multi-sheeted fronts.

Modules:
    scenario  charts, sheets, fold loci, difference fields
    morse     critical points and model Morse neighborhoods
    flow      maximal descending flows, classification, lifts
    broken    broken flows, basis neighborhoods, limit extraction
    tree      broken flow trees, reductions, limits, convergence audits
    cli       command-line entry point with CSV/SVG/certificate artifacts
"""

from importlib import resources

from .scenario import (
    Chart,
    DifferenceField,
    DomainError,
    FoldComponent,
    FoldLocus,
    Scenario,
    ScenarioError,
    Sheet,
    dump_scenario,
    load_scenario,
    loads_scenario,
)

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path of a shipped fixture scenario or document."""
    if not name.endswith(".json"):
        name = name + ".json"
    return resources.files(__name__) / "fixtures" / name


def load_fixture(name: str) -> Scenario:
    p = fixture_path(name)
    return loads_scenario(p.read_text(encoding="utf-8"), name=name.removesuffix(".json"))
