"""LoRa out-of-band control plane and collection-tree routing simulator."""

from .core import Scenario, ScenarioError, __version__, load_scenario, validate_scenario
from .engine import inject_node_failure, run

__all__ = ["Scenario", "ScenarioError", "__version__", "load_scenario", "validate_scenario", "run", "inject_node_failure"]
