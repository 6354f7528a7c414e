"""Lane-based BFT replication with slot consensus, under a deterministic simulator."""

from .config import ProtocolConfig
from .core import QuorumConfig, quorum_sizes
from .harness import Scenario, build_scenario, run_scenario

__all__ = ["ProtocolConfig", "QuorumConfig", "Scenario", "build_scenario", "quorum_sizes", "run_scenario"]
