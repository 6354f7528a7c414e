from __future__ import annotations

from dataclasses import dataclass, field

MUTATIONS = frozenset(
    {
        "double_vote",          # vote for every valid Prepare, ignoring once-per-view
        "winner_none",          # view-change leaders ignore the TC contents
        "winner_prefer_prop",   # view ties resolve to the f+1 proposal, not highQC
        "winner_ignore_qc",     # only the f+1 proposal rule is applied
    }
)


@dataclass
class ProtocolConfig:
    """Run-level protocol knobs.  Durations are in delay units (multiples of Δ)."""

    mode: str = "parallel"
    k: int = 4
    coverage: int | None = None        # None -> n - f
    fast_path: bool = True
    fast_wait: float = 0.2
    optimistic_tips: bool = False
    leader_tips: bool = True
    view_timer: float | None = None    # None -> 10Δ
    leader_offset: int | None = None   # None -> f
    standalone_poa: bool = False
    batch_cap: int = 1000
    buffer_cap: int = 1024
    view_buffer_cap: int = 64
    sync_timeout: float | None = None  # None -> 2Δ
    mutations: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.mode not in ("sequential", "parallel"):
            raise ValueError(f"mode must be sequential or parallel, got {self.mode!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        unknown = set(self.mutations) - MUTATIONS
        if unknown:
            raise ValueError(f"unknown mutations: {sorted(unknown)}")

    def has(self, mutation: str) -> bool:
        return mutation in self.mutations
