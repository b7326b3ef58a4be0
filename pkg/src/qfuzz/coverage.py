"""Edge-coverage bookkeeping and the coverage-delta reward."""

from dataclasses import dataclass, field


class CoverageContractError(AssertionError):
    """Coverage went backwards inside an episode (a reset bookkeeping bug)."""


@dataclass(frozen=True)
class ExecutionFeedback:
    """What one target execution reports back.

    ``torc_events`` are ``(input_operand, other_operand)`` byte pairs from
    comparisons the target performed.
    """

    edges_hit: frozenset
    torc_events: tuple = ()
    verdict: str = "ok"

    @property
    def crashed(self):
        return self.verdict == "crash"


@dataclass
class CoverageMap:
    edges: set = field(default_factory=set)

    @property
    def count(self):
        return len(self.edges)

    def absorb(self, fb):
        """Union ``fb.edges_hit`` into the map in place; return the number of new edges."""
        edges = self.edges
        before = len(edges)
        edges |= fb.edges_hit
        return len(edges) - before

    def reset(self):
        self.edges.clear()

    def copy(self):
        return CoverageMap(set(self.edges))


def absorb(cov_map, fb):
    """Functional form: return ``(new_map, new_edges)`` leaving ``cov_map`` untouched."""
    new = cov_map.copy()
    return new, new.absorb(fb)


def reward(cov_prev, cov_now):
    """Coverage gained since the previous observation."""
    if cov_now < cov_prev:
        raise CoverageContractError(f"coverage decreased from {cov_prev} to {cov_now}")
    return cov_now - cov_prev
