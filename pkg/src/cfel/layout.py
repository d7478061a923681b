from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ClusterLayout:
    """Assignment of ``n`` devices to ``m`` edge servers.

    ``assignment[k]`` is the cluster of device ``k``.  Clusters are
    numbered ``0..m-1`` and none may be empty.
    """

    assignment: tuple[int, ...]
    m: int
    members: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        assignment = tuple(int(a) for a in self.assignment)
        object.__setattr__(self, "assignment", assignment)
        if self.m < 1:
            raise ConfigError("need at least one cluster")
        if any(a < 0 or a >= self.m for a in assignment):
            raise ConfigError("cluster id out of range")
        members = tuple(tuple(k for k, a in enumerate(assignment) if a == i) for i in range(self.m))
        if any(len(s) == 0 for s in members):
            raise ConfigError("every cluster needs at least one device")
        object.__setattr__(self, "members", members)

    @classmethod
    def even(cls, n: int, m: int) -> "ClusterLayout":
        """Contiguous blocks of devices; sizes differ by at most one."""
        if m > n:
            raise ConfigError(f"cannot place {n} devices into {m} nonempty clusters")
        sizes = [len(b) for b in np.array_split(np.arange(n), m)]
        return cls.from_sizes(sizes)

    @classmethod
    def from_sizes(cls, sizes) -> "ClusterLayout":
        assignment = [i for i, s in enumerate(sizes) for _ in range(int(s))]
        return cls(tuple(assignment), len(sizes))

    @classmethod
    def random(cls, n: int, m: int, seed: int) -> "ClusterLayout":
        base = cls.even(n, m).assignment
        perm = np.random.default_rng(seed).permutation(n)
        return cls(tuple(base[p] for p in perm), m)

    @property
    def n(self) -> int:
        return len(self.assignment)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.members)

    @property
    def equal_sizes(self) -> bool:
        return len(set(self.sizes)) == 1

    def merge(self, clusters) -> "ClusterLayout":
        """Fuse the given clusters into one; remaining ids are renumbered in order."""
        clusters = set(clusters)
        keep = [i for i in range(self.m) if i not in clusters]
        target = min(clusters)
        order = sorted(set(keep) | {target})
        relabel = {old: new for new, old in enumerate(order)}
        assignment = [relabel[target if a in clusters else a] for a in self.assignment]
        return ClusterLayout(tuple(assignment), len(order))
