from __future__ import annotations

from collections.abc import Hashable, Iterable


class DisjointSet:
    """Union-find over arbitrary hashable items, path compression + union by size.

    Items are registered lazily; ``find`` on an unseen item makes it a singleton.
    The representative of a merged set is the smaller item when items are
    comparable and sizes tie, which keeps component labels deterministic.
    """

    def __init__(self, items: Iterable[Hashable] = ()):
        self._parent: dict = {}
        self._size: dict = {}
        for item in items:
            self.add(item)

    def add(self, item) -> None:
        if item not in self._parent:
            self._parent[item] = item
            self._size[item] = 1

    def __contains__(self, item) -> bool:
        return item in self._parent

    def find(self, item):
        self.add(item)
        root = item
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[item] != root:
            self._parent[item], item = root, self._parent[item]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self._size[ra] < self._size[rb] or (self._size[ra] == self._size[rb] and rb < ra):
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]
        return True

    def connected(self, a, b) -> bool:
        return self.find(a) == self.find(b)

    def groups(self) -> list[tuple]:
        """Components as sorted tuples, ordered by their smallest member."""
        buckets: dict = {}
        for item in self._parent:
            buckets.setdefault(self.find(item), []).append(item)
        return sorted((tuple(sorted(g)) for g in buckets.values()), key=lambda g: g[0])

    def __len__(self) -> int:
        return sum(1 for item in self._parent if self._parent[item] == item)
