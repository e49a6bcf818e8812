"""
Graph algorithms for reference ordering

Strongly connected components and a stable topological order over the
component graph. Edges map a vertex to the vertices it depends on, so a
dependency is always placed before its dependents.
"""

import heapq
from typing import Collection, Dict, Hashable, List, Mapping, Sequence, Set, TypeVar

T = TypeVar('T', bound=Hashable)


def strongly_connected_components(vertices: Sequence[T],
                                  edges: Mapping[T, Collection[T]]) -> List[List[T]]:
    """Compute Strongly Connected Components of a directed graph.

    Path-based algorithm run with an explicit work stack so deep call chains
    do not hit the recursion limit. Every vertex occurs in exactly one
    component; components are returned dependencies first, members in
    vertex order.
    """
    order = {v: i for i, v in enumerate(vertices)}
    identified: Set[T] = set()
    stack: List[T] = []
    index: Dict[T, int] = {}
    boundaries: List[int] = []
    result: List[List[T]] = []

    def successors(v: T):
        return iter([w for w in edges.get(v, ()) if w in order])

    for root in vertices:
        if root in index:
            continue
        index[root] = len(stack)
        stack.append(root)
        boundaries.append(index[root])
        work = [(root, successors(root))]
        while work:
            v, it = work[-1]
            descended = False
            for w in it:
                if w not in index:
                    index[w] = len(stack)
                    stack.append(w)
                    boundaries.append(index[w])
                    work.append((w, successors(w)))
                    descended = True
                    break
                elif w not in identified:
                    while index[w] < boundaries[-1]:
                        boundaries.pop()
            if descended:
                continue
            work.pop()
            if boundaries[-1] == index[v]:
                boundaries.pop()
                scc = stack[index[v]:]
                del stack[index[v]:]
                identified.update(scc)
                result.append(sorted(scc, key=order.__getitem__))
    return result


def stable_topological_groups(vertices: Sequence[T],
                              edges: Mapping[T, Collection[T]]) -> List[List[T]]:
    """
    Order SCCs so that dependencies come first

    Kahn's algorithm over the component graph; among ready components the
    one whose first member appears earliest in `vertices` wins, so an
    unconstrained input keeps its original order.
    """
    order = {v: i for i, v in enumerate(vertices)}
    components = strongly_connected_components(vertices, edges)
    comp_of = {v: ci for ci, comp in enumerate(components) for v in comp}
    first = [order[comp[0]] for comp in components]

    dependents: Dict[int, Set[int]] = {ci: set() for ci in range(len(components))}
    indegree = [0] * len(components)
    for ci, comp in enumerate(components):
        deps = {comp_of[w] for v in comp for w in edges.get(v, ()) if w in comp_of} - {ci}
        indegree[ci] = len(deps)
        for d in deps:
            dependents[d].add(ci)

    ready = [(first[ci], ci) for ci in range(len(components)) if indegree[ci] == 0]
    heapq.heapify(ready)
    result: List[List[T]] = []
    while ready:
        _, ci = heapq.heappop(ready)
        result.append(components[ci])
        for dep in dependents[ci]:
            indegree[dep] -= 1
            if indegree[dep] == 0:
                heapq.heappush(ready, (first[dep], dep))
    return result


def forward_references(order: Sequence[T], edges: Mapping[T, Collection[T]],
                       groups: Sequence[Collection[T]] = ()) -> List[tuple]:
    """
    Edges v -> w where w is placed after v and the two are in different groups

    Used as the topological validity checker.
    """
    position = {v: i for i, v in enumerate(order)}
    group_of = {v: gi for gi, g in enumerate(groups) for v in g}
    bad = []
    for v in order:
        for w in edges.get(v, ()):
            if w not in position or w == v:
                continue
            if group_of.get(v, ("v", v)) == group_of.get(w, ("w", w)):
                continue
            if position[w] > position[v]:
                bad.append((v, w))
    return bad
