"""Dependency DAG over (segment, layer) nodes and the diagonal schedule.

Node (s, l) depends on (s, l-1) and (s-1, l): a segment must clear the
previous layer, and the layer's memory must have absorbed the previous
segment. Grouping every node into anti-diagonal s + l yields the fewest
possible groups, S + L - 1, because that grid has a dependency chain of
exactly that many vertices; `min_groups_oracle` re-derives the bound by
brute-force longest path so the schedule never has to be trusted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InputError

MAX_ORACLE_NODES = 10_000


@dataclass(frozen=True)
class Node:
    """One (segment, layer) cell of the execution grid."""

    segment: int
    layer: int

    def predecessors(self) -> list["Node"]:
        preds = []
        if self.segment > 0:
            preds.append(Node(self.segment - 1, self.layer))
        if self.layer > 0:
            preds.append(Node(self.segment, self.layer - 1))
        return preds


@dataclass
class DiagonalSchedule:
    """Anti-diagonal grouping: groups[i] holds every node with s + l == i."""

    n_segments: int
    n_layers: int
    groups: list[set[Node]]

    def __len__(self) -> int:
        return len(self.groups)

    def max_group_size(self) -> int:
        return max(len(g) for g in self.groups)

    def to_json_obj(self) -> list[list[list[int]]]:
        """Array of arrays of [segment, layer] pairs, deterministic order."""
        return [
            [[n.segment, n.layer] for n in sorted(g, key=lambda n: (n.segment, n.layer))]
            for g in self.groups
        ]


@dataclass
class ScheduleCheck:
    """Validation outcome; `violations` lists every broken rule found."""

    ok: bool
    violations: list[str] = field(default_factory=list)


def build_diagonal_schedule(n_segments: int, n_layers: int) -> DiagonalSchedule:
    """Place each node (s, l) in group s + l, its earliest feasible slot."""
    if n_segments < 1 or n_layers < 1:
        raise InputError(
            f"need at least one segment and one layer, got S={n_segments}, L={n_layers}")
    groups: list[set[Node]] = []
    for i in range(n_segments + n_layers - 1):
        lo = max(0, i - n_layers + 1)
        hi = min(n_segments - 1, i)
        groups.append({Node(s, i - s) for s in range(lo, hi + 1)})
    return DiagonalSchedule(n_segments, n_layers, groups)


def _coerce_groups(schedule) -> list[list[Node]]:
    groups = schedule.groups if isinstance(schedule, DiagonalSchedule) else schedule
    out = []
    for group in groups:
        members = []
        for item in group:
            if isinstance(item, Node):
                members.append(item)
            else:
                s, l = item
                members.append(Node(int(s), int(l)))
        out.append(members)
    return out


def validate_schedule(schedule, n_segments: int, n_layers: int) -> ScheduleCheck:
    """Check coverage and dependency order of any schedule against the DAG.

    Accepts a DiagonalSchedule or a plain list of node groups (Nodes or
    (segment, layer) pairs), so foreign schedules, including the
    sequential baseline and traces, can be checked too.
    """
    groups = _coerce_groups(schedule)
    violations: list[str] = []

    group_of: dict[Node, int] = {}
    for gi, group in enumerate(groups):
        for node in group:
            if not (0 <= node.segment < n_segments and 0 <= node.layer < n_layers):
                violations.append(f"node ({node.segment},{node.layer}) out of grid bounds")
                continue
            if node in group_of:
                violations.append(
                    f"node ({node.segment},{node.layer}) appears in groups "
                    f"{group_of[node]} and {gi}")
            else:
                group_of[node] = gi

    for s in range(n_segments):
        for l in range(n_layers):
            if Node(s, l) not in group_of:
                violations.append(f"node ({s},{l}) never scheduled")

    for node, gi in group_of.items():
        for pred in node.predecessors():
            pg = group_of.get(pred)
            if pg is not None and pg >= gi:
                violations.append(
                    f"edge ({pred.segment},{pred.layer}) -> ({node.segment},{node.layer}) "
                    f"broken: predecessor in group {pg}, node in group {gi}")

    return ScheduleCheck(ok=not violations, violations=sorted(violations))


def min_groups_oracle(n_segments: int, n_layers: int) -> int:
    """Longest dependency chain, counted in vertices, by explicit DP.

    Any valid grouping needs at least this many groups (a chain admits one
    node per group), and the diagonal schedule achieves it. Deliberately
    brute force; scale-bounded because it exists to check the formula,
    not to be fast.
    """
    if n_segments < 1 or n_layers < 1:
        raise InputError(
            f"need at least one segment and one layer, got S={n_segments}, L={n_layers}")
    if n_segments * n_layers > MAX_ORACLE_NODES:
        raise InputError(
            f"oracle bound exceeded: {n_segments}*{n_layers} > {MAX_ORACLE_NODES} nodes")
    # dp[s][l] = vertex count of the longest chain ending at (s, l); the
    # grid in (s, l) order is already topological.
    dp = [[0] * n_layers for _ in range(n_segments)]
    best = 0
    for s in range(n_segments):
        for l in range(n_layers):
            longest_pred = 0
            if s > 0:
                longest_pred = dp[s - 1][l]
            if l > 0 and dp[s][l - 1] > longest_pred:
                longest_pred = dp[s][l - 1]
            dp[s][l] = longest_pred + 1
            if dp[s][l] > best:
                best = dp[s][l]
    return best
