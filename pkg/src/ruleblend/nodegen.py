"""Rule generation from randomized trees grown on subsamples.

A node is a rectangular rule: for each constrained variable either a half-open
interval [lo, hi) or a subset of categorical levels. Trees are grown on small
row subsamples with a random subset of candidate variables per split; every
tree node except the tree's own root contributes its merged path constraints
as a candidate rule, whose members, mean and size are then computed on the
full training data. The observation sitting exactly on a numeric threshold
belongs to the right (>=) child.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import CATEGORICAL, Dataset
from .errors import DataError, GenerationWarning

MAX_DEPTH = 8
TREE_CAP_FACTOR = 10
_DEDUP_STREAM = 2**33
_RSS_GUARD = 1e-12


@dataclass(frozen=True)
class Interval:
    """Half-open numeric constraint lo <= x < hi."""

    lo: float
    hi: float

    def contains(self, x: float) -> bool:
        return self.lo <= x < self.hi


@dataclass(frozen=True)
class LevelSet:
    """Categorical constraint: level code must lie in ``levels``."""

    levels: frozenset[int]

    def contains(self, code: float) -> bool:
        return code in self.levels


Constraint = Interval | LevelSet
ConstraintMap = tuple[tuple[int, Constraint], ...]


@dataclass(frozen=True, eq=False)
class NodeRule:
    """One rectangular rule with its full-training-data statistics.

    ``constraints`` is sorted by variable index and empty for the root rule.
    ``members`` lists the full-data row indices satisfying every constraint
    (ascending); it may be None on a deserialized model, where only ``size``
    survives. ``mean`` is the average of the model's internal response over
    the members.
    """

    constraints: ConstraintMap
    mean: float
    size: int
    members: np.ndarray | None = None

    @property
    def order(self) -> int:
        return len(self.constraints)

    @property
    def is_root(self) -> bool:
        return not self.constraints


@dataclass(eq=False)
class NodeSet:
    """Rules with the unconstrained root at index 0."""

    nodes: list[NodeRule]
    meta: dict = field(default_factory=dict)

    @property
    def q(self) -> int:
        return len(self.nodes)

    def check(self, n: int, max_interaction: int | None = None,
              min_node_size: int | None = None) -> None:
        if not self.nodes or not self.nodes[0].is_root:
            raise DataError("node set must start with the unconstrained root")
        if self.nodes[0].size != n:
            raise DataError("root size must equal the number of training rows")
        seen: set[bytes] = set()
        for g, nd in enumerate(self.nodes):
            if g > 0 and nd.is_root:
                raise DataError("only index 0 may be unconstrained")
            if max_interaction is not None and g > 0 and nd.order > max_interaction:
                raise DataError(f"node {g} exceeds the interaction bound")
            if min_node_size is not None and g > 0 and nd.size < min_node_size:
                raise DataError(f"node {g} is smaller than the node-size floor")
            if nd.members is not None:
                if len(nd.members) != nd.size:
                    raise DataError(f"node {g} member list disagrees with its size")
                key = nd.members.tobytes()
                if key in seen:
                    raise DataError(f"node {g} duplicates another node's member list")
                seen.add(key)


# ---- membership -------------------------------------------------------------


def node_membership(rule: NodeRule, values: np.ndarray, missing: np.ndarray) -> bool:
    """Whether a single observation falls inside a rule.

    ``values``/``missing`` are length-p arrays for one row. A missing value in
    any constrained variable excludes the observation; the root matches every
    observation, including one with every feature missing.
    """
    for var, c in rule.constraints:
        if missing[var]:
            return False
        if not c.contains(values[var]):
            return False
    return True


def membership_matrix(nodes: NodeSet | list[NodeRule], values: np.ndarray,
                      missing: np.ndarray) -> np.ndarray:
    """Vectorized membership for many rows: bool array (n_rows, q)."""
    rules = nodes.nodes if isinstance(nodes, NodeSet) else nodes
    n = values.shape[0]
    out = np.empty((n, len(rules)), dtype=bool)
    for g, rule in enumerate(rules):
        mask = np.ones(n, dtype=bool)
        for var, c in rule.constraints:
            col = values[:, var]
            if isinstance(c, Interval):
                ok = (col >= c.lo) & (col < c.hi)
            else:
                ok = np.isin(col, list(c.levels))
            mask &= ok & ~missing[:, var]
        out[:, g] = mask
    return out


def _rule_members(constraints: ConstraintMap, ds: Dataset) -> np.ndarray:
    mask = np.ones(ds.n, dtype=bool)
    for var, c in constraints:
        col = ds.values[:, var]
        if isinstance(c, Interval):
            mask &= (col >= c.lo) & (col < c.hi)
        else:
            mask &= np.isin(col, list(c.levels))
        mask &= ~ds.missing[:, var]
    return np.flatnonzero(mask)


# ---- tree growth ------------------------------------------------------------


@dataclass(eq=False)
class TreeNode:
    """One grown node: merged path constraints plus its subsample rows."""

    constraints: dict[int, Constraint]
    depth: int
    rows: np.ndarray
    split_var: int | None = None


def _best_numeric_split(x: np.ndarray, y: np.ndarray,
                        min_child: int = 1) -> tuple[float, float] | None:
    """Minimum-RSS threshold for one numeric variable, or None.

    Thresholds are midpoints between consecutive distinct sorted values that
    leave at least ``min_child`` rows on each side; the returned RSS is the
    summed within-child residual sum of squares.
    """
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    distinct = np.flatnonzero(xs[:-1] < xs[1:])
    if min_child > 1:
        m = len(xs)
        distinct = distinct[(distinct + 1 >= min_child)
                            & (m - distinct - 1 >= min_child)]
    if distinct.size == 0:
        return None
    csum = np.cumsum(ys)
    csq = np.cumsum(ys * ys)
    tot, totsq, m = csum[-1], csq[-1], len(ys)
    left_n = distinct + 1.0
    left_sum = csum[distinct]
    left_sq = csq[distinct]
    rss = (left_sq - left_sum**2 / left_n) + (
        (totsq - left_sq) - (tot - left_sum) ** 2 / (m - left_n)
    )
    k = int(np.argmin(rss))
    i = distinct[k]
    thr = (xs[i] + xs[i + 1]) / 2.0
    return float(rss[k]), thr


def _best_categorical_split(codes: np.ndarray, y: np.ndarray, min_child: int = 1
                            ) -> tuple[float, frozenset[int], frozenset[int]] | None:
    """Minimum-RSS level split: order present levels by mean response, scan.

    Only splits leaving at least ``min_child`` rows on each side qualify.
    """
    present, inverse = np.unique(codes, return_inverse=True)
    if present.size < 2:
        return None
    counts = np.bincount(inverse).astype(float)
    sums = np.bincount(inverse, weights=y)
    sqs = np.bincount(inverse, weights=y * y)
    order = np.argsort(sums / counts, kind="stable")
    counts, sums, sqs = counts[order], sums[order], sqs[order]
    cn, cs, cq = np.cumsum(counts), np.cumsum(sums), np.cumsum(sqs)
    tot_n, tot_s, tot_q = cn[-1], cs[-1], cq[-1]
    ln, ls, lq = cn[:-1], cs[:-1], cq[:-1]
    rss = (lq - ls**2 / ln) + ((tot_q - lq) - (tot_s - ls) ** 2 / (tot_n - ln))
    valid = (ln >= min_child) & (tot_n - ln >= min_child)
    if not valid.any():
        return None
    rss = np.where(valid, rss, np.inf)
    k = int(np.argmin(rss))
    ordered = present[order].astype(int)
    left = frozenset(ordered[: k + 1].tolist())
    right = frozenset(ordered[k + 1:].tolist())
    return float(rss[k]), left, right


def grow_randomized_tree(sub: np.ndarray, ds: Dataset, mtry: int,
                         rng: np.random.Generator,
                         max_depth: int = MAX_DEPTH,
                         min_child: int = 1,
                         min_split: int = 2) -> list[TreeNode]:
    """Grow one RSS-minimizing binary tree on a row subsample.

    Parameters
    ----------
    sub : ndarray
        Row indices (into ``ds``) forming the subsample.
    ds : Dataset
        Imputed training data whose ``response`` is the internal response the
        splits should explain.
    mtry : int
        Number of candidate variables drawn (without replacement) per split.
    rng : numpy Generator
        Source of the per-split variable draws.
    min_child : int
        Smallest subsample row count a split may leave on either side.
    min_split : int
        Smallest subsample row count a node may have and still be considered
        for splitting. Together with ``min_child`` this is the
        terminal-node-size control of forest growth.

    Returns
    -------
    list of TreeNode
        Every grown node in creation order, the tree's own root first. A node
        stops splitting when it holds fewer than ``min_split`` rows (always
        at least 2), no candidate split leaves ``min_child`` rows on both
        sides, none strictly reduces the RSS, or its depth reached
        ``max_depth``.
    """
    if ds.response is None:
        raise DataError("tree growth needs a response")
    y_all = ds.response
    p = ds.p
    mtry = max(1, min(mtry, p))
    min_child = max(1, min_child)
    stop_below = max(2, min_split, 2 * min_child)
    out: list[TreeNode] = []

    def descend(node: TreeNode) -> None:
        out.append(node)
        rows = node.rows
        if len(rows) < stop_below or node.depth >= max_depth:
            return
        y = y_all[rows]
        parent_rss = float(np.sum((y - y.mean()) ** 2))
        best = None
        for var in rng.choice(p, size=mtry, replace=False):
            var = int(var)
            col = ds.values[rows, var]
            if ds.schema.features[var].kind == CATEGORICAL:
                found = _best_categorical_split(col, y, min_child)
                if found is None:
                    continue
                rss, left, right = found
                payload = (left, right)
            else:
                found = _best_numeric_split(col, y, min_child)
                if found is None:
                    continue
                rss, thr = found
                payload = thr
            if best is None or rss < best[0]:
                best = (rss, var, payload)
        if best is None:
            return
        rss, var, payload = best
        if parent_rss - rss <= _RSS_GUARD * (1.0 + parent_rss):
            return
        col = ds.values[rows, var]
        if isinstance(payload, tuple):
            left_levels, right_levels = payload
            go_left = np.isin(col, list(left_levels))
            left_c: Constraint = LevelSet(left_levels)
            right_c: Constraint = LevelSet(right_levels)
        else:
            thr = payload
            go_left = col < thr
            old = node.constraints.get(var)
            lo = old.lo if isinstance(old, Interval) else -math.inf
            hi = old.hi if isinstance(old, Interval) else math.inf
            left_c = Interval(lo, thr)
            right_c = Interval(thr, hi)
        node.split_var = var
        for child_c, child_mask in ((left_c, go_left), (right_c, ~go_left)):
            cons = dict(node.constraints)
            cons[var] = child_c
            descend(TreeNode(cons, node.depth + 1, rows[child_mask]))

    descend(TreeNode({}, 0, np.asarray(sub)))
    return out


def extract_rules(tree: list[TreeNode], ds: Dataset, max_interaction: int,
                  min_node_size: int) -> list[NodeRule]:
    """Turn grown tree nodes into rules with full-training-data statistics.

    The tree's own root is skipped. Rules touching more than
    ``max_interaction`` distinct variables, or with fewer than
    ``min_node_size`` members on the full data, are dropped.
    """
    rules = []
    for node in tree[1:]:
        if len(node.constraints) > max_interaction:
            continue
        constraints: ConstraintMap = tuple(sorted(node.constraints.items()))
        members = _rule_members(constraints, ds)
        if len(members) < min_node_size:
            continue
        mean = float(ds.response[members].mean())
        rules.append(NodeRule(constraints, mean, len(members), members))
    return rules


# ---- ensemble generation ----------------------------------------------------


def _dedup_member_lists(nodes: list[NodeRule], rng: np.random.Generator) -> list[NodeRule]:
    """Keep one rule per distinct member list, chosen uniformly at random.

    The root always survives its own group and stays at index 0.
    """
    groups: dict[bytes, list[int]] = {}
    for i, nd in enumerate(nodes):
        groups.setdefault(nd.members.tobytes(), []).append(i)
    keep = set()
    for idxs in groups.values():
        if 0 in idxs:
            keep.add(0)
        elif len(idxs) == 1:
            keep.add(idxs[0])
        else:
            keep.add(int(rng.choice(idxs)))
    return [nd for i, nd in enumerate(nodes) if i in keep]


def default_subsample_size(n: int, min_node_size: int) -> int:
    return min(n, max(math.ceil(n / 10), 2 * min_node_size))


def default_mtry(p: int) -> int:
    return max(1, math.ceil(p / 3))


def generate_node_set(ds: Dataset, q: int, max_interaction: int = 2,
                      min_node_size: int = 5, mtry: int | None = None,
                      subsample_size: int | None = None, seed: int = 0,
                      tree_cap: int | None = None) -> NodeSet:
    """Build the rule ensemble: root plus rules mined from randomized trees.

    Trees are grown one at a time on fresh row subsamples until ``q`` distinct
    rules accumulate. Growth granularity follows ``min_node_size``: splits
    must leave that many subsample rows in each child, and a node is only
    split while it holds at least four times that many rows (capped at the
    subsample size so the smallest legal subsample still yields one split).
    Each tree draws its own generator seeded from ``(seed, tree_index)``
    (NumPy PCG64 via SeedSequence), so results do not depend on growth
    order. Rules are admitted only with a previously unseen
    constraint signature; once the collection reaches ``q``, rules sharing an
    identical member list are deduplicated (one survivor kept uniformly at
    random) and the collection is truncated to exactly ``q`` in insertion
    order. If ``tree_cap`` trees (default 10q) are exhausted first, the
    smaller ensemble is returned with a :class:`GenerationWarning`.
    """
    if ds.response is None:
        raise DataError("node generation needs a response")
    if q < 1:
        raise DataError("q must be at least 1")
    if seed < 0:
        raise DataError("seed must be nonnegative")
    if min_node_size < 1:
        raise DataError("min_node_size must be at least 1")
    if ds.n < 2 * min_node_size:
        raise DataError("need at least 2 * min_node_size training rows")
    if ds.missing.any():
        raise DataError("node generation expects imputed (complete) data")

    n = ds.n
    sub_size = subsample_size or default_subsample_size(n, min_node_size)
    if not 2 <= sub_size <= n:
        raise DataError("subsample size must lie in [2, n]")
    m_try = mtry or default_mtry(ds.p)
    cap = tree_cap if tree_cap is not None else TREE_CAP_FACTOR * q

    root = NodeRule((), float(ds.response.mean()), n, np.arange(n))
    nodes = [root]
    signatures: set[ConstraintMap] = {()}
    trees = 0
    dedup_pass = 0

    while trees < cap:
        if len(nodes) >= q:
            rng_d = np.random.default_rng([seed, _DEDUP_STREAM + dedup_pass])
            dedup_pass += 1
            nodes = _dedup_member_lists(nodes, rng_d)
            if len(nodes) >= q:
                break
        rng_t = np.random.default_rng([seed, trees])
        sub = rng_t.choice(n, size=sub_size, replace=False)
        tree = grow_randomized_tree(sub, ds, m_try, rng_t,
                                    min_child=min_node_size,
                                    min_split=min(4 * min_node_size, sub_size))
        for rule in extract_rules(tree, ds, max_interaction, min_node_size):
            if rule.constraints not in signatures:
                signatures.add(rule.constraints)
                nodes.append(rule)
        trees += 1

    rng_d = np.random.default_rng([seed, _DEDUP_STREAM + dedup_pass])
    nodes = _dedup_member_lists(nodes, rng_d)
    nodes = nodes[:q]
    if len(nodes) < q:
        warnings.warn(
            f"generated {len(nodes)} of {q} requested nodes after {trees} trees",
            GenerationWarning,
        )
    out = NodeSet(nodes, meta={"trees_grown": trees, "requested": q,
                               "subsample_size": sub_size, "mtry": m_try})
    out.check(n)
    return out
