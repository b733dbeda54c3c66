"""Recursive structural features over the co-occurrence graph.

Every node gets four primary features (weighted degree, ego interconnectivity,
ego out-degree, transitivity). Recursion then appends neighbor sums and
neighbor means of previously retained features, pruning any candidate that is
approximately linearly dependent on what is already kept. The retained set is
frozen as a FeatureSchema at training time and re-applied verbatim to later
windows, so every window produces a matrix with identical columns.
"""

from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from artifact.graph import ArtifactGraph, Vertex

logger = logging.getLogger(__name__)

PRIMARY_NAMES = (
    "weighted_degree",
    "ego_interconnectivity",
    "ego_out_degree",
    "transitivity",
)
AGG_OPS = ("neighbor_sum", "neighbor_mean")

SCHEMA_FORMAT = "artifact-feature-schema v1"


class EmptyGraphError(ValueError):
    """Raised when a schema is fitted on a graph with no nodes."""


@dataclass(frozen=True)
class FeatureDef:
    """One feature: a primary name at depth 0, or op(parent feature) deeper."""

    fid: int
    depth: int
    base: str | None = None      # one of PRIMARY_NAMES when depth == 0
    op: str | None = None        # one of AGG_OPS when depth > 0
    parent: int | None = None    # fid of the aggregated feature when depth > 0

    def __post_init__(self) -> None:
        if self.depth == 0:
            if self.base not in PRIMARY_NAMES or self.op or self.parent is not None:
                raise ValueError(f"bad primary feature definition: {self}")
        else:
            if self.op not in AGG_OPS or self.parent is None or self.base:
                raise ValueError(f"bad recursive feature definition: {self}")

    def expression(self) -> str:
        return self.base if self.depth == 0 else f"{self.op}({self.parent})"


@dataclass
class FeatureSchema:
    """Frozen list of feature definitions plus the knobs that produced it."""

    features: list[FeatureDef] = field(default_factory=list)
    prune_tolerance: float = 0.01
    max_depth: int = 3

    def __len__(self) -> int:
        return len(self.features)

    def validate(self) -> None:
        for i, f in enumerate(self.features):
            if f.fid != i:
                raise ValueError(f"feature ids must be dense, got {f.fid} at {i}")
            if f.depth > 0 and not 0 <= f.parent < i:
                raise ValueError(f"feature {i} references undefined parent {f.parent}")
        primaries = [f for f in self.features if f.depth == 0]
        if tuple(f.base for f in primaries) != PRIMARY_NAMES:
            raise ValueError("depth-0 entries must be exactly the four primaries")

    def label(self, fid: int) -> str:
        """Readable nested expression, e.g. neighbor_mean(weighted_degree)."""
        f = self.features[fid]
        if f.depth == 0:
            return f.base
        return f"{f.op}({self.label(f.parent)})"

    def fingerprint(self) -> str:
        digest = hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()
        return digest[:12]

    def dumps(self) -> str:
        lines = [
            SCHEMA_FORMAT,
            f"prune_tolerance {self.prune_tolerance!r}",
            f"max_depth {self.max_depth}",
        ]
        for f in self.features:
            lines.append(f"{f.fid}\t{f.depth}\t{f.expression()}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "FeatureSchema":
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or lines[0] != SCHEMA_FORMAT:
            raise ValueError("unrecognized schema format header")
        tol = float(lines[1].split()[1])
        depth = int(lines[2].split()[1])
        schema = cls(prune_tolerance=tol, max_depth=depth)
        expr_re = re.compile(r"^(neighbor_sum|neighbor_mean)\((\d+)\)$")
        for line in lines[3:]:
            fid_s, d_s, expr = line.split("\t")
            fid, d = int(fid_s), int(d_s)
            if d == 0:
                schema.features.append(FeatureDef(fid, 0, base=expr))
            else:
                m = expr_re.match(expr)
                if m is None:
                    raise ValueError(f"cannot parse feature expression {expr!r}")
                schema.features.append(
                    FeatureDef(fid, d, op=m.group(1), parent=int(m.group(2)))
                )
        schema.validate()
        return schema

    def dump(self, path: Path | str) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "FeatureSchema":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


@dataclass
class FeatureMatrix:
    """Per-node feature values for one graph, rows aligned to `nodes`."""

    nodes: list[Vertex]
    schema_id: str
    values: np.ndarray  # shape (len(nodes), n_features), nonnegative

    def validate(self) -> None:
        if self.values.shape[0] != len(self.nodes):
            raise ValueError("row count does not match node list")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature values must be finite")
        if np.any(self.values < 0):
            raise ValueError("feature values must be nonnegative")

    def row_for(self, node: Vertex) -> np.ndarray:
        return self.values[self.nodes.index(node)]

    def write_csv(self, path: Path | str, schema: FeatureSchema | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fp:
            if schema is not None:
                header = ",".join(schema.label(f.fid) for f in schema.features)
            else:
                header = ",".join(f"f{j}" for j in range(self.values.shape[1]))
            fp.write("layer,value," + header + "\n")
            for (layer, value), row in zip(self.nodes, self.values):
                cells = ",".join(repr(float(x)) for x in row)
                fp.write(f"{layer},{value},{cells}\n")


# -- computation ----------------------------------------------------------

def _primary_columns(g: ArtifactGraph, nodes: list[Vertex]) -> np.ndarray:
    cols = np.zeros((len(nodes), 4))
    neighbor_sets = {v: set(g.neighbors(v)) for v in nodes}
    for i, v in enumerate(nodes):
        nbrs = neighbor_sets[v]
        k = len(nbrs)
        wdeg = g.weighted_degree(v)
        # edges among neighbors, each counted once, ego excluded
        inter = 0
        for u in nbrs:
            inter += sum(1 for w in neighbor_sets[u] if w in nbrs and w > u)
        ego = nbrs | {v}
        out = sum(
            1 for m in ego for w in neighbor_sets[m] if w not in ego
        )
        trans = 2.0 * inter / (k * (k - 1)) if k >= 2 else 0.0
        cols[i] = (wdeg, inter, out, trans)
    return cols


def primary_features(g: ArtifactGraph) -> FeatureMatrix:
    """The four depth-0 structural features for every node of g."""
    nodes = g.nodes()
    values = _primary_columns(g, nodes)
    return FeatureMatrix(nodes, "primary", values)


def _aggregate(
    g: ArtifactGraph, nodes: list[Vertex], index: dict[Vertex, int],
    column: np.ndarray, op: str,
) -> np.ndarray:
    """neighbor_sum / neighbor_mean of a column over the unweighted adjacency."""
    out = np.zeros(len(nodes))
    for i, v in enumerate(nodes):
        nbr_idx = [index[u] for u in g.neighbors(v)]
        if not nbr_idx:
            continue
        total = float(column[nbr_idx].sum())
        out[i] = total if op == "neighbor_sum" else total / len(nbr_idx)
    return out


def _relative_residual(candidate: np.ndarray, retained: np.ndarray) -> float:
    """Residual norm of candidate after projection onto span(retained),
    relative to the candidate's own norm. Zero columns count as dependent."""
    norm = float(np.linalg.norm(candidate))
    if norm == 0.0:
        return 0.0
    coef, _, _, _ = np.linalg.lstsq(retained, candidate, rcond=None)
    residual = candidate - retained @ coef
    return float(np.linalg.norm(residual)) / norm


def fit_schema(
    g_train: ArtifactGraph,
    max_depth: int = 3,
    prune_tolerance: float = 0.01,
) -> tuple[FeatureSchema, FeatureMatrix]:
    """Grow the recursive feature set on the training graph and freeze it.

    Level d candidates are neighbor_sum / neighbor_mean of every feature
    retained at level d-1. A candidate survives only if its least-squares
    residual against all currently retained columns stays above
    prune_tolerance of its own norm. The four primaries are always kept.
    """
    if len(g_train) == 0:
        raise EmptyGraphError("cannot fit a feature schema on an empty graph")
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    if not 0 < prune_tolerance < 1:
        raise ValueError("prune_tolerance must be in (0, 1)")

    nodes = g_train.nodes()
    index = {v: i for i, v in enumerate(nodes)}

    schema = FeatureSchema(prune_tolerance=prune_tolerance, max_depth=max_depth)
    columns: list[np.ndarray] = []
    primaries = _primary_columns(g_train, nodes)
    for j, name in enumerate(PRIMARY_NAMES):
        schema.features.append(FeatureDef(len(schema.features), 0, base=name))
        columns.append(primaries[:, j])

    frontier = list(range(4))  # fids retained at the previous level
    for depth in range(1, max_depth + 1):
        new_frontier: list[int] = []
        for parent in frontier:
            for op in AGG_OPS:
                candidate = _aggregate(g_train, nodes, index, columns[parent], op)
                matrix = np.column_stack(columns)
                rel = _relative_residual(candidate, matrix)
                if rel <= prune_tolerance:
                    logger.debug(
                        "pruned %s(%d) at depth %d (residual %.3e)",
                        op, parent, depth, rel,
                    )
                    continue
                fid = len(schema.features)
                schema.features.append(FeatureDef(fid, depth, op=op, parent=parent))
                columns.append(candidate)
                new_frontier.append(fid)
        logger.info("depth %d retained %d new features", depth, len(new_frontier))
        if not new_frontier:
            break
        frontier = new_frontier

    schema.validate()
    values = np.column_stack(columns)
    return schema, FeatureMatrix(nodes, schema.fingerprint(), values)


def apply_schema(
    g: ArtifactGraph, schema: FeatureSchema, registry=None
) -> FeatureMatrix:
    """Compute exactly the frozen schema's features on g (no re-pruning).

    When a NodeRegistry is supplied, every node of g is registered so that
    downstream membership tracking can assign stable ids to new arrivals.
    """
    schema.validate()
    nodes = g.nodes()
    if registry is not None:
        for v in nodes:
            registry.get_or_add(v)
    if not nodes:
        return FeatureMatrix([], schema.fingerprint(), np.zeros((0, len(schema))))

    index = {v: i for i, v in enumerate(nodes)}
    columns: list[np.ndarray] = []
    primaries = _primary_columns(g, nodes)
    for f in schema.features:
        if f.depth == 0:
            columns.append(primaries[:, PRIMARY_NAMES.index(f.base)])
        else:
            columns.append(_aggregate(g, nodes, index, columns[f.parent], f.op))
    return FeatureMatrix(nodes, schema.fingerprint(), np.column_stack(columns))
