"""Role discovery over node-feature matrices.

Training factorizes the node-feature matrix V into nonnegative G (node-role
memberships) and F (role-feature definitions) by minimizing generalized KL
divergence. The role count and quantization width are picked by minimum
description length: model cost bits*r*(N_n+N_f) plus the divergence between V
and the quantized reconstruction. Scoring re-derives memberships for later
windows against the frozen F via nonnegative least squares. Roles are made
readable by regressing interpretable node properties onto the memberships.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import networkx as nx
import numpy as np
from scipy.optimize import nnls

from artifact.features import EmptyGraphError, FeatureMatrix
from artifact.graph import ArtifactGraph, Vertex

logger = logging.getLogger(__name__)

EPS = 1e-12

PROPERTY_NAMES = (
    "degree",
    "weighted_degree",
    "pagerank",
    "transitivity",
    "diversity",
    "eccentricity",
    "betweenness",
)

DEFAULT_R_RANGE = range(1, 11)
DEFAULT_B_RANGE = range(1, 7)


class DimensionError(ValueError):
    """Shapes or ranks inconsistent with the requested factorization."""


class NonNegativityError(ValueError):
    """Input matrix contains negative or non-finite entries."""


class SchemaMismatchError(ValueError):
    """Feature matrix does not match the model's frozen schema."""


def _values(V) -> np.ndarray:
    if isinstance(V, FeatureMatrix):
        return V.values
    return np.asarray(V, dtype=float)


def _check_nonnegative(V: np.ndarray) -> None:
    if not np.all(np.isfinite(V)):
        raise NonNegativityError("matrix has non-finite entries")
    if np.any(V < 0):
        raise NonNegativityError("matrix has negative entries")


# -- factorization ---------------------------------------------------------

def generalized_kl(V: np.ndarray, W: np.ndarray) -> float:
    """sum(V*log(V/W) - V + W) with 0*log0 := 0; W clamped to EPS where V > 0."""
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    if V.shape != W.shape:
        raise DimensionError(f"shape mismatch {V.shape} vs {W.shape}")
    pos = V > 0
    W_pos = np.maximum(W[pos], EPS)
    V_pos = V[pos]
    total = float(np.sum(V_pos * np.log(V_pos / W_pos) - V_pos + W_pos))
    total += float(np.sum(W[~pos]))
    return total


class NMFResult(NamedTuple):
    G: np.ndarray            # N_n x r memberships (unnormalized)
    F: np.ndarray            # r x N_f role definitions
    history: list[float]     # objective value at init and after each iteration
    n_iter: int


def nmf_kl(V, r: int, seed: int = 0, max_iter: int = 200,
           tol: float = 1e-7) -> NMFResult:
    """Multiplicative-update NMF under generalized KL divergence.

    Deterministic for a fixed seed; the objective history is retained so the
    non-increase property can be audited. Stops early when the relative
    objective improvement drops below tol.
    """
    V = _values(V)
    _check_nonnegative(V)
    if V.ndim != 2:
        raise DimensionError("V must be a matrix")
    n, f = V.shape
    if not 1 <= r <= min(n, f):
        raise DimensionError(f"rank {r} invalid for a {n}x{f} matrix")

    if V.sum() == 0.0:
        zero = NMFResult(np.zeros((n, r)), np.zeros((r, f)), [0.0], 0)
        return zero

    rng = np.random.default_rng(seed)
    avg = math.sqrt(V.mean() / r)
    G = avg * np.abs(rng.standard_normal((n, r)))
    F = avg * np.abs(rng.standard_normal((r, f)))

    history = [generalized_kl(V, G @ F)]
    for _ in range(max_iter):
        W = np.maximum(G @ F, EPS)
        F *= (G.T @ (V / W)) / np.maximum(G.sum(axis=0)[:, None], EPS)
        W = np.maximum(G @ F, EPS)
        G *= ((V / W) @ F.T) / np.maximum(F.sum(axis=1)[None, :], EPS)
        d = generalized_kl(V, G @ F)
        history.append(d)
        if history[-2] - d < tol * max(history[-2], EPS):
            break
    logger.debug("nmf_kl r=%d seed=%d converged after %d iterations (D=%.6g)",
                 r, seed, len(history) - 1, history[-1])
    return NMFResult(G, F, history, len(history) - 1)


# -- quantization -----------------------------------------------------------

def quantize(matrix, bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd quantization of a nonnegative matrix to 2**bits levels.

    Centroids start at evenly spaced quantiles of the entries, so the whole
    procedure is deterministic. Ties in assignment go to the lower centroid
    index; empty centroids keep their previous position.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    arr = np.asarray(matrix, dtype=float)
    _check_nonnegative(arr)
    flat = arr.ravel()
    if flat.size == 0:
        return arr.copy(), np.zeros(0)

    k = 2 ** bits
    centroids = np.quantile(flat, (np.arange(k) + 0.5) / k)
    assignment = np.zeros(flat.size, dtype=int)
    for _ in range(100):
        assignment = np.argmin(np.abs(flat[:, None] - centroids[None, :]), axis=1)
        updated = centroids.copy()
        for j in range(k):
            members = flat[assignment == j]
            if members.size:
                updated[j] = members.mean()
        if np.array_equal(updated, centroids):
            break
        centroids = updated
    assignment = np.argmin(np.abs(flat[:, None] - centroids[None, :]), axis=1)
    return centroids[assignment].reshape(arr.shape), centroids


# -- description length ------------------------------------------------------

class CostBreakdown(NamedTuple):
    model_cost: float   # M, bits
    error_cost: float   # E, generalized KL against the quantized product
    total: float        # L = M + E


def description_length(V, G: np.ndarray, F: np.ndarray,
                       bits: int) -> CostBreakdown:
    """MDL cost of encoding V through quantized factors at a given bit width."""
    V = _values(V)
    G = np.asarray(G, dtype=float)
    F = np.asarray(F, dtype=float)
    n, f = V.shape
    r = G.shape[1]
    if G.shape[0] != n or F.shape != (r, f):
        raise DimensionError(
            f"inconsistent shapes V{V.shape} G{G.shape} F{F.shape}"
        )
    model_cost = float(bits * r * (n + f))
    G_q, _ = quantize(G, bits)
    F_q, _ = quantize(F, bits)
    error_cost = generalized_kl(V, G_q @ F_q)
    return CostBreakdown(model_cost, error_cost, model_cost + error_cost)


# -- model selection ----------------------------------------------------------

@dataclass
class RoleModel:
    """Frozen role definitions plus the metadata needed to reuse them."""

    n_roles: int
    n_bits: int
    F: np.ndarray              # n_roles x N_f role-feature definitions
    schema_id: str
    seed: int
    training_span: tuple[float, float] | None = None

    def validate(self) -> None:
        if self.n_roles < 1:
            raise ValueError("n_roles must be >= 1")
        if not 1 <= self.n_bits <= 16:
            raise ValueError("n_bits must be in 1..16")
        _check_nonnegative(self.F)
        if self.F.shape[0] != self.n_roles:
            raise DimensionError("F row count must equal n_roles")
        if np.any(self.F.sum(axis=1) == 0.0):
            raise ValueError("F must have no all-zero row")


class GridPoint(NamedTuple):
    r: int
    b: int
    model_cost: float
    error_cost: float
    total: float


def select_model(
    V,
    r_range: Iterable[int] = DEFAULT_R_RANGE,
    b_range: Iterable[int] = DEFAULT_B_RANGE,
    seed: int = 0,
    max_iter: int = 200,
    tol: float = 1e-7,
) -> tuple[RoleModel, list[GridPoint]]:
    """Grid-search role count and bit width for the minimum description length.

    One factorization per candidate rank (with a rank-derived seed so runs
    are independent yet reproducible), then every bit width is costed against
    it. Ties break toward fewer roles, then fewer bits. Ranks exceeding the
    matrix dimensions are skipped.
    """
    values = _values(V)
    schema_id = V.schema_id if isinstance(V, FeatureMatrix) else ""
    n, f = values.shape
    r_list = [r for r in r_range if 1 <= r <= min(n, f)]
    b_list = [b for b in b_range if b >= 1]
    if not r_list or not b_list:
        raise DimensionError("no feasible (roles, bits) grid points")

    grid: list[GridPoint] = []
    best: tuple[float, int, int] | None = None
    factors: dict[int, NMFResult] = {}
    for r in r_list:
        result = nmf_kl(values, r, seed=seed * 1009 + r, max_iter=max_iter, tol=tol)
        factors[r] = result
        for b in b_list:
            cost = description_length(values, result.G, result.F, b)
            grid.append(GridPoint(r, b, *cost))
            if best is None or cost.total < best[0]:
                best = (cost.total, r, b)
    _, n_roles, n_bits = best
    logger.info("selected %d roles at %d bits (L=%.6g)", n_roles, n_bits, best[0])
    model = RoleModel(
        n_roles=n_roles,
        n_bits=n_bits,
        F=factors[n_roles].F.copy(),
        schema_id=schema_id,
        seed=seed,
    )
    model.validate()
    return model, grid


def write_grid_csv(grid: Sequence[GridPoint], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        fp.write("roles,bits,model_cost,error_cost,total\n")
        for p in grid:
            fp.write(
                f"{p.r},{p.b},{p.model_cost!r},{p.error_cost!r},{p.total!r}\n"
            )


# -- memberships under fixed roles --------------------------------------------

@dataclass
class Membership:
    """Per-node role distribution for one window; rows sum to 1."""

    nodes: list[Vertex]
    G: np.ndarray  # len(nodes) x n_roles

    def validate(self) -> None:
        if self.G.shape[0] != len(self.nodes):
            raise ValueError("row count does not match node list")
        if np.any(self.G < 0):
            raise ValueError("memberships must be nonnegative")
        if self.G.size and not np.allclose(self.G.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("membership rows must sum to 1")

    def row_for(self, node: Vertex) -> np.ndarray:
        return self.G[self.nodes.index(node)]


def memberships_fixed_F(V_t, model: RoleModel) -> Membership:
    """Project each node's feature row onto the frozen role definitions.

    Nonnegative least squares per row, then L1 normalization; a row whose
    projection is identically zero gets the uninformative uniform
    distribution.
    """
    values = _values(V_t)
    nodes = V_t.nodes if isinstance(V_t, FeatureMatrix) else [
        ("", str(i)) for i in range(values.shape[0])
    ]
    if values.ndim != 2 or values.shape[1] != model.F.shape[1]:
        raise SchemaMismatchError(
            f"feature matrix has {values.shape[1] if values.ndim == 2 else '?'} "
            f"columns, model expects {model.F.shape[1]}"
        )
    if isinstance(V_t, FeatureMatrix) and model.schema_id \
            and V_t.schema_id != model.schema_id:
        raise SchemaMismatchError(
            f"schema {V_t.schema_id} does not match model schema {model.schema_id}"
        )
    _check_nonnegative(values)

    basis = model.F.T  # N_f x r
    G = np.zeros((values.shape[0], model.n_roles))
    for i, row in enumerate(values):
        g, _ = nnls(basis, row)
        total = g.sum()
        if total > 0.0:
            G[i] = g / total
        else:
            G[i] = 1.0 / model.n_roles
    membership = Membership(list(nodes), G)
    membership.validate()
    return membership


# -- node properties and role descriptions -------------------------------------

@dataclass
class PropertyMatrix:
    """Interpretable per-node graph properties (columns = PROPERTY_NAMES)."""

    nodes: list[Vertex]
    names: tuple[str, ...]
    values: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def row_for(self, node: Vertex) -> np.ndarray:
        return self.values[self.nodes.index(node)]


def _to_networkx(g: ArtifactGraph) -> nx.Graph:
    nxg = nx.Graph()
    nxg.add_nodes_from(g.nodes())
    for u, v, w in g.edges():
        nxg.add_edge(u, v, weight=float(w))
    return nxg


def _layer_diversity(g: ArtifactGraph, v: Vertex) -> float:
    by_layer: dict[str, float] = {}
    for (layer, _), w in g.neighbors(v).items():
        by_layer[layer] = by_layer.get(layer, 0.0) + float(w)
    if len(by_layer) <= 1:
        return 0.0
    total = sum(by_layer.values())
    entropy = -sum(
        (w / total) * math.log(w / total) for w in by_layer.values() if w > 0
    )
    return entropy / math.log(len(by_layer))


def node_properties(g: ArtifactGraph) -> PropertyMatrix:
    """Interpretable properties, computed straight from the window graph."""
    if len(g) == 0:
        raise EmptyGraphError("cannot compute properties of an empty graph")
    nodes = g.nodes()
    nxg = _to_networkx(g)

    pagerank = nx.pagerank(nxg, alpha=0.85, weight="weight", tol=1e-8,
                           max_iter=1000)
    clustering = nx.clustering(nxg)  # unweighted, matches the feature
    betweenness = nx.betweenness_centrality(nxg, normalized=False)
    eccentricity: dict[Vertex, int] = {}
    for comp in nx.connected_components(nxg):
        eccentricity.update(nx.eccentricity(nxg.subgraph(comp)))

    values = np.zeros((len(nodes), len(PROPERTY_NAMES)))
    for i, v in enumerate(nodes):
        values[i] = (
            nxg.degree(v),
            g.weighted_degree(v),
            pagerank[v],
            clustering[v],
            _layer_diversity(g, v),
            eccentricity[v],
            betweenness[v],
        )
    return PropertyMatrix(nodes, PROPERTY_NAMES, values)


@dataclass
class RoleDescription:
    """Role-property contributions and their single-role-normalized scores."""

    property_names: tuple[str, ...]
    E: np.ndarray              # n_roles x n_properties, nonnegative
    E_single: np.ndarray       # n_properties, the one-role baseline
    ratios: np.ndarray         # E / E_single (0 where the baseline is 0)
    scores: np.ndarray         # ratios scaled per role to sum 1

    def validate(self) -> None:
        if np.any(self.E < 0) or not np.all(np.isfinite(self.E)):
            raise ValueError("E entries must be nonnegative and finite")

    def write_csv(self, path: Path | str) -> None:
        with open(path, "w", encoding="utf-8") as fp:
            fp.write("role," + ",".join(self.property_names) + "\n")
            for r, row in enumerate(self.scores):
                cells = ",".join(repr(float(x)) for x in row)
                fp.write(f"{r},{cells}\n")


def role_descriptions(G_nr, M_np) -> RoleDescription:
    """Express each role through node properties.

    Each property column is regressed (nonnegatively) onto the training
    memberships, and onto the trivial single-role membership of all ones;
    the ratio says how much more of the property a role carries than an
    undifferentiated average role would.
    """
    G = G_nr.G if isinstance(G_nr, Membership) else np.asarray(G_nr, dtype=float)
    if isinstance(M_np, PropertyMatrix):
        names, M = M_np.names, M_np.values
        if isinstance(G_nr, Membership) and G_nr.nodes != M_np.nodes:
            raise DimensionError("membership and property node lists differ")
    else:
        M = np.asarray(M_np, dtype=float)
        names = tuple(f"p{j}" for j in range(M.shape[1]))
    if G.shape[0] != M.shape[0]:
        raise DimensionError(
            f"memberships cover {G.shape[0]} nodes, properties {M.shape[0]}"
        )

    n_roles = G.shape[1]
    n_props = M.shape[1]
    ones = np.ones((G.shape[0], 1))
    E = np.zeros((n_roles, n_props))
    E_single = np.zeros(n_props)
    for j in range(n_props):
        E[:, j], _ = nnls(G, M[:, j])
        single, _ = nnls(ones, M[:, j])
        E_single[j] = single[0]

    ratios = np.zeros_like(E)
    nonzero = E_single > 0
    ratios[:, nonzero] = E[:, nonzero] / E_single[nonzero]

    scores = np.zeros_like(ratios)
    row_sums = ratios.sum(axis=1)
    for r in range(n_roles):
        if row_sums[r] > 0:
            scores[r] = ratios[r] / row_sums[r]

    description = RoleDescription(tuple(names), E, E_single, ratios, scores)
    description.validate()
    return description
