"""Adjacency graphs and GMRF structure matrices.

Structure matrices are held dense: the largest one the models need is the
age-space interaction (47 * 8 = 376 rows), well inside dense LAPACK range.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

# relative eigenvalue cutoff shared by rank, null space and generalized inverse
EIG_CUTOFF = 1e-9

INTERACTION_TYPES = ("I", "II", "III", "IV")


class GraphError(ValueError):
    """Raised for malformed edge lists or label tables."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected area graph with 0-based integer nodes."""

    n_areas: int
    edges: frozenset
    labels: tuple

    def __post_init__(self):
        for i, j in self.edges:
            if i == j:
                raise GraphError(f"self-loop at {self.labels[i]!r}")
            if not (0 <= i < self.n_areas and 0 <= j < self.n_areas):
                raise GraphError(f"edge ({i}, {j}) out of range")
        if len(self.labels) != self.n_areas:
            raise GraphError("one label per area required")

    @property
    def adjacency(self) -> np.ndarray:
        W = np.zeros((self.n_areas, self.n_areas))
        for i, j in self.edges:
            W[i, j] = W[j, i] = 1.0
        return W

    @property
    def neighbour_counts(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(int)

    def neighbours(self, i: int) -> list[int]:
        return sorted(j for e in self.edges if i in e for j in e if j != i)

    @property
    def n_components(self) -> int:
        n, _ = connected_components(self.adjacency, directed=False)
        return int(n)

    @property
    def component_labels(self) -> np.ndarray:
        _, lab = connected_components(self.adjacency, directed=False)
        return lab

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise GraphError(f"unknown area label {label!r}") from None

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], n_areas: int, labels=None):
        edges = set()
        for i, j in pairs:
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            e = (min(i, j), max(i, j))
            if e in edges:
                raise GraphError(f"duplicate edge {e}")
            edges.add(e)
        if labels is None:
            labels = tuple(str(k + 1) for k in range(n_areas))
        return cls(n_areas, frozenset(edges), tuple(labels))


def read_label_table(source) -> list[str]:
    """Read an ``index,label`` CSV (1-based indices) into an ordered label list."""
    text = _read_text(source)
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or set(rows[0]) != {"index", "label"}:
        raise GraphError("label table needs header 'index,label'")
    out = {}
    for lineno, row in enumerate(rows, start=2):
        idx = int(row["index"])
        if idx in out:
            raise GraphError(f"duplicate index {idx}", lineno)
        out[idx] = row["label"].strip()
    if sorted(out) != list(range(1, len(out) + 1)):
        raise GraphError("label indices must be 1..n without gaps")
    return [out[k] for k in sorted(out)]


def load_adjacency(edge_list_source, labels: Sequence[str] | None = None) -> AdjacencyGraph:
    """Parse an edge list of ``labelA labelB`` lines into an AdjacencyGraph.

    Parameters
    ----------
    edge_list_source : str, path or file-like
        Edge list text, a path to it, or an open file. ``#`` starts a comment.
    labels : sequence of str, optional
        Declared area labels. When given, every edge endpoint must be one of
        them and isolated areas are kept; otherwise labels are collected in
        order of first appearance.

    Raises
    ------
    GraphError
        Unknown label, self-loop or duplicate edge, with the offending line.
    """
    text = _read_text(edge_list_source)
    declared = labels is not None
    labels = list(labels) if declared else []
    lookup = {lab: k for k, lab in enumerate(labels)}
    if declared and len(lookup) != len(labels):
        raise GraphError("duplicate area labels")
    edges = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"expected two labels, got {len(parts)}", lineno)
        idx = []
        for tok in parts:
            if tok not in lookup:
                if declared:
                    raise GraphError(f"unknown area label {tok!r}", lineno)
                lookup[tok] = len(labels)
                labels.append(tok)
            idx.append(lookup[tok])
        a, b = idx
        if a == b:
            raise GraphError(f"self-loop {parts[0]!r}", lineno)
        e = (min(a, b), max(a, b))
        if e in edges:
            raise GraphError(f"duplicate edge {parts[0]} {parts[1]}", lineno)
        edges.add(e)
    return AdjacencyGraph(len(labels), frozenset(edges), tuple(labels))


def spain_provinces() -> AdjacencyGraph:
    """The bundled 47-province graph of continental Spain."""
    pkg = resources.files("mortsmooth") / "data"
    labels = read_label_table((pkg / "spain_provinces.csv").read_text(encoding="utf-8"))
    return load_adjacency((pkg / "spain_provinces.edges").read_text(encoding="utf-8"), labels)


def _read_text(source) -> str:
    if hasattr(source, "read"):
        return source.read()
    if isinstance(source, os.PathLike) or (
        isinstance(source, str) and "\n" not in source and os.path.exists(source)
    ):
        with open(source, encoding="utf-8") as fh:
            return fh.read()
    return str(source)


# ---------------------------------------------------------------------------
# structure matrices


@dataclass(frozen=True, eq=False)
class StructureMatrix:
    """Symmetric PSD precision structure with its rank and null space."""

    entries: np.ndarray
    rank: int
    null_basis: np.ndarray
    scaled: bool = False
    scale_factor: float = 1.0
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.entries.setflags(write=False)
        self.null_basis.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def nullity(self) -> int:
        return self.dim - self.rank

    @classmethod
    def from_matrix(cls, R, scaled=False, scale_factor=1.0, name=""):
        R = np.array(R, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("structure matrix must be square")
        if not np.allclose(R, R.T, rtol=0, atol=1e-12 * max(1.0, np.abs(R).max())):
            raise ValueError("structure matrix must be symmetric")
        R = 0.5 * (R + R.T)
        vals, vecs = np.linalg.eigh(R)
        top = max(vals.max(initial=0.0), 0.0)
        if top == 0.0:
            raise ValueError("structure matrix is zero")
        if vals.min() < -EIG_CUTOFF * top:
            raise ValueError("structure matrix is not positive semidefinite")
        null = vals <= EIG_CUTOFF * top
        return cls(R, int((~null).sum()), vecs[:, null].copy(), scaled, float(scale_factor), name)

    def generalized_inverse(self) -> np.ndarray:
        vals, vecs = np.linalg.eigh(self.entries)
        keep = vals > EIG_CUTOFF * vals.max()
        return (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T

    def marginal_variance_gm(self) -> float:
        """Geometric mean of the positive diagonal entries of the generalized inverse."""
        d = np.diag(self.generalized_inverse())
        d = d[d > EIG_CUTOFF * d.max()]
        return float(np.exp(np.mean(np.log(d))))


def difference_matrix(n: int, order: int) -> np.ndarray:
    D = np.eye(n)
    for _ in range(order):
        D = np.diff(D, axis=0)
    return D


def rw_structure(n: int, order: int) -> StructureMatrix:
    """Random-walk structure ``D'D`` for first or second differences."""
    if order not in (1, 2):
        raise ValueError(f"random-walk order must be 1 or 2, got {order}")
    if n < order + 1:
        raise ValueError(f"RW{order} needs at least {order + 1} nodes, got {n}")
    D = difference_matrix(n, order)
    return StructureMatrix.from_matrix(D.T @ D, name=f"rw{order}")


def icar_structure(graph: AdjacencyGraph) -> StructureMatrix:
    """Intrinsic CAR structure ``D_W - W``; nullity equals the component count."""
    W = graph.adjacency
    R = np.diag(W.sum(axis=1)) - W
    return StructureMatrix.from_matrix(R, name="icar")


def scale_structure(R: StructureMatrix) -> StructureMatrix:
    """Rescale so the generalized-inverse diagonal has geometric mean one."""
    c = R.marginal_variance_gm()
    entries = c * np.asarray(R.entries)
    return StructureMatrix(
        entries.copy(),
        R.rank,
        np.array(R.null_basis),
        scaled=True,
        scale_factor=R.scale_factor * c,
        name=R.name,
    )


def identity_structure(n: int) -> StructureMatrix:
    return StructureMatrix(np.eye(n), n, np.zeros((n, 0)), scaled=True, name="iid")


def interaction_structure(kind: str, R_second: StructureMatrix, R_age: StructureMatrix) -> StructureMatrix:
    """Kronecker structure for interaction types I-IV, age index fastest.

    ``R_second`` is the temporal or spatial factor (left), ``R_age`` the age
    factor (right), so cell ``(a, t)`` sits at position ``t * A + a``.
    """
    if kind not in INTERACTION_TYPES:
        raise ValueError(f"unknown interaction type {kind!r}")
    if not isinstance(R_second, StructureMatrix) or not isinstance(R_age, StructureMatrix):
        raise TypeError("interaction factors must be StructureMatrix instances")
    S, A = R_second.dim, R_age.dim
    left = R_second if kind in ("II", "IV") else identity_structure(S)
    right = R_age if kind in ("III", "IV") else identity_structure(A)
    if left.dim != S or right.dim != A:
        raise ValueError("dimension mismatch between interaction factors")
    entries = np.kron(left.entries, right.entries)
    # null(L kron R) = null(L) kron R^A  +  R^S kron null(R)
    parts = []
    if left.nullity:
        parts.append(np.kron(left.null_basis, np.eye(A)))
    if right.nullity:
        parts.append(np.kron(np.eye(S), right.null_basis))
    rank = left.rank * right.rank
    if parts:
        span = np.hstack(parts)
        u, s, _ = np.linalg.svd(span, full_matrices=False)
        null_basis = u[:, : S * A - rank]
    else:
        null_basis = np.zeros((S * A, 0))
    return StructureMatrix(
        entries,
        rank,
        null_basis,
        scaled=left.scaled and right.scaled,
        scale_factor=left.scale_factor * right.scale_factor,
        name=f"type{kind}",
    )


@dataclass(frozen=True, eq=False)
class EigenSystem:
    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.T


def eigendecompose(R) -> EigenSystem:
    """Full eigensystem with eigenvalues in descending order.

    The smoothest directions (smallest eigenvalues, null space included) sit
    at the trailing columns.
    """
    M = np.asarray(R.entries if isinstance(R, StructureMatrix) else R, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.allclose(M, M.T, rtol=0, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError("eigendecompose requires a symmetric matrix")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(vals, kind="stable")[::-1]
    vals, vecs = vals[order], vecs[:, order]
    # deterministic sign: largest-magnitude entry of each vector positive
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return EigenSystem(vals, vecs * signs)
