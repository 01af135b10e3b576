"""Model specifications and assembly of latent Gaussian models."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .confounding import (
    check_cap,
    decorrelate_covariate,
    standardize_covariate,
)
from .graphs import (
    AdjacencyGraph,
    StructureMatrix,
    eigendecompose,
    icar_structure,
    interaction_structure,
    rw_structure,
    scale_structure,
)

FIXED_PRECISION = 0.001
KINDS = ("age-time", "age-space")
INTERACTIONS = (None, "I", "II", "III", "IV")


class SpecError(ValueError):
    pass


class ModelDataError(ValueError):
    pass


@dataclass(frozen=True)
class CovariateSpec:
    name: str
    axis: str
    decorrelate: bool = False
    k: int = 0


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    age_prior: str = "rw1"
    second_prior: str = "rw1"
    interaction: str | None = None
    covariates: tuple = ()
    include_boundary: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown model kind {self.kind!r}")
        if self.age_prior != "rw1":
            raise SpecError("age effect must use an rw1 prior")
        if self.kind == "age-time" and self.second_prior not in ("rw1", "rw2"):
            raise SpecError(f"age-time models need rw1/rw2 time prior, got {self.second_prior!r}")
        if self.kind == "age-space" and self.second_prior != "icar":
            raise SpecError(f"age-space models need an icar space prior, got {self.second_prior!r}")
        if self.interaction not in INTERACTIONS:
            raise SpecError(f"unknown interaction type {self.interaction!r}")
        want = "temporal" if self.kind == "age-time" else "spatial"
        for cov in self.covariates:
            if cov.axis != want:
                raise SpecError(f"covariate {cov.name!r} is {cov.axis}; {self.kind} models take {want}")
            if cov.k < 0:
                raise SpecError("k must be non-negative")

    @property
    def second_axis(self) -> str:
        return "time" if self.kind == "age-time" else "space"

    def with_interaction(self, interaction):
        return ModelSpec(self.kind, self.age_prior, self.second_prior, interaction,
                         self.covariates, self.include_boundary)

    def to_text(self) -> str:
        parts = [self.kind, f"age={self.age_prior}", f"{self.second_axis}={self.second_prior}",
                 f"interaction={self.interaction or 'none'}"]
        for c in self.covariates:
            parts.append(f"covariate={c.name}:{c.axis}" + (f":k={c.k}" if c.decorrelate else ""))
        if not self.include_boundary:
            parts.append("removal=k")
        return "; ".join(parts)


_AXIS_ALIASES = {"spatial": "spatial", "space": "spatial", "temporal": "temporal", "time": "temporal"}


def parse_model_spec(config_text: str, axis_lengths: dict | None = None) -> ModelSpec:
    """Parse a ``key=value`` model configuration.

    Entries are separated by ``;`` or newlines; ``#`` starts a comment. The
    model kind may be given bare (``age-time``) or as ``kind=age-space``.
    Covariates are ``covariate=name:axis`` with an optional ``:k=K`` that
    switches on decorrelation. ``removal=k`` removes exactly ``k``
    eigenvectors instead of ``k + 1``.

    ``axis_lengths`` (``{"temporal": T, "spatial": S}``) enables the 20% cap
    check on ``k`` at parse time.

    >>> parse_model_spec("age-time; age=rw1; time=rw1; interaction=II").interaction
    'II'
    """
    kind = None
    fields = {}
    covariates = []
    lines = [ln.split("#", 1)[0] for ln in config_text.splitlines()]
    for tok in re.split(r"[;\n]", "\n".join(lines)):
        tok = tok.strip()
        if not tok:
            continue
        if "=" not in tok:
            if kind is not None:
                raise SpecError(f"unexpected token {tok!r}")
            kind = tok.lower()
            continue
        key, value = (s.strip() for s in tok.split("=", 1))
        key = key.lower()
        if key == "covariate":
            covariates.append(_parse_covariate(value))
        elif key == "kind":
            kind = value.lower()
        elif key in fields:
            raise SpecError(f"duplicate key {key!r}")
        else:
            fields[key] = value
    if kind is None:
        raise SpecError("model kind (age-time or age-space) missing")
    if kind not in KINDS:
        raise SpecError(f"unknown model kind {kind!r}")

    age = fields.pop("age", "rw1").lower()
    if kind == "age-time":
        if "space" in fields:
            raise SpecError("age-time models have no space prior")
        second = fields.pop("time", "rw1").lower()
        if second == "icar":
            raise SpecError("icar prior requested for the time axis")
    else:
        if "time" in fields:
            raise SpecError("age-space models have no time prior (axis/prior mismatch)")
        second = fields.pop("space", "icar").lower()
    inter = fields.pop("interaction", "none")
    inter = None if inter.lower() in ("none", "additive", "") else inter.upper()
    removal = fields.pop("removal", "k+1").lower()
    if removal not in ("k", "k+1"):
        raise SpecError("removal must be 'k' or 'k+1'")
    if fields:
        raise SpecError(f"unknown keys: {', '.join(sorted(fields))}")

    spec = ModelSpec(kind, age, second, inter, tuple(covariates), removal == "k+1")
    if axis_lengths:
        for cov in spec.covariates:
            if cov.decorrelate and cov.axis in axis_lengths:
                try:
                    check_cap(cov.k, axis_lengths[cov.axis])
                except ValueError as exc:
                    raise SpecError(str(exc)) from None
    return spec


def _parse_covariate(value: str) -> CovariateSpec:
    parts = [p.strip() for p in value.split(":")]
    if len(parts) < 2 or not parts[0]:
        raise SpecError(f"covariate must be name:axis[:k=K], got {value!r}")
    axis = _AXIS_ALIASES.get(parts[1].lower())
    if axis is None:
        raise SpecError(f"unknown covariate axis {parts[1]!r}")
    k, decor = 0, False
    for extra in parts[2:]:
        m = re.fullmatch(r"k\s*=\s*(-?\d+)", extra)
        if not m:
            raise SpecError(f"bad covariate option {extra!r}")
        k, decor = int(m.group(1)), True
    return CovariateSpec(parts[0], axis, decor, k)


# ---------------------------------------------------------------------------
# constraints


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    rows: np.ndarray
    labels: tuple = ()

    @property
    def rhs(self):
        return np.zeros(self.rows.shape[0])

    def __len__(self):
        return self.rows.shape[0]


def _independent(rows):
    """Greedy removal of linearly dependent rows, keeping the earliest."""
    kept = []
    for r in rows:
        trial = np.array(kept + [r])
        if np.linalg.matrix_rank(trial, tol=1e-9) == len(trial):
            kept.append(r)
    return kept


def block_constraint_rows(role, structure: StructureMatrix, interaction=None, factors=None,
                          components=None):
    """Constraint rows local to one random-effect block.

    Main effects get one sum-to-zero row per connected component (the
    directions confounded with the intercept). Interaction rows follow the
    null space of the Kronecker structure: type I a grand sum, II sums over
    the second axis per age, III sums over age per time/area, IV both.
    """
    n = structure.dim
    if role == "main":
        if components is None:
            components = np.zeros(n, dtype=int)
        return [(components == c).astype(float) for c in np.unique(components)]
    R_second, R_age = factors
    S, A = R_second.dim, R_age.dim
    rows = []
    if interaction == "I":
        rows.append(np.ones(S * A))
    if interaction in ("II", "IV"):
        for v in _null_rows(R_second, components):
            for a in range(A):
                e = np.zeros(A)
                e[a] = 1.0
                rows.append(np.kron(v, e))
    if interaction in ("III", "IV"):
        for v in _null_rows(R_age, None):
            for s in range(S):
                e = np.zeros(S)
                e[s] = 1.0
                rows.append(np.kron(e, v))
    return _independent(rows)


def _null_rows(structure, components):
    """Readable basis of a structure's null space: indicators, then polynomials."""
    n = structure.dim
    if structure.name == "rw2":
        t = np.arange(n, dtype=float)
        return [np.ones(n), t - t.mean()]
    if components is not None and structure.name == "icar":
        return [(components == c).astype(float) for c in np.unique(components)]
    if structure.nullity == 1:
        return [np.ones(n)]
    return list(structure.null_basis.T)


def constraint_set(spec: ModelSpec, dims, components=None) -> ConstraintSet:
    """Constraint rows over the random-effect blocks (phi, gamma/xi, delta).

    ``dims`` is ``(A, T)`` or ``(A, S)``; ``components`` gives connected
    component labels for a spatial graph. Row positions are local to the
    concatenated random-effect blocks (no intercept/covariate columns).
    """
    A, S = dims
    R_age = rw_structure(A, 1)
    if spec.kind == "age-time":
        R_second = rw_structure(S, int(spec.second_prior[-1]))
        components = None
    else:
        if components is None:
            components = np.zeros(S, dtype=int)
        R_second = _icar_from_components(components, S)
    n_total = A + S + (S * A if spec.interaction else 0)
    rows, labels = [], []

    def place(local, offset, label):
        for r in local:
            full = np.zeros(n_total)
            full[offset:offset + r.size] = r
            rows.append(full)
            labels.append(label)

    place(block_constraint_rows("main", R_age), 0, "age")
    comp = components if spec.kind == "age-space" else None
    place(block_constraint_rows("main", R_second, components=comp), A, spec.second_axis)
    if spec.interaction:
        R_int = interaction_structure(spec.interaction, R_second, R_age)
        place(block_constraint_rows("interaction", R_int, spec.interaction, (R_second, R_age), comp),
              A + S, "interaction")
    return ConstraintSet(np.array(rows), tuple(labels))


def _icar_from_components(components, S):
    # a structure with the right null space for constraint purposes only:
    # block-diagonal complete graphs, one per component
    R = np.zeros((S, S))
    for c in np.unique(components):
        idx = np.flatnonzero(components == c)
        m = idx.size
        R[np.ix_(idx, idx)] = m * np.eye(m) - np.ones((m, m))
    if not R.any():
        R = np.eye(S)
    return StructureMatrix.from_matrix(R, name="icar")


# ---------------------------------------------------------------------------
# assembled model


@dataclass(frozen=True, eq=False)
class Block:
    name: str
    start: int
    size: int
    structure: StructureMatrix | None = None
    hyper: int | None = None
    labels: tuple = ()

    @property
    def slice(self):
        return slice(self.start, self.start + self.size)


@dataclass(frozen=True, eq=False)
class Covariate:
    name: str
    raw: np.ndarray
    center: float
    scale: float
    values: np.ndarray
    removed_energy: float = 0.0


@dataclass(frozen=True, eq=False)
class AssembledModel:
    """A latent Gaussian model ready for fitting.

    The latent vector is ``x = (alpha, beta, phi, gamma|xi, delta)``. Cells
    are ordered with age fastest: cell ``(a, j)`` is row ``j * A + a``.
    Constraints ``C x = 0`` are handled through ``basis``, an orthonormal
    basis of the null space of ``C``: feasible ``x = basis @ z``.
    """

    spec: ModelSpec
    age_labels: tuple
    second_labels: tuple
    cell_age: np.ndarray
    cell_second: np.ndarray
    observed: np.ndarray
    exposure: np.ndarray
    missing: np.ndarray
    design: np.ndarray
    blocks: tuple
    constraints: np.ndarray
    constraint_labels: tuple
    basis: np.ndarray
    covariates: tuple = ()
    likelihood: str = "poisson"
    noise_precision: float = 1.0
    fixed_precision: float = FIXED_PRECISION
    hyper_names: tuple = ()
    offset: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_latent(self):
        return self.design.shape[1]

    @property
    def n_cells(self):
        return self.design.shape[0]

    @property
    def n_hyper(self):
        return len(self.hyper_names)

    @property
    def dims(self):
        return (len(self.age_labels), len(self.second_labels))

    def block(self, name) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(f"model has no block {name!r}")

    def has_block(self, name) -> bool:
        return any(b.name == name for b in self.blocks)

    @property
    def log_offset(self):
        if self.offset is not None:
            return self.offset
        return np.log(self.exposure)


def build_model(spec: ModelSpec, observed, exposure, missing=None, graph: AdjacencyGraph | None = None,
                age_labels=None, second_labels=None, covariates=None, likelihood="poisson",
                noise_precision=1.0, offset=None, scale=True,
                fixed_precision=FIXED_PRECISION) -> AssembledModel:
    """Assemble a model from a cell grid laid out as ``(A, J)`` arrays.

    ``observed`` and ``exposure`` are indexed ``[age, second]``; ``missing``
    flags cells kept for prediction but dropped from the likelihood.
    ``covariates`` maps a name to raw per-axis values (length J).
    """
    O = np.asarray(observed, dtype=float)
    N = np.asarray(exposure, dtype=float)
    if O.ndim != 2 or O.shape != N.shape:
        raise ModelDataError("observed and exposure must be matching (A, J) grids")
    A, J = O.shape
    miss = np.zeros_like(O, dtype=bool) if missing is None else np.asarray(missing, dtype=bool)
    miss = miss | np.isnan(O)
    if likelihood == "poisson":
        bad = (~miss) & ~(N > 0)
        if bad.any():
            a, j = np.argwhere(bad)[0]
            raise ModelDataError(f"exposure must be positive on observed cell (age {a}, {j})")
        if np.any(O[~miss] < 0):
            raise ModelDataError("negative counts")
    if np.any(~np.isfinite(N[~miss])):
        raise ModelDataError("non-finite exposure")
    if spec.kind == "age-space":
        if graph is None:
            raise ModelDataError("age-space models need an adjacency graph")
        if graph.n_areas != J:
            raise ModelDataError(f"graph has {graph.n_areas} areas, data has {J}")
    age_labels = tuple(age_labels) if age_labels is not None else tuple(str(a + 1) for a in range(A))
    second_labels = (tuple(second_labels) if second_labels is not None
                     else tuple(str(j + 1) for j in range(J)))

    # structures
    R_age = rw_structure(A, 1)
    components = None
    if spec.kind == "age-time":
        R_second = rw_structure(J, int(spec.second_prior[-1]))
    else:
        R_second = icar_structure(graph)
        components = graph.component_labels
    raw_second = R_second
    if scale:
        R_age, R_second = scale_structure(R_age), scale_structure(R_second)
    R_int = interaction_structure(spec.interaction, R_second, R_age) if spec.interaction else None

    # covariates
    covs = []
    covariates = covariates or {}
    for cs in spec.covariates:
        if cs.name not in covariates:
            raise ModelDataError(f"covariate {cs.name!r} not supplied")
        raw = np.asarray(covariates[cs.name], dtype=float)
        if raw.shape != (J,):
            raise ModelDataError(f"covariate {cs.name!r} needs {J} values, got {raw.size}")
        std = standardize_covariate(raw, cs.axis)
        vals, energy = std.values, 0.0
        if cs.decorrelate:
            try:
                dec = decorrelate_covariate(std, eigendecompose(raw_second), cs.k,
                                            spec.include_boundary)
            except ValueError as exc:
                raise SpecError(str(exc)) from None
            vals, energy = dec.z, dec.removed_energy
        covs.append(Covariate(cs.name, raw, std.center, std.scale, vals, energy))

    # latent layout
    n_cells = A * J
    cell_age = np.tile(np.arange(A), J)
    cell_second = np.repeat(np.arange(J), A)
    blocks = []
    cols = []
    pos = 0

    def add(name, mat, structure=None, hyper=None, labels=()):
        nonlocal pos
        blocks.append(Block(name, pos, mat.shape[1], structure, hyper, tuple(labels)))
        cols.append(mat)
        pos += mat.shape[1]

    add("intercept", np.ones((n_cells, 1)), labels=("alpha",))
    for c in covs:
        add(f"beta:{c.name}", c.values[cell_second][:, None], labels=(c.name,))
    hyper_names = ["age", spec.second_axis]
    add("age", np.eye(A)[cell_age], R_age, 0, age_labels)
    add(spec.second_axis, np.eye(J)[cell_second], R_second, 1, second_labels)
    if R_int is not None:
        hyper_names.append("interaction")
        add("interaction", np.eye(n_cells), R_int, 2,
            [f"{age_labels[a]}|{second_labels[j]}" for a, j in zip(cell_age, cell_second)])
    design = np.hstack(cols)

    # constraints: random-effect rows placed after intercept/covariates
    cset = constraint_set(spec, (A, J), components)
    re_start = blocks[[b.name for b in blocks].index("age")].start
    C = np.zeros((len(cset), pos))
    C[:, re_start:] = cset.rows
    basis = _kernel_basis(blocks, C)

    O_flat = O.T.reshape(-1)
    N_flat = N.T.reshape(-1)
    miss_flat = miss.T.reshape(-1)
    off = None if offset is None else np.asarray(offset, dtype=float).T.reshape(-1)
    return AssembledModel(
        spec=spec,
        age_labels=age_labels,
        second_labels=second_labels,
        cell_age=cell_age,
        cell_second=cell_second,
        observed=np.where(miss_flat, np.nan, O_flat),
        exposure=N_flat,
        missing=miss_flat,
        design=design,
        blocks=tuple(blocks),
        constraints=C,
        constraint_labels=cset.labels,
        basis=basis,
        covariates=tuple(covs),
        likelihood=likelihood,
        noise_precision=float(noise_precision),
        fixed_precision=float(fixed_precision),
        hyper_names=tuple(hyper_names),
        offset=off,
    )


def _kernel_basis(blocks, C):
    """Orthonormal basis of ``{x : C x = 0}``, block diagonal because every
    constraint row touches a single block."""
    n = C.shape[1]
    pieces = []
    for b in blocks:
        local = C[:, b.slice]
        touching = np.abs(local).sum(axis=1) > 0
        if touching.any():
            pieces.append((b, sla.null_space(local[touching])))
        else:
            pieces.append((b, np.eye(b.size)))
    m = sum(p.shape[1] for _, p in pieces)
    B = np.zeros((n, m))
    col = 0
    for b, p in pieces:
        B[b.slice, col:col + p.shape[1]] = p
        col += p.shape[1]
    return B


def assemble_model(spec: ModelSpec, dataset, graph: AdjacencyGraph | None = None, sex=None,
                   **kwargs) -> AssembledModel:
    """Aggregate one sex of a Dataset onto the model grid and build the model.

    Age-time models sum over areas and age-space models over years; cells
    flagged missing contribute neither deaths nor population. A model cell
    is missing only when every contributing cell is.
    """
    from .data import aggregate_grid

    if spec.kind == "age-space" and graph is None:
        raise ModelDataError("age-space models need an adjacency graph")
    O, N, miss, age_labels, second_labels = aggregate_grid(dataset, spec.kind, sex)
    if spec.kind == "age-space":
        if tuple(second_labels) != tuple(graph.labels):
            order = [list(second_labels).index(lab) if lab in second_labels else -1
                     for lab in graph.labels]
            if -1 in order or len(order) != len(second_labels):
                raise ModelDataError("dataset areas do not match graph labels")
            O, N, miss = O[:, order], N[:, order], miss[:, order]
            second_labels = tuple(graph.labels)
    covs = {}
    for cs in spec.covariates:
        covs[cs.name] = dataset.covariate_vector(cs.name, second_labels, sex)
    return build_model(spec, O, N, miss, graph, age_labels, second_labels, covs, **kwargs)


def custom_model(observed, exposure, effects=(), covariates=None, likelihood="poisson",
                 noise_precision=1.0, offset=None, fixed_precision=FIXED_PRECISION,
                 scale=True) -> AssembledModel:
    """Free-form model over a flat list of cells, for small validation problems.

    ``effects`` is a sequence of ``(name, index, structure)``: ``index`` maps
    each cell to a level of the effect and ``structure`` is its
    StructureMatrix. Each effect is constrained orthogonal to the null space
    of its structure. ``covariates`` maps a name to one value per cell.
    """
    O = np.asarray(observed, dtype=float).reshape(-1)
    N = np.asarray(exposure, dtype=float).reshape(-1)
    n = O.size
    miss = np.isnan(O)
    if likelihood == "poisson" and np.any(~(N[~miss] > 0)):
        raise ModelDataError("exposure must be positive on observed cells")
    blocks, cols, rows, pos = [], [], [], 0
    blocks.append(Block("intercept", 0, 1, labels=("alpha",)))
    cols.append(np.ones((n, 1)))
    pos = 1
    covs = []
    for name, vals in (covariates or {}).items():
        v = np.asarray(vals, dtype=float).reshape(-1)
        blocks.append(Block(f"beta:{name}", pos, 1, labels=(name,)))
        cols.append(v[:, None])
        covs.append(Covariate(name, v, 0.0, 1.0, v))
        pos += 1
    for h, (name, index, structure) in enumerate(effects):
        if scale and not structure.scaled and structure.rank < structure.dim:
            structure = scale_structure(structure)
        index = np.asarray(index, dtype=int)
        size = structure.dim
        blocks.append(Block(name, pos, size, structure, h, tuple(str(i) for i in range(size))))
        cols.append(np.eye(size)[index])
        for v in structure.null_basis.T:
            rows.append((pos, v, name))
        pos += size
    C = np.zeros((len(rows), pos))
    for k, (start, r, _) in enumerate(rows):
        C[k, start:start + r.size] = r
    basis = _kernel_basis(blocks, C)
    spec = ModelSpec("age-time", interaction=None)
    return AssembledModel(
        spec=spec,
        age_labels=(),
        second_labels=(),
        cell_age=np.zeros(n, dtype=int),
        cell_second=np.arange(n),
        observed=np.where(miss, np.nan, O),
        exposure=N,
        missing=miss,
        design=np.hstack(cols),
        blocks=tuple(blocks),
        constraints=C,
        constraint_labels=tuple(name for _, _, name in rows),
        basis=basis,
        covariates=tuple(covs),
        likelihood=likelihood,
        noise_precision=float(noise_precision),
        fixed_precision=float(fixed_precision),
        hyper_names=tuple(name for name, _, _ in effects),
        offset=None if offset is None else np.asarray(offset, dtype=float).reshape(-1),
    )
