"""Natural transformations between causal models and their deterministic synthesis.

The components of an abstraction are indexed by macro vertex: the component
for X' maps the product of the micro vertices in its preimage (in micro
vertex order) to X'. An empty preimage gives a one-column component, i.e. a
prior on X'.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    DEFAULT_STATE_CAP,
    DEFAULT_TOL,
    ArityMismatch,
    CausalModel,
    Distribution,
    StochasticChannel,
    VariableSpec,
    _FrozenDict,
    apply_intervention,
    compose_channels,
    joint_tensor,
    max_deviation,
    tensor_all,
)
from .syntax import GraphHom, all_cuts, phi_star, validate_hom


class PreconditionError(ValueError):
    def __init__(self, message, vertex=None):
        self.vertex = vertex
        super().__init__(message)


class NotSurjective(ValueError):
    pass


class MissingIntervention(KeyError):
    pass


# --------------------------------------------------------------------------
# deterministic maps


@dataclass(frozen=True, eq=False)
class DeterministicMap:
    """A value-level function from a product of micro variables onto a macro variable.

    ``table[k]`` is the codomain index of the k-th domain state, with the
    domain flattened mixed-radix (first factor most significant).
    """

    domain_arities: tuple[int, ...]
    codomain: VariableSpec
    table: np.ndarray

    def __post_init__(self):
        dom = tuple(int(a) for a in self.domain_arities)
        t = np.array(self.table, dtype=int).reshape(-1)
        if t.size != math.prod(dom):
            raise ArityMismatch(f"table has {t.size} entries, domain has {math.prod(dom)} states")
        if t.size and (t.min() < 0 or t.max() >= self.codomain.arity):
            raise ValueError(f"table values must index {self.codomain.name}'s {self.codomain.arity} values")
        t.setflags(write=False)
        object.__setattr__(self, "domain_arities", dom)
        object.__setattr__(self, "table", t)

    @property
    def domain_size(self) -> int:
        return self.table.size

    def cells(self) -> list[tuple[int, ...]]:
        """Preimage of each codomain value, in codomain order, members ascending."""
        return [tuple(int(k) for k in np.flatnonzero(self.table == j))
                for j in range(self.codomain.arity)]

    def is_surjective(self) -> bool:
        return all(self.cells())

    def is_bijective(self) -> bool:
        return self.is_surjective() and self.domain_size == self.codomain.arity

    def channel(self) -> StochasticChannel:
        return StochasticChannel.from_function(self.table, self.codomain.arity)

    def __call__(self, index: int) -> int:
        return int(self.table[index])


def identity_map(var: VariableSpec) -> DeterministicMap:
    return DeterministicMap((var.arity,), var, np.arange(var.arity))


def tensor_maps(maps: Sequence[DeterministicMap]) -> DeterministicMap:
    """Product map; an empty sequence gives the map from the point onto the point."""
    dom = tuple(a for m in maps for a in m.domain_arities)
    codom = tuple(m.codomain.arity for m in maps)
    tables = [m.table for m in maps]
    if tables:
        grids = np.meshgrid(*tables, indexing="ij")
        flat = np.ravel_multi_index(tuple(g.reshape(-1) for g in grids), codom)
    else:
        flat = np.zeros(1, dtype=int)
    labels = [",".join(p) for p in _product_labels([m.codomain.values for m in maps])]
    name = "*".join(m.codomain.name for m in maps) or "1"
    return DeterministicMap(dom, VariableSpec(name, tuple(labels)), flat)


def _product_labels(value_lists):
    out = [()]
    for vals in value_lists:
        out = [o + (v,) for o in out for v in vals]
    return out


# --------------------------------------------------------------------------
# abstraction candidates


@dataclass(frozen=True, eq=False)
class AbstractionCandidate:
    """The map on graphs plus one channel per macro vertex.

    ``micro_components`` optionally supplies one channel per micro vertex, as
    used by the edgewise naturality check when several micro variables merge.
    """

    hom: GraphHom
    components: Mapping[str, StochasticChannel]
    micro_components: Mapping[str, StochasticChannel] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "components", _FrozenDict(self.components))
        object.__setattr__(self, "micro_components", _FrozenDict(self.micro_components))

    def replace(self, macro_vertex: str, channel: StochasticChannel) -> "AbstractionCandidate":
        comps = dict(self.components)
        comps[macro_vertex] = channel
        return AbstractionCandidate(self.hom, comps, self.micro_components)


def preimage_arities(model: CausalModel, hom: GraphHom, macro_vertex: str) -> tuple[int, ...]:
    return model.arities(hom.preimage(macro_vertex))


def alpha_from_tau(
    hom: GraphHom,
    maps: Mapping[str, DeterministicMap],
    micro: CausalModel | None = None,
) -> AbstractionCandidate:
    """0/1 components with a one at (i, j) iff tau sends micro state j to macro value i."""
    comps = {}
    for m in hom.target.vertices:
        if m not in maps:
            raise PreconditionError(f"no map given for macro vertex {m}", m)
        tau = maps[m]
        if micro is not None and tau.domain_arities != preimage_arities(micro, hom, m):
            raise ArityMismatch(
                f"map for {m} has domain {tau.domain_arities}, "
                f"preimage {hom.preimage(m)} has arities {preimage_arities(micro, hom, m)}")
        if not tau.is_surjective():
            missing = [tau.codomain.values[j] for j, c in enumerate(tau.cells()) if not c]
            raise NotSurjective(f"map for {m} misses values {missing}")
        comps[m] = tau.channel()
    return AbstractionCandidate(hom, comps)


def _check_candidate(micro: CausalModel, macro: CausalModel, alpha: AbstractionCandidate):
    hom = alpha.hom
    if micro.dag != hom.source:
        raise PreconditionError("micro model graph differs from the homomorphism's source")
    if macro.dag != hom.target:
        raise PreconditionError("macro model graph differs from the homomorphism's target")
    for m in hom.target.vertices:
        c = alpha.components.get(m)
        if c is None:
            raise PreconditionError(f"no component for macro vertex {m}", m)
        want = (macro.arity(m), math.prod(preimage_arities(micro, hom, m)))
        if c.entries.shape != want:
            raise ArityMismatch(f"component {m} has shape {c.entries.shape}, expected {want}")


# --------------------------------------------------------------------------
# grouped mechanisms


def group_inputs(hom: GraphHom, macro_vertex: str) -> tuple[str, ...]:
    """Micro vertices feeding a merged group: preimages of the macro parents, concatenated."""
    return tuple(v for p in hom.target.parents[macro_vertex] for v in hom.preimage(p))


def group_channel(model: CausalModel, hom: GraphHom, macro_vertex: str) -> StochasticChannel:
    """Joint mechanism of the preimage group of ``macro_vertex``.

    The domain is the product over the macro parents (in target parent
    order) of their preimage products; the codomain is the product of the
    group. Each member reads only its own parents from the input.
    """
    group = hom.preimage(macro_vertex)
    inputs = group_inputs(hom, macro_vertex)
    in_ar = model.arities(inputs)
    n_in = math.prod(in_ar)
    digits = np.indices(in_ar).reshape(len(in_ar), -1) if in_ar else np.zeros((0, 1), dtype=int)
    pos = {v: k for k, v in enumerate(inputs)}
    out = np.ones((1, n_in))
    for s in group:
        pars = model.dag.parents[s]
        missing = [p for p in pars if p not in pos]
        if missing:
            raise PreconditionError(
                f"parents {missing} of {s} lie outside the preimages of "
                f"{macro_vertex}'s macro parents; the homomorphism is invalid", s)
        if pars:
            col = np.ravel_multi_index(tuple(digits[pos[p]] for p in pars), model.arities(pars))
        else:
            col = np.zeros(n_in, dtype=int)
        cols = model.mechanisms[s].entries[:, col]
        out = (out[:, None, :] * cols[None, :, :]).reshape(-1, n_in)
    return StochasticChannel(out)


# --------------------------------------------------------------------------
# naturality


@dataclass(frozen=True, eq=False)
class NaturalityCheck:
    label: str
    left: StochasticChannel
    right: StochasticChannel
    deviation: float


@dataclass(frozen=True, eq=False)
class NaturalityReport:
    mode: str
    checks: tuple[NaturalityCheck, ...]
    tol: float

    @property
    def max_deviation(self) -> float:
        return max((c.deviation for c in self.checks), default=0.0)

    @property
    def passed(self) -> bool:
        return all(c.deviation <= self.tol for c in self.checks)

    def failing(self) -> list[NaturalityCheck]:
        return [c for c in self.checks if c.deviation > self.tol]


def check_naturality(
    micro: CausalModel,
    macro: CausalModel,
    alpha: AbstractionCandidate,
    mode: str = "grouped",
    tol: float = DEFAULT_TOL,
) -> NaturalityReport:
    """Check the commuting squares of a candidate abstraction.

    ``grouped`` compares, for each macro vertex, alpha after the group
    mechanism against the macro mechanism after the tensor of alpha over the
    macro parents. ``edgewise`` compares one square per micro mechanism box,
    using per-micro-vertex components.
    """
    if mode == "grouped":
        _check_candidate(micro, macro, alpha)
        return NaturalityReport(mode, tuple(_grouped_checks(micro, macro, alpha)), tol)
    if mode == "edgewise":
        return NaturalityReport(mode, tuple(_edgewise_checks(micro, macro, alpha)), tol)
    raise ValueError(f"unknown naturality mode {mode!r}")


def _grouped_checks(micro, macro, alpha):
    hom = alpha.hom
    for m in hom.target.vertices:
        left = compose_channels(alpha.components[m], group_channel(micro, hom, m))
        par = tensor_all(alpha.components[p] for p in hom.target.parents[m])
        right = compose_channels(macro.mechanisms[m], par)
        yield NaturalityCheck(m, left, right, max_deviation(left, right))


def _micro_component(alpha: AbstractionCandidate, v: str) -> StochasticChannel:
    if v in alpha.micro_components:
        return alpha.micro_components[v]
    m = alpha.hom.mapping[v]
    if len(alpha.hom.preimage(m)) == 1 and m in alpha.components:
        return alpha.components[m]
    raise PreconditionError(
        f"edgewise mode needs a per-micro component for {v} (its macro image {m} merges several vertices)", v)


def _edgewise_checks(micro, macro, alpha):
    hom = alpha.hom
    if micro.dag != hom.source or macro.dag != hom.target:
        raise PreconditionError("model graphs differ from the homomorphism's graphs")
    for y in micro.vertices:
        my = hom.mapping[y]
        pars = micro.dag.parents[y]
        images = [hom.mapping[p] for p in pars]
        mpars = macro.dag.parents[my]
        if len(set(images)) != len(images) or set(images) != set(mpars):
            raise PreconditionError(
                f"edgewise mode needs PA({my}) = phi(PA({y})) with distinct images; "
                f"got {sorted(images)} vs {sorted(mpars)}", y)
        a_y = _micro_component(alpha, y)
        left = compose_channels(a_y, micro.mechanisms[y])
        # macro mechanism with its parent axes reordered to follow y's parents
        g = macro.mechanisms[my].entries.reshape((macro.arity(my),) + macro.arities(mpars))
        order = [1 + mpars.index(m) for m in images]
        g = g.transpose([0] + order).reshape(macro.arity(my), -1)
        right = compose_channels(StochasticChannel(g), tensor_all(_micro_component(alpha, p) for p in pars))
        label = f"{y}({', '.join(pars)})" if pars else y
        yield NaturalityCheck(label, left, right, max_deviation(left, right))


@dataclass(frozen=True, eq=False)
class EquivalenceReport:
    naturality: NaturalityReport
    non_permutations: tuple[str, ...]

    @property
    def equivalent(self) -> bool:
        return self.naturality.passed and not self.non_permutations


def check_equivalence(
    micro: CausalModel,
    macro: CausalModel,
    alpha: AbstractionCandidate,
    tol: float = DEFAULT_TOL,
    mode: str = "grouped",
) -> EquivalenceReport:
    nat = check_naturality(micro, macro, alpha, mode, tol)
    comps = dict(alpha.components)
    if mode == "edgewise":
        comps = {v: _micro_component(alpha, v) for v in alpha.hom.source.vertices}
    bad = tuple(k for k, c in comps.items() if not c.is_permutation(tol))
    return EquivalenceReport(nat, bad)


# --------------------------------------------------------------------------
# interventions


def pushforward(joint: np.ndarray, micro: CausalModel, alpha: AbstractionCandidate) -> np.ndarray:
    """Push a micro joint (one axis per micro vertex) through the tensor of components.

    Returns one axis per macro vertex, in target vertex order.
    """
    hom = alpha.hom
    groups = [hom.preimage(m) for m in hom.target.vertices]
    pos = {v: k for k, v in enumerate(micro.vertices)}
    t = joint.transpose([pos[v] for g in groups for v in g])
    t = t.reshape([math.prod(micro.arities(g)) for g in groups])
    for k, m in enumerate(hom.target.vertices):
        t = np.moveaxis(np.tensordot(alpha.components[m].entries, t, axes=([1], [k])), 0, k)
    return t


@dataclass(frozen=True)
class CutOutcome:
    macro_cut: tuple[str, ...]
    micro_cut: tuple[str, ...]
    deviation: float
    passed: bool


@dataclass(frozen=True)
class InterventionReport:
    outcomes: tuple[CutOutcome, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.outcomes)

    @property
    def max_deviation(self) -> float:
        return max((o.deviation for o in self.outcomes), default=0.0)


def macro_intervention(
    micro: CausalModel,
    alpha: AbstractionCandidate,
    macro_vertex: str,
    micro_interventions: Mapping[str, Distribution],
) -> Distribution:
    """Component applied to the product of the group's micro intervened states."""
    w = np.ones(1)
    for v in alpha.hom.preimage(macro_vertex):
        if v not in micro_interventions:
            raise MissingIntervention(f"no intervention distribution for micro vertex {v}")
        w = np.kron(w, micro_interventions[v].weights)
    return Distribution(alpha.components[macro_vertex].entries @ w)


def check_intervention_consistency(
    micro: CausalModel,
    macro: CausalModel,
    alpha: AbstractionCandidate,
    micro_interventions: Mapping[str, Distribution],
    tol: float = 1e-7,
    singletons_only: bool = False,
    state_cap: int | None = DEFAULT_STATE_CAP,
) -> InterventionReport:
    """Compare micro-then-abstract against abstract-then-intervene for every macro cut set."""
    _check_candidate(micro, macro, alpha)
    hom = alpha.hom
    cuts = list(all_cuts(hom.target))
    if singletons_only:
        cuts = [c for c in cuts if len(c.targets) <= 1]
    needed = {v for c in cuts for v in phi_star(hom, c).targets}
    missing = sorted(needed - set(micro_interventions), key=micro.vertices.index)
    if missing:
        raise MissingIntervention(f"no intervention distribution for micro vertices {missing}")
    outcomes = []
    for cut in cuts:
        micro_cut = phi_star(hom, cut)
        lo = apply_intervention(micro, {v: micro_interventions[v] for v in micro_cut.sorted()})
        left = pushforward(joint_tensor(lo, state_cap), micro, alpha)
        hi = apply_intervention(macro, {
            m: macro_intervention(micro, alpha, m, micro_interventions) for m in cut.sorted()})
        right = joint_tensor(hi, state_cap)
        dev = float(np.max(np.abs(left - right)))
        outcomes.append(CutOutcome(cut.sorted(), micro_cut.sorted(), dev, dev <= tol))
    return InterventionReport(tuple(outcomes), tol)


# --------------------------------------------------------------------------
# causal homogeneity


@dataclass(frozen=True, eq=False)
class BlockPartition:
    """``f`` with rows and columns regrouped by cell.

    ``blocks[(i, j)]`` is the block for the i-th column cell and j-th row
    cell; ``col_perm``/``row_perm`` list original indices in regrouped order.
    """

    blocks: Mapping[tuple[int, int], np.ndarray]
    col_cells: tuple[tuple[int, ...], ...]
    row_cells: tuple[tuple[int, ...], ...]
    col_perm: tuple[int, ...]
    row_perm: tuple[int, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_cells), len(self.col_cells)


def _require_surjective(tau: DeterministicMap, role: str):
    if not tau.is_surjective():
        raise NotSurjective(f"{role} map onto {tau.codomain.name} is not surjective")


def partition_blocks(f: StochasticChannel, tau_x: DeterministicMap, tau_y: DeterministicMap) -> BlockPartition:
    if f.domain_arity != tau_x.domain_size:
        raise ArityMismatch(f"f has {f.domain_arity} columns, cause map has {tau_x.domain_size} states")
    if f.codomain_arity != tau_y.domain_size:
        raise ArityMismatch(f"f has {f.codomain_arity} rows, effect map has {tau_y.domain_size} states")
    _require_surjective(tau_x, "cause")
    _require_surjective(tau_y, "effect")
    cc, rc = tuple(tau_x.cells()), tuple(tau_y.cells())
    blocks = {(i, j): f.entries[np.ix_(rows, cols)]
              for i, cols in enumerate(cc) for j, rows in enumerate(rc)}
    return BlockPartition(
        blocks, cc, rc,
        tuple(k for c in cc for k in c),
        tuple(k for c in rc for k in c),
    )


@dataclass(frozen=True)
class BlockFailure:
    col_cell: int
    row_cell: int
    columns: tuple[int, ...]
    deviation: float


@dataclass(frozen=True, eq=False)
class HomogeneityReport:
    """Column sums per block and their per-block constants.

    ``constants[j, i]`` is the constant of the block in row cell j and column
    cell i, so it is laid out like the macro mechanism it would produce.
    """

    partition: BlockPartition
    constants: np.ndarray
    worst_deviation: float
    failures: tuple[BlockFailure, ...]
    tol: float

    @property
    def passed(self) -> bool:
        return not self.failures


def check_homogeneity(
    f: StochasticChannel,
    tau_x: DeterministicMap,
    tau_y: DeterministicMap,
    tol: float = DEFAULT_TOL,
) -> HomogeneityReport:
    part = partition_blocks(f, tau_x, tau_y)
    s, m = part.shape
    consts = np.zeros((s, m))
    worst = 0.0
    failures = []
    for (i, j), blk in part.blocks.items():
        sums = blk.sum(axis=0)
        c = float(sums.mean())
        consts[j, i] = c
        dev = np.abs(sums - c)
        worst = max(worst, float(dev.max()))
        bad = np.flatnonzero(dev > tol)
        if bad.size:
            cols = part.col_cells[i]
            failures.append(BlockFailure(i, j, tuple(cols[k] for k in bad), float(dev.max())))
    failures.sort(key=lambda b: (b.col_cell, b.row_cell))
    return HomogeneityReport(part, consts, worst, tuple(failures), tol)


class NotHomogeneous(ValueError):
    """Raised by synthesis; ``failures`` maps the offending macro vertex (or None) to its report."""

    def __init__(self, failures: Mapping[str | None, HomogeneityReport]):
        self.failures = dict(failures)
        names = [k for k in self.failures if k is not None]
        where = f" at {', '.join(names)}" if names else ""
        super().__init__(f"mechanism is not causally homogeneous{where}")

    @property
    def report(self) -> HomogeneityReport:
        return next(iter(self.failures.values()))


def synthesize_macro_mechanism(
    f: StochasticChannel,
    tau_x: DeterministicMap,
    tau_y: DeterministicMap,
    tol: float = DEFAULT_TOL,
) -> StochasticChannel:
    """Macro mechanism whose (j, i) entry is the common column sum of block (i, j)."""
    rep = check_homogeneity(f, tau_x, tau_y, tol)
    if not rep.passed:
        raise NotHomogeneous({None: rep})
    return StochasticChannel(rep.constants)


def synthesize_abstraction(
    micro: CausalModel,
    hom: GraphHom,
    maps: Mapping[str, DeterministicMap],
    tol: float = DEFAULT_TOL,
) -> tuple[CausalModel, AbstractionCandidate]:
    """Build the macro model induced by deterministic maps, one mechanism at a time.

    Raises :class:`NotHomogeneous` naming every macro vertex whose grouped
    mechanism fails the block column-sum condition.
    """
    rep = validate_hom(hom)
    if not rep.ok:
        raise PreconditionError("invalid homomorphism: " + "; ".join(rep.issues))
    if micro.dag != hom.source:
        raise PreconditionError("micro model graph differs from the homomorphism's source")
    alpha = alpha_from_tau(hom, maps, micro)
    for m in hom.target.vertices:
        if maps[m].codomain.name != m:
            raise PreconditionError(f"map for {m} targets variable {maps[m].codomain.name}", m)
        reached = {hom.mapping[p] for s in hom.preimage(m) for p in micro.dag.parents[s]}
        if reached != set(hom.target.parents[m]):
            extra = sorted(set(hom.target.parents[m]) - reached)
            raise PreconditionError(
                f"macro vertex {m} has parents {extra} not reached by any micro edge", m)
    mechs, failures = {}, {}
    for m in hom.target.vertices:
        f = group_channel(micro, hom, m)
        tau_x = tensor_maps([maps[p] for p in hom.target.parents[m]])
        rep = check_homogeneity(f, tau_x, maps[m], tol)
        if rep.passed:
            mechs[m] = StochasticChannel(rep.constants)
        else:
            failures[m] = rep
    if failures:
        raise NotHomogeneous(failures)
    macro = CausalModel(hom.target, {m: maps[m].codomain for m in hom.target.vertices}, mechs)
    return macro, alpha
