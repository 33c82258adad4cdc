"""String-diagram syntax in normal form: boxes, cut surgery and the functor
induced by a graph homomorphism.

A diagram is the pair (graph, cut set); its boxes are derived from that
pair, so equality of diagrams is equality of their derived boxes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Mapping

from .core import Dag, ValidationReport, _FrozenDict


class UnrepresentableImage(ValueError):
    """A merged group of micro vertices is only partly cut."""

    def __init__(self, macro_vertex, cut, uncut):
        self.macro_vertex = macro_vertex
        self.cut = tuple(cut)
        self.uncut = tuple(uncut)
        super().__init__(
            f"preimage of {macro_vertex} is partially cut "
            f"(cut: {', '.join(self.cut)}; uncut: {', '.join(self.uncut)})")


@dataclass(frozen=True)
class BoxSignature:
    output: str
    inputs: tuple[str, ...] = ()
    intervened: bool = False

    def __str__(self):
        if self.intervened:
            return f"^{self.output}"
        return f"{self.output}({', '.join(self.inputs)})"


@dataclass(frozen=True)
class CutSet:
    """An element of the cut monoid of ``graph``."""

    graph: Dag
    targets: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "targets", frozenset(self.targets))
        unknown = self.targets - set(self.graph.vertices)
        if unknown:
            raise KeyError(f"cut targets {sorted(unknown)} are not vertices of the graph")

    def sorted(self) -> tuple[str, ...]:
        return tuple(v for v in self.graph.vertices if v in self.targets)

    def __str__(self):
        return "{" + ", ".join(self.sorted()) + "}"


def empty_cut(graph: Dag) -> CutSet:
    return CutSet(graph, frozenset())


def all_cuts(graph: Dag) -> Iterator[CutSet]:
    """Every subset of vertices, in lexicographic order of vertex positions."""
    n = len(graph.vertices)
    combos = sorted(
        (c for r in range(n + 1) for c in itertools.combinations(range(n), r)))
    for c in combos:
        yield CutSet(graph, frozenset(graph.vertices[k] for k in c))


def compose_cuts(a: CutSet, b: CutSet) -> CutSet:
    if a.graph != b.graph:
        raise ValueError("cut sets belong to different graphs")
    return CutSet(a.graph, a.targets | b.targets)


@dataclass(frozen=True, eq=False)
class SurgeredDiagram:
    """``graph`` with the boxes of ``cut_set`` replaced by intervened states.

    ``support`` lists the vertices that carry a box at all; it is the whole
    vertex set for ``Syn_G`` and the image of the vertex map for diagrams
    produced by :func:`phi_on_diagram`.
    """

    graph: Dag
    cut_set: frozenset[str] = frozenset()
    support: frozenset[str] | None = None

    def __post_init__(self):
        object.__setattr__(self, "cut_set", frozenset(self.cut_set))
        verts = set(self.graph.vertices)
        support = verts if self.support is None else set(self.support)
        if not self.cut_set <= verts:
            raise KeyError(f"cut vertices {sorted(self.cut_set - verts)} not in graph")
        if not support <= verts:
            raise KeyError(f"support vertices {sorted(support - verts)} not in graph")
        object.__setattr__(self, "support", frozenset(support))

    @property
    def boxes(self) -> Mapping[str, BoxSignature]:
        out = {}
        for v in self.graph.vertices:
            if v not in self.support:
                continue
            if v in self.cut_set:
                out[v] = BoxSignature(v, (), True)
            else:
                out[v] = BoxSignature(v, self.graph.parents[v], False)
        return out

    def __eq__(self, other):
        if not isinstance(other, SurgeredDiagram):
            return NotImplemented
        return self.graph == other.graph and self.boxes == other.boxes

    def __hash__(self):
        return hash((self.graph, tuple(self.boxes.items())))

    def dump(self) -> str:
        return "\n".join(str(b) for b in self.boxes.values())


def syn(graph: Dag) -> SurgeredDiagram:
    """The uncut diagram of ``graph``: one mechanism box per vertex."""
    return SurgeredDiagram(graph)


def apply_cut(diagram: SurgeredDiagram, cut: CutSet) -> SurgeredDiagram:
    if cut.graph != diagram.graph:
        raise ValueError("cut set belongs to a different graph than the diagram")
    return SurgeredDiagram(diagram.graph, diagram.cut_set | cut.targets, diagram.support)


@dataclass(frozen=True)
class GraphHom:
    source: Dag
    target: Dag
    mapping: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mapping", _FrozenDict(self.mapping))

    def __call__(self, v: str) -> str:
        return self.mapping[v]

    def preimage(self, macro: str) -> tuple[str, ...]:
        """Micro vertices mapped to ``macro``, in source vertex order."""
        return tuple(v for v in self.source.vertices if self.mapping.get(v) == macro)

    def image(self) -> frozenset[str]:
        return frozenset(self.mapping[v] for v in self.source.vertices if v in self.mapping)

    def is_surjective(self) -> bool:
        return self.image() == frozenset(self.target.vertices)


def validate_hom(hom: GraphHom) -> ValidationReport:
    issues = []
    tverts = set(hom.target.vertices)
    for v in hom.source.vertices:
        if v not in hom.mapping:
            issues.append(f"vertex {v} is not mapped")
        elif hom.mapping[v] not in tverts:
            issues.append(f"{v} maps to {hom.mapping[v]}, which is not a target vertex")
    for v in set(hom.mapping) - set(hom.source.vertices):
        issues.append(f"map mentions unknown source vertex {v}")
    if issues:
        return ValidationReport(tuple(issues))
    tedges = hom.target.edges
    for p, c in sorted(hom.source.edges):
        img = (hom.mapping[p], hom.mapping[c])
        if img not in tedges:
            issues.append(f"edge {p}->{c} maps to {img[0]}->{img[1]}, which is not a target edge")
    # preimage classes must be independent sets; redundant with the edge rule
    # for a loop-free target but checked on its own so the report says why
    for m in hom.target.vertices:
        cls = set(hom.preimage(m))
        for p, c in sorted(hom.source.edges):
            if p in cls and c in cls:
                issues.append(f"preimage of {m} is not independent: edge {p}->{c}")
    return ValidationReport(tuple(issues))


def preimage_partition(hom: GraphHom) -> dict[str, tuple[str, ...]]:
    return {m: hom.preimage(m) for m in hom.target.vertices}


def phi_star(hom: GraphHom, cut: CutSet) -> CutSet:
    if cut.graph != hom.target:
        raise ValueError("cut set is not over the target graph")
    return CutSet(hom.source, frozenset(v for v in hom.source.vertices if hom.mapping[v] in cut.targets))


def omega(hom: GraphHom, cut: CutSet) -> CutSet:
    if cut.graph != hom.source:
        raise ValueError("cut set is not over the source graph")
    return CutSet(hom.target, frozenset(hom.mapping[v] for v in cut.targets))


def phi_on_diagram(hom: GraphHom, diagram: SurgeredDiagram) -> SurgeredDiagram:
    """Image of a micro diagram under the functor induced by ``hom``.

    Every uncut micro box for Y becomes the macro box of phi(Y), whose inputs
    are all of PA(phi(Y)); boxes with the same image coincide. Raises
    :class:`UnrepresentableImage` if a preimage class is only partly cut.
    """
    if diagram.graph != hom.source:
        raise ValueError("diagram is not over the source graph of the homomorphism")
    present = [v for v in hom.source.vertices if v in diagram.support]
    for m in hom.target.vertices:
        cls = [v for v in present if hom.mapping[v] == m]
        cut = [v for v in cls if v in diagram.cut_set]
        if cut and len(cut) != len(cls):
            raise UnrepresentableImage(m, cut, [v for v in cls if v not in diagram.cut_set])
    return SurgeredDiagram(
        hom.target,
        frozenset(hom.mapping[v] for v in diagram.cut_set if v in diagram.support),
        frozenset(hom.mapping[v] for v in present),
    )


def check_lemma3(hom: GraphHom, macro_cut: CutSet) -> bool:
    lhs = apply_cut(phi_on_diagram(hom, syn(hom.source)), macro_cut)
    rhs = phi_on_diagram(hom, apply_cut(syn(hom.source), phi_star(hom, macro_cut)))
    return lhs == rhs


def enumerate_homs(source: Dag, target: Dag, surjective: bool = False) -> Iterator[GraphHom]:
    """All edge-preserving vertex maps, by backtracking in topological order."""
    order = source.topological_order()
    tedges = target.edges
    tverts = target.vertices
    assign: dict[str, str] = {}

    def extend(k):
        if k == len(order):
            if not surjective or set(assign.values()) == set(tverts):
                yield GraphHom(source, target, dict(assign))
            return
        v = order[k]
        for m in tverts:
            if all((assign[p], m) in tedges for p in source.parents[v]):
                assign[v] = m
                yield from extend(k + 1)
                del assign[v]

    yield from extend(0)
