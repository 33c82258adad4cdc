"""Seeded random instances: models, homogeneous pairs and equivalence pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .abstraction import (
    AbstractionCandidate,
    DeterministicMap,
    check_equivalence,
    check_naturality,
    synthesize_abstraction,
)
from .core import CausalModel, Dag, StochasticChannel, VariableSpec, uniform, validate_model
from .io import abstraction_to_dict, hom_to_dict, model_to_dict, taus_to_dict, write_json
from .syntax import GraphHom

KINDS = ("arbitrary", "homogeneous-pair", "equivalence-pair")


@dataclass(frozen=True)
class GeneratorConfig:
    kind: str = "arbitrary"
    seed: int = 0
    vertices: tuple[int, int] = (2, 6)
    arities: tuple[int, int] = (2, 3)
    edge_prob: float = 0.5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}; choose from {', '.join(KINDS)}")
        lo, hi = self.vertices
        if not 1 <= lo <= hi:
            raise ValueError("vertex range must satisfy 1 <= min <= max")
        lo, hi = self.arities
        if not 1 <= lo <= hi:
            raise ValueError("arity range must satisfy 1 <= min <= max")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ValueError("edge probability must lie in [0, 1]")


def random_channel(rng: np.random.Generator, rows: int, cols: int) -> StochasticChannel:
    return StochasticChannel(rng.dirichlet(np.ones(rows), size=cols).T)


def random_dag(rng: np.random.Generator, names, edge_prob: float) -> Dag:
    names = list(names)
    edges = [(names[i], names[j]) for j in range(len(names)) for i in range(j)
             if rng.random() < edge_prob]
    return Dag.from_edges(names, edges)


def random_model(rng: np.random.Generator, dag: Dag, arities: tuple[int, int]) -> CausalModel:
    variables = {v: VariableSpec.with_arity(v, int(rng.integers(arities[0], arities[1] + 1)))
                 for v in dag.vertices}
    mechs = {}
    for v in dag.vertices:
        n = math.prod(variables[p].arity for p in dag.parents[v])
        mechs[v] = random_channel(rng, variables[v].arity, n)
    return CausalModel(dag, variables, mechs)


def random_surjection(rng: np.random.Generator, n: int, m: int) -> np.ndarray:
    if not 1 <= m <= n:
        raise ValueError(f"no surjection from {n} onto {m} elements")
    table = np.concatenate([np.arange(m), rng.integers(0, m, size=n - m)])
    return rng.permutation(table)


def _map(rng, n, m, name="X'") -> DeterministicMap:
    return DeterministicMap((n,), VariableSpec.with_arity(name, m), random_surjection(rng, n, m))


# --------------------------------------------------------------------------
# single-channel instances


def homogeneous_channel(rng: np.random.Generator, max_x: int = 6, max_y: int = 6,
                        perturbable: bool = False):
    """A causally homogeneous ``f`` built blockwise from a random macro ``g``.

    Block (i, j) is ``g[j, i]`` times a column-stochastic block, so every
    column of that block sums to ``g[j, i]``. With ``perturbable`` the
    instance has a column cell of size >= 2 and at least two row cells.
    Returns ``(f, tau_x, tau_y, g)``.
    """
    while True:
        n, t = int(rng.integers(1, max_x + 1)), int(rng.integers(1, max_y + 1))
        m, s = int(rng.integers(1, n + 1)), int(rng.integers(1, t + 1))
        if not perturbable or (n > m and s >= 2):
            break
    tau_x, tau_y = _map(rng, n, m, "X'"), _map(rng, t, s, "Y'")
    g = random_channel(rng, s, m).entries
    f = np.zeros((t, n))
    for i, cols in enumerate(tau_x.cells()):
        for j, rows in enumerate(tau_y.cells()):
            f[np.ix_(rows, cols)] = g[j, i] * rng.dirichlet(np.ones(len(rows)), size=len(cols)).T
    return StochasticChannel(f), tau_x, tau_y, StochasticChannel(g)


def perturb_homogeneity(rng: np.random.Generator, f: StochasticChannel, tau_x: DeterministicMap,
                        tau_y: DeterministicMap, min_delta: float = 1e-3) -> tuple[StochasticChannel, float]:
    """Move mass ``delta >= min_delta`` across row cells in one column.

    The column stays stochastic, but its block column sums now differ from
    its cell-mates' by ``delta``. Returns the perturbed channel and delta.
    """
    cells = [c for c in tau_x.cells() if len(c) >= 2]
    row_cells = tau_y.cells()
    if not cells or len(row_cells) < 2:
        raise ValueError("instance has no room for a homogeneity violation")
    col = int(rng.choice(cells[int(rng.integers(len(cells)))]))
    e = f.entries.copy()
    mass = [e[list(r), col].sum() for r in row_cells]
    gain = int(np.argmin(mass))
    donors = [r for k, cell in enumerate(row_cells) if k != gain for r in cell]
    donor = max(donors, key=lambda r: e[r, col])
    # the donor holds at least 1/(2t) of the column since row cell `gain` holds at most half
    delta = float(rng.uniform(min_delta, max(min_delta, min(0.05, e[donor, col]))))
    recv = int(rng.choice(row_cells[gain]))
    e[donor, col] -= delta
    e[recv, col] += delta
    return StochasticChannel(e), delta


# --------------------------------------------------------------------------
# model pairs


@dataclass(frozen=True, eq=False)
class Instance:
    micro: CausalModel
    hom: GraphHom | None = None
    maps: dict | None = None
    macro: CausalModel | None = None
    alpha: AbstractionCandidate | None = None


def _letters(k):
    return "abcdefgh"[k]


def homogeneous_pair(rng: np.random.Generator, config: GeneratorConfig) -> Instance:
    """Micro model whose mechanisms see their parents only through the maps.

    Each macro vertex gets a group of one or two micro vertices. Along a macro
    edge, a non-empty subset of the child group reads every member of the
    parent group, and reads it only through the parent group's map, which
    makes every grouped mechanism causally homogeneous.
    """
    lo, hi = config.vertices
    total = int(rng.integers(lo, hi + 1))
    sizes = []
    while sum(sizes) < total:
        sizes.append(1 if total - sum(sizes) == 1 else int(rng.integers(1, 3)))
    macro_names = [f"V{k}" for k in range(len(sizes))]
    hdag = random_dag(rng, macro_names, config.edge_prob)
    groups = {m: [f"v{k}{_letters(j)}" for j in range(sz)] for k, (m, sz) in enumerate(zip(macro_names, sizes))}
    a_lo, a_hi = config.arities
    micro_vars = {v: VariableSpec.with_arity(v, int(rng.integers(a_lo, a_hi + 1)))
                  for m in macro_names for v in groups[m]}
    maps = {}
    for m in macro_names:
        n = math.prod(micro_vars[v].arity for v in groups[m])
        k = int(rng.integers(1, min(n, a_hi) + 1))
        maps[m] = DeterministicMap(tuple(micro_vars[v].arity for v in groups[m]),
                                   VariableSpec.with_arity(m, k), random_surjection(rng, n, k))
    reads = {v: [] for m in macro_names for v in groups[m]}
    for m in macro_names:
        for p in hdag.parents[m]:
            members = groups[m]
            chosen = [v for v in members if rng.random() < 0.7] or [members[int(rng.integers(len(members)))]]
            for v in chosen:
                reads[v].append(p)
    parents = {v: tuple(u for p in reads[v] for u in groups[p]) for v in reads}
    micro_order = [v for m in macro_names for v in groups[m]]
    gdag = Dag(tuple(micro_order), parents)
    mechs = {}
    for v in micro_order:
        seen = reads[v]
        h = random_channel(rng, micro_vars[v].arity, math.prod(maps[p].codomain.arity for p in seen))
        if not seen:
            mechs[v] = h
            continue
        # column for a micro parent state = column of h at the tuple of macro values
        in_ar = tuple(micro_vars[u].arity for u in parents[v])
        digits = np.indices(in_ar).reshape(len(in_ar), -1)
        macro_digits, off = [], 0
        for p in seen:
            w = len(groups[p])
            sub = np.ravel_multi_index(tuple(digits[off:off + w]), maps[p].domain_arities)
            macro_digits.append(maps[p].table[sub])
            off += w
        col = np.ravel_multi_index(tuple(macro_digits), tuple(maps[p].codomain.arity for p in seen))
        mechs[v] = StochasticChannel(h.entries[:, col])
    micro = CausalModel(gdag, micro_vars, mechs)
    hom = GraphHom(gdag, hdag, {v: m for m in macro_names for v in groups[m]})
    macro, alpha = synthesize_abstraction(micro, hom, maps)
    return Instance(micro, hom, maps, macro, alpha)


def equivalence_pair(rng: np.random.Generator, config: GeneratorConfig) -> Instance:
    """Random micro model and its relabeling by random value permutations."""
    lo, hi = config.vertices
    n = int(rng.integers(lo, hi + 1))
    names = [f"v{k}" for k in range(n)]
    micro = random_model(rng, random_dag(rng, names, config.edge_prob), config.arities)
    hdag = Dag(tuple(v.upper() for v in names),
               {v.upper(): tuple(p.upper() for p in micro.dag.parents[v]) for v in names})
    hom = GraphHom(micro.dag, hdag, {v: v.upper() for v in names})
    maps = {}
    for v in names:
        a = micro.arity(v)
        maps[v.upper()] = DeterministicMap((a,), VariableSpec.with_arity(v.upper(), a), rng.permutation(a))
    macro, alpha = synthesize_abstraction(micro, hom, maps)
    return Instance(micro, hom, maps, macro, alpha)


def arbitrary(rng: np.random.Generator, config: GeneratorConfig) -> Instance:
    lo, hi = config.vertices
    n = int(rng.integers(lo, hi + 1))
    dag = random_dag(rng, [f"v{k}" for k in range(n)], config.edge_prob)
    return Instance(random_model(rng, dag, config.arities))


def generate(config: GeneratorConfig) -> Instance:
    """Build one instance and check that it has the property its kind promises."""
    rng = np.random.default_rng(config.seed)
    inst = {"arbitrary": arbitrary, "homogeneous-pair": homogeneous_pair,
            "equivalence-pair": equivalence_pair}[config.kind](rng, config)
    micro = inst.micro
    defaults = {v: {"default": uniform(micro.arity(v))} for v in micro.vertices}
    inst = replace(inst, micro=CausalModel(micro.dag, micro.variables, micro.mechanisms, defaults))
    rep = validate_model(inst.micro)
    if not rep.ok:
        raise AssertionError(f"generated invalid micro model: {rep.issues}")
    if config.kind == "homogeneous-pair":
        if not check_naturality(inst.micro, inst.macro, inst.alpha).passed:
            raise AssertionError("generated homogeneous pair fails naturality")
    elif config.kind == "equivalence-pair":
        if not check_equivalence(inst.micro, inst.macro, inst.alpha).equivalent:
            raise AssertionError("generated equivalence pair is not equivalent")
    return inst


def write_instance(inst: Instance, outdir) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, data):
        path = outdir / name
        write_json(path, data)
        written.append(path)

    put("micro.json", model_to_dict(inst.micro))
    if inst.hom is not None:
        put("macro.json", model_to_dict(inst.macro))
        put("hom.json", hom_to_dict(inst.hom, "micro.json", "macro.json"))
        put("taus.json", {"hom": "hom.json", "taus": taus_to_dict(inst.maps, inst.micro, inst.hom)})
        put("alpha.json", abstraction_to_dict(inst.alpha, "hom.json"))
    return written
