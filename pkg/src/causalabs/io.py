"""JSON file formats for models, homomorphisms and abstraction candidates."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .abstraction import AbstractionCandidate, DeterministicMap
from .core import (
    CausalModel,
    CycleError,
    Dag,
    Distribution,
    StochasticChannel,
    VariableSpec,
    point_mass,
)
from .syntax import GraphHom


class SchemaError(ValueError):
    """Malformed input; the message starts with the offending location."""

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}")


def read_json(path) -> Any:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise SchemaError(str(path), exc.strerror or str(exc)) from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}:{exc.colno}", exc.msg) from None


def write_json(path, data) -> None:
    Path(path).write_text(dumps(data), encoding="utf-8")


def dumps(data) -> str:
    return json.dumps(data, indent=2, ensure_ascii=False) + "\n"


def _expect(cond, where, message):
    if not cond:
        raise SchemaError(where, message)


def _grid(rows, where) -> np.ndarray:
    try:
        arr = np.array(rows, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(where, "expected a rectangular array of numbers") from None
    _expect(arr.ndim == 2 and arr.size > 0, where, f"expected a non-empty 2-d array, got shape {arr.shape}")
    return arr


def _weights(vals, where) -> np.ndarray:
    try:
        arr = np.array(vals, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(where, "expected a list of numbers") from None
    _expect(arr.ndim == 1 and arr.size > 0, where, "expected a non-empty list of numbers")
    return arr


# --------------------------------------------------------------------------
# models


def model_from_dict(data: Mapping, where: str = "model", require_mechanisms: bool = True) -> CausalModel:
    """Parse a model document; with ``require_mechanisms=False`` it may be a bare schema."""
    _expect(isinstance(data, dict), where, "expected a JSON object")
    _expect(isinstance(data.get("variables"), list), where, "missing 'variables' array")
    variables, declared_parents = {}, {}
    for k, entry in enumerate(data["variables"]):
        loc = f"{where}: variables[{k}]"
        _expect(isinstance(entry, dict) and isinstance(entry.get("name"), str), loc, "needs a string 'name'")
        _expect(isinstance(entry.get("values"), list), loc, "needs a 'values' array")
        name = entry["name"]
        _expect(name not in variables, loc, f"duplicate variable {name!r}")
        try:
            variables[name] = VariableSpec(name, tuple(entry["values"]))
        except ValueError as exc:
            raise SchemaError(loc, str(exc)) from None
        if "parents" in entry:
            _expect(isinstance(entry["parents"], list), loc, "'parents' must be an array")
            declared_parents[name] = tuple(entry["parents"])
    edges = data.get("edges", [])
    _expect(isinstance(edges, list), where, "'edges' must be an array")
    parents = {v: [] for v in variables}
    for k, e in enumerate(edges):
        loc = f"{where}: edges[{k}]"
        _expect(isinstance(e, list) and len(e) == 2, loc, "expected [parent, child]")
        p, c = e
        _expect(p in variables and c in variables, loc, f"unknown vertex in edge {p}->{c}")
        if p not in parents[c]:
            parents[c].append(p)
    for v, declared in declared_parents.items():
        unknown = [p for p in declared if p not in variables]
        _expect(not unknown, f"{where}: variables[{v}]", f"unknown parents {unknown}")
        # either source alone defines the graph; both must agree
        if "edges" in data:
            _expect(sorted(declared) == sorted(parents[v]), f"{where}: variables[{v}]",
                    f"'parents' {list(declared)} disagree with edges {parents[v]}")
        parents[v] = list(declared)
    try:
        dag = Dag(tuple(variables), {v: tuple(ps) for v, ps in parents.items()})
    except CycleError as exc:
        raise SchemaError(f"{where}: edges", str(exc)) from None
    mechs = {}
    raw = data.get("mechanisms")
    if raw is None:
        _expect(not require_mechanisms, where, "missing 'mechanisms' object")
        raw = {}
    _expect(isinstance(raw, dict), where, "'mechanisms' must be an object")
    for v, rows in raw.items():
        _expect(v in variables, f"{where}: mechanisms", f"unknown vertex {v!r}")
        mechs[v] = StochasticChannel(_grid(rows, f"{where}: mechanisms.{v}"))
    if require_mechanisms:
        missing = [v for v in variables if v not in mechs]
        _expect(not missing, f"{where}: mechanisms", f"no mechanism for {missing}")
    presets = {}
    for v, named in (data.get("presets") or {}).items():
        _expect(v in variables, f"{where}: presets", f"unknown vertex {v!r}")
        _expect(isinstance(named, dict), f"{where}: presets.{v}", "expected an object of named distributions")
        presets[v] = {n: Distribution(_weights(w, f"{where}: presets.{v}.{n}")) for n, w in named.items()}
    return CausalModel(dag, variables, mechs, presets)


def model_to_dict(model: CausalModel) -> dict:
    out = {
        "variables": [
            {"name": v, "values": list(model.variables[v].values), "parents": list(model.dag.parents[v])}
            for v in model.vertices
        ],
        "edges": [[p, v] for v in model.vertices for p in model.dag.parents[v]],
        "mechanisms": {v: model.mechanisms[v].entries.tolist() for v in model.vertices if v in model.mechanisms},
    }
    if model.presets:
        out["presets"] = {v: {n: d.weights.tolist() for n, d in named.items()}
                          for v, named in model.presets.items()}
    return out


def load_model(path, require_mechanisms: bool = True) -> CausalModel:
    return model_from_dict(read_json(path), str(path), require_mechanisms)


def save_model(model: CausalModel, path) -> None:
    write_json(path, model_to_dict(model))


# --------------------------------------------------------------------------
# homomorphisms


@dataclass(frozen=True, eq=False)
class HomFile:
    hom: GraphHom
    source: CausalModel | None
    target: CausalModel | None


def hom_from_dict(data: Mapping, source: CausalModel, target: CausalModel, where: str = "hom") -> GraphHom:
    _expect(isinstance(data, dict) and isinstance(data.get("map"), dict), where, "missing 'map' object")
    mapping = {}
    for k, v in data["map"].items():
        _expect(isinstance(v, str), f"{where}: map.{k}", "macro vertex must be a string")
        mapping[k] = v
    return GraphHom(source.dag, target.dag, mapping)


def hom_to_dict(hom: GraphHom, source_ref: str, target_ref: str) -> dict:
    return {"source": source_ref, "target": target_ref,
            "map": {v: hom.mapping[v] for v in hom.source.vertices}}


def load_hom(path, source: CausalModel | None = None, target: CausalModel | None = None,
             require_target_mechanisms: bool = True) -> HomFile:
    """Load a homomorphism; model refs are resolved relative to the hom file
    unless the models are passed in."""
    path = Path(path)
    data = read_json(path)
    _expect(isinstance(data, dict), str(path), "expected a JSON object")
    if source is None:
        _expect(isinstance(data.get("source"), str), str(path), "missing 'source' model ref")
        source = load_model(path.parent / data["source"])
    if target is None:
        _expect(isinstance(data.get("target"), str), str(path), "missing 'target' model ref")
        target = load_model(path.parent / data["target"], require_target_mechanisms)
    return HomFile(hom_from_dict(data, source, target, str(path)), source, target)


# --------------------------------------------------------------------------
# abstraction candidates


def parse_value_tuple(key: str) -> tuple[str, ...]:
    """``"l1,h2"`` or ``"(l1, h2)"`` -> ``("l1", "h2")``; ``""`` is the empty tuple."""
    key = key.strip()
    if key.startswith("(") and key.endswith(")"):
        key = key[1:-1]
    if not key.strip():
        return ()
    return tuple(p.strip() for p in key.split(","))


def maps_from_taus(taus: Mapping, micro: CausalModel, hom: GraphHom,
                   macro_vars: Mapping[str, VariableSpec], where: str = "taus") -> dict[str, DeterministicMap]:
    out = {}
    for m in hom.target.vertices:
        _expect(m in taus, where, f"no map for macro vertex {m!r}")
        table = taus[m]
        loc = f"{where}.{m}"
        _expect(isinstance(table, dict), loc, "expected an object from value tuples to macro values")
        pre = hom.preimage(m)
        specs = [micro.variables[v] for v in pre]
        arities = tuple(s.arity for s in specs)
        codom = macro_vars[m]
        flat = np.full(math.prod(arities), -1, dtype=int)
        for key, val in table.items():
            labels = parse_value_tuple(key)
            _expect(len(labels) == len(specs), f"{loc}[{key!r}]",
                    f"expected {len(specs)} values for {', '.join(pre) or 'the empty preimage'}")
            try:
                digits = [s.index(lab) for s, lab in zip(specs, labels)]
                target = codom.index(str(val))
            except KeyError as exc:
                raise SchemaError(f"{loc}[{key!r}]", exc.args[0]) from None
            idx = int(np.ravel_multi_index(digits, arities)) if arities else 0
            _expect(flat[idx] < 0, f"{loc}[{key!r}]", "duplicate entry")
            flat[idx] = target
        missing = np.flatnonzero(flat < 0)
        _expect(missing.size == 0, loc, f"{missing.size} micro state(s) unmapped; the map must be total")
        out[m] = DeterministicMap(arities, codom, flat)
    return out


def taus_to_dict(maps: Mapping[str, DeterministicMap], micro: CausalModel, hom: GraphHom) -> dict:
    out = {}
    for m, tau in maps.items():
        specs = [micro.variables[v] for v in hom.preimage(m)]
        arities = tuple(s.arity for s in specs)
        entries = {}
        for k in range(tau.domain_size):
            digits = np.unravel_index(k, arities) if arities else ()
            key = ",".join(s.values[d] for s, d in zip(specs, digits))
            entries[key] = tau.codomain.values[tau(k)]
        out[m] = entries
    return out


def load_abstraction(path, micro: CausalModel, macro_vars: Mapping[str, VariableSpec],
                     hom: GraphHom) -> tuple[AbstractionCandidate, dict[str, DeterministicMap] | None]:
    """Read explicit components or deterministic maps. Returns the candidate and
    the maps (None when components were given directly)."""
    from .abstraction import alpha_from_tau

    where = str(path)
    data = read_json(path)
    _expect(isinstance(data, dict), where, "expected a JSON object")
    if "taus" in data:
        maps = maps_from_taus(data["taus"], micro, hom, macro_vars, f"{where}: taus")
        return alpha_from_tau(hom, maps, micro), maps
    _expect(isinstance(data.get("components"), dict), where, "needs 'components' or 'taus'")
    comps = {m: StochasticChannel(_grid(rows, f"{where}: components.{m}"))
             for m, rows in data["components"].items()}
    micro_comps = {v: StochasticChannel(_grid(rows, f"{where}: micro_components.{v}"))
                   for v, rows in (data.get("micro_components") or {}).items()}
    return AbstractionCandidate(hom, comps, micro_comps), None


def abstraction_to_dict(alpha: AbstractionCandidate, hom_ref: str) -> dict:
    out = {"hom": hom_ref, "components": {m: c.entries.tolist() for m, c in alpha.components.items()}}
    if alpha.micro_components:
        out["micro_components"] = {v: c.entries.tolist() for v, c in alpha.micro_components.items()}
    return out


# --------------------------------------------------------------------------
# homogeneity problems and command-line distributions


def channel_problem_from_dict(data: Mapping, where: str = "problem"):
    """``{"f": rows, "tau_x": [...], "tau_y": [...]}`` with maps given as
    macro indices per micro value. Returns ``(f, tau_x, tau_y)``."""
    _expect(isinstance(data, dict), where, "expected a JSON object")
    for key in ("f", "tau_x", "tau_y"):
        _expect(key in data, where, f"missing {key!r}")
    f = StochasticChannel(_grid(data["f"], f"{where}: f"))
    maps = []
    for key, name in (("tau_x", "X'"), ("tau_y", "Y'")):
        vals = data[key]
        _expect(isinstance(vals, list) and all(isinstance(v, int) and v >= 0 for v in vals),
                f"{where}: {key}", "expected a list of non-negative macro indices")
        n = max(vals) + 1 if vals else 1
        maps.append(DeterministicMap((len(vals),), VariableSpec.with_arity(name, n), vals))
    return f, maps[0], maps[1]


def channel_problem_to_dict(f: StochasticChannel, tau_x: DeterministicMap, tau_y: DeterministicMap) -> dict:
    return {"f": f.entries.tolist(), "tau_x": tau_x.table.tolist(), "tau_y": tau_y.table.tolist()}


def parse_distribution(spec: str, model: CausalModel) -> tuple[str, Distribution]:
    """``VAR=p1,p2,...``, ``VAR=@preset`` or ``VAR=label`` (point mass)."""
    var, sep, rhs = spec.partition("=")
    var, rhs = var.strip(), rhs.strip()
    _expect(sep and var and rhs, spec, "expected VAR=p1,p2,... or VAR=@preset or VAR=value")
    _expect(var in model.variables, spec, f"unknown variable {var!r}")
    v = model.variables[var]
    if rhs.startswith("@"):
        try:
            return var, model.preset(var, rhs[1:])
        except KeyError as exc:
            raise SchemaError(spec, exc.args[0]) from None
    if rhs in v.values:
        return var, point_mass(v.arity, v.index(rhs))
    try:
        w = [float(x) for x in rhs.split(",")]
    except ValueError:
        raise SchemaError(spec, f"{rhs!r} is neither a value of {var} nor a list of probabilities") from None
    _expect(len(w) == v.arity, spec, f"{var} has {v.arity} values, got {len(w)} weights")
    d = Distribution(w)
    _expect(d.is_normalized(1e-9), spec, "weights must be non-negative and sum to 1")
    return var, d
