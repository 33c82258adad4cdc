"""Command-line interface.

Exit codes: 0 when a check passes or an operation succeeds, 1 for a negative
verdict, 2 for invalid input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import abstraction as ab
from .core import (
    DEFAULT_STATE_CAP,
    DEFAULT_TOL,
    ArityMismatch,
    CycleError,
    StateSpaceOverflow,
    apply_intervention,
    joint_tensor,
    validate_model,
)
from .generate import KINDS, GeneratorConfig, generate, write_instance
from .io import (
    SchemaError,
    channel_problem_from_dict,
    dumps,
    load_abstraction,
    load_hom,
    load_model,
    model_to_dict,
    parse_distribution,
    read_json,
    save_model,
)
from .syntax import UnrepresentableImage, validate_hom

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
INTERVENTION_TOL = 1e-7


class InputError(Exception):
    pass


def _default_tol() -> float:
    raw = os.environ.get("CAUSAL_ABS_TOL")
    if raw is None:
        return DEFAULT_TOL
    try:
        tol = float(raw)
    except ValueError:
        raise InputError(f"CAUSAL_ABS_TOL: {raw!r} is not a number") from None
    if not tol >= 0:
        raise InputError("CAUSAL_ABS_TOL must be non-negative")
    return tol


def sci(x: float) -> str:
    return f"{x:.2e}"


def _verdict(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


# --------------------------------------------------------------------------
# loading helpers


def _pair(args):
    micro = load_model(args.micro)
    macro = load_model(args.macro)
    for name, m in (("micro", micro), ("macro", macro)):
        rep = validate_model(m, args.tol)
        if not rep.ok:
            raise InputError(f"{name} model is invalid: " + "; ".join(rep.issues))
    hom_path = args.hom
    if hom_path is None:
        data = read_json(args.alpha)
        if not isinstance(data, dict) or not isinstance(data.get("hom"), str):
            raise SchemaError(str(args.alpha), "no 'hom' ref and no --hom given")
        hom_path = Path(args.alpha).parent / data["hom"]
    hom = load_hom(hom_path, micro, macro).hom
    rep = validate_hom(hom)
    if not rep.ok:
        raise InputError("homomorphism is invalid: " + "; ".join(rep.issues))
    alpha, _ = load_abstraction(args.alpha, micro, macro.variables, hom)
    return micro, macro, alpha


def _distributions(specs, model):
    out = {}
    for spec in specs or ():
        var, d = parse_distribution(spec, model)
        out[var] = d
    return out


# --------------------------------------------------------------------------
# report rendering


def naturality_dict(rep: ab.NaturalityReport) -> dict:
    return {
        "mode": rep.mode,
        "passed": rep.passed,
        "tol": rep.tol,
        "max_deviation": rep.max_deviation,
        "checks": [{"square": c.label, "deviation": c.deviation, "passed": c.deviation <= rep.tol,
                    "left": c.left.entries.tolist(), "right": c.right.entries.tolist()}
                   for c in rep.checks],
    }


def naturality_text(rep: ab.NaturalityReport) -> list[str]:
    lines = [f"naturality ({rep.mode}): {_verdict(rep.passed)}  "
             f"max deviation {sci(rep.max_deviation)}  tol {sci(rep.tol)}"]
    width = max((len(c.label) for c in rep.checks), default=0)
    for c in rep.checks:
        lines.append(f"  {c.label:<{width}}  {sci(c.deviation)}  {'ok' if c.deviation <= rep.tol else 'FAIL'}")
    return lines


def homogeneity_dict(rep: ab.HomogeneityReport) -> dict:
    return {
        "passed": rep.passed,
        "tol": rep.tol,
        "worst_deviation": rep.worst_deviation,
        "constants": rep.constants.tolist(),
        "column_cells": [list(c) for c in rep.partition.col_cells],
        "row_cells": [list(c) for c in rep.partition.row_cells],
        "column_permutation": list(rep.partition.col_perm),
        "row_permutation": list(rep.partition.row_perm),
        "failures": [{"block": [b.col_cell + 1, b.row_cell + 1], "columns": list(b.columns),
                      "deviation": b.deviation} for b in rep.failures],
    }


def homogeneity_text(rep: ab.HomogeneityReport, indent: str = "") -> list[str]:
    lines = [f"{indent}homogeneity: {_verdict(rep.passed)}  worst deviation {sci(rep.worst_deviation)}  "
             f"tol {sci(rep.tol)}"]
    for b in rep.failures:
        cols = ", ".join(map(str, b.columns))
        lines.append(f"{indent}  block ({b.col_cell + 1},{b.row_cell + 1}): column sums of columns {cols} "
                     f"deviate by up to {sci(b.deviation)}")
    lines.append(f"{indent}  block constants (rows: effect cells, columns: cause cells):")
    for row in rep.constants:
        lines.append(f"{indent}    " + "  ".join(f"{x:.6f}" for x in row))
    return lines


def _emit(args, data: dict, text: list[str]):
    if args.json:
        sys.stdout.write(dumps(data))
    else:
        sys.stdout.write("\n".join(text) + "\n")


def _joint_rows(model, tensor):
    rows = []
    for idx in np.ndindex(*tensor.shape):
        labels = [model.variables[v].values[k] for v, k in zip(model.vertices, idx)]
        rows.append((labels, float(tensor[idx])))
    return rows


# --------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    model = load_model(args.model)
    rep = validate_model(model, args.tol)
    issues = list(rep.issues)
    partition = None
    if args.hom:
        hf = load_hom(args.hom, source=model, require_target_mechanisms=False)
        hrep = validate_hom(hf.hom)
        issues += [f"hom: {i}" for i in hrep.issues]
        partition = {m: list(hf.hom.preimage(m)) for m in hf.hom.target.vertices}
    ok = not issues
    data = {"valid": ok, "issues": issues}
    text = [f"validate: {'valid' if ok else 'INVALID'}"] + [f"  {i}" for i in issues]
    if partition is not None:
        data["preimages"] = partition
        text += [f"  preimage of {m}: {{{', '.join(vs)}}}" for m, vs in partition.items()]
    _emit(args, data, text)
    return EXIT_OK if ok else EXIT_FAIL


def _print_joint(args, model, extra=None) -> int:
    tensor = joint_tensor(model, args.state_cap)
    rows = _joint_rows(model, tensor)
    data = {"variables": list(model.vertices), "total": float(tensor.sum()),
            "joint": [{"state": lab, "p": p} for lab, p in rows]}
    if extra:
        data.update(extra)
    width = max(len(" ".join(lab)) for lab, _ in rows)
    text = ["  ".join(model.vertices)] + [f"{' '.join(lab):<{width}}  {p:.10f}" for lab, p in rows]
    _emit(args, data, text)
    return EXIT_OK


def cmd_joint(args) -> int:
    model = load_model(args.model)
    rep = validate_model(model, args.tol)
    if not rep.ok:
        raise InputError("model is invalid: " + "; ".join(rep.issues))
    return _print_joint(args, model)


def cmd_intervene(args) -> int:
    model = load_model(args.model)
    rep = validate_model(model, args.tol)
    if not rep.ok:
        raise InputError("model is invalid: " + "; ".join(rep.issues))
    targets = _distributions(args.do, model)
    surgered = apply_intervention(model, targets)
    if args.out:
        save_model(surgered, args.out)
    return _print_joint(args, surgered, {"intervened": sorted(targets)})


def cmd_check_abstraction(args) -> int:
    micro, macro, alpha = _pair(args)
    rep = ab.check_naturality(micro, macro, alpha, args.mode, args.tol)
    _emit(args, naturality_dict(rep), naturality_text(rep))
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_check_equivalence(args) -> int:
    micro, macro, alpha = _pair(args)
    rep = ab.check_equivalence(micro, macro, alpha, args.tol, args.mode)
    data = {"equivalent": rep.equivalent, "non_permutations": list(rep.non_permutations),
            "naturality": naturality_dict(rep.naturality)}
    text = [f"equivalence: {_verdict(rep.equivalent)}"]
    text += [f"  component {k} is not a permutation" for k in rep.non_permutations]
    text += ["  " + line for line in naturality_text(rep.naturality)]
    _emit(args, data, text)
    return EXIT_OK if rep.equivalent else EXIT_FAIL


def cmd_check_interventions(args) -> int:
    micro, macro, alpha = _pair(args)
    dists = {}
    for v in micro.vertices:
        named = micro.presets.get(v, {})
        if args.preset in named:
            dists[v] = named[args.preset]
        elif len(named) == 1:
            dists[v] = next(iter(named.values()))
    dists.update(_distributions(args.do, micro))
    rep = ab.check_intervention_consistency(
        micro, macro, alpha, dists, args.tol, args.singletons, args.state_cap)
    data = {"passed": rep.passed, "tol": rep.tol, "max_deviation": rep.max_deviation,
            "cuts": [{"macro": list(o.macro_cut), "micro": list(o.micro_cut),
                      "deviation": o.deviation, "passed": o.passed} for o in rep.outcomes]}
    text = [f"interventions: {_verdict(rep.passed)}  max deviation {sci(rep.max_deviation)}  tol {sci(rep.tol)}"]
    for o in rep.outcomes:
        text.append(f"  cut {{{', '.join(o.macro_cut)}}} <- {{{', '.join(o.micro_cut)}}}  "
                    f"{sci(o.deviation)}  {'ok' if o.passed else 'FAIL'}")
    _emit(args, data, text)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_homogeneity(args) -> int:
    f, tau_x, tau_y = channel_problem_from_dict(read_json(args.problem), str(args.problem))
    rep = ab.check_homogeneity(f, tau_x, tau_y, args.tol)
    data = homogeneity_dict(rep)
    text = homogeneity_text(rep)
    if rep.passed:
        g = ab.synthesize_macro_mechanism(f, tau_x, tau_y, args.tol)
        data["macro_mechanism"] = g.entries.tolist()
    _emit(args, data, text)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_synthesize(args) -> int:
    micro = load_model(args.micro)
    rep = validate_model(micro, args.tol)
    if not rep.ok:
        raise InputError("micro model is invalid: " + "; ".join(rep.issues))
    hom_path = args.hom
    if hom_path is None:
        data = read_json(args.taus)
        if not isinstance(data, dict) or not isinstance(data.get("hom"), str):
            raise SchemaError(str(args.taus), "no 'hom' ref and no --hom given")
        hom_path = Path(args.taus).parent / data["hom"]
    hf = load_hom(hom_path, source=micro, require_target_mechanisms=False)
    _, maps = load_abstraction(args.taus, micro, hf.target.variables, hf.hom)
    if maps is None:
        raise SchemaError(str(args.taus), "synthesis needs deterministic 'taus', not 'components'")
    try:
        macro, _ = ab.synthesize_abstraction(micro, hf.hom, maps, args.tol)
    except ab.NotHomogeneous as exc:
        data = {"synthesized": False, "failures": {k: homogeneity_dict(r) for k, r in exc.failures.items()}}
        text = [f"synthesize: FAIL  not causally homogeneous at {', '.join(exc.failures)}"]
        for k, r in exc.failures.items():
            text.append(f"  {k}:")
            text += homogeneity_text(r, "    ")
        _emit(args, data, text)
        return EXIT_FAIL
    if args.out:
        save_model(macro, args.out)
    data = {"synthesized": True, "macro": model_to_dict(macro)}
    text = ["synthesize: PASS"]
    for m in macro.vertices:
        text.append(f"  {m}: " + json.dumps(macro.mechanisms[m].entries.round(12).tolist()))
    _emit(args, data, text)
    return EXIT_OK


def cmd_generate(args) -> int:
    config = GeneratorConfig(args.kind, args.seed, args.vertices, args.arities, args.edge_prob)
    inst = generate(config)
    paths = write_instance(inst, args.out)
    _emit(args, {"kind": args.kind, "seed": args.seed, "files": [p.name for p in paths]},
          [f"generate: {args.kind} seed {args.seed}"] + [f"  wrote {p}" for p in paths])
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _range(text: str) -> tuple[int, int]:
    try:
        lo, _, hi = text.partition(":")
        return int(lo), int(hi or lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN:MAX, got {text!r}") from None


def _nonneg(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not x >= 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return x


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tol", type=_nonneg, default=None,
                        help="comparison tolerance (default: $CAUSAL_ABS_TOL or 1e-9)")
    common.add_argument("--json", action="store_true", help="machine-readable report")
    common.add_argument("--state-cap", type=int, default=DEFAULT_STATE_CAP,
                        help="largest joint state space to enumerate")

    pair = argparse.ArgumentParser(add_help=False)
    pair.add_argument("--micro", required=True, type=Path)
    pair.add_argument("--macro", required=True, type=Path)
    pair.add_argument("--hom", type=Path, help="defaults to the abstraction file's 'hom' ref")
    pair.add_argument("--alpha", required=True, type=Path)

    p = argparse.ArgumentParser(prog="causalabs", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("validate", parents=[common], help="check model (and hom) invariants")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--hom", type=Path)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("joint", parents=[common], help="print the joint distribution")
    s.add_argument("--model", required=True, type=Path)
    s.set_defaults(func=cmd_joint)

    s = sub.add_parser("intervene", parents=[common], help="intervene and print the joint")
    s.add_argument("--model", required=True, type=Path)
    s.add_argument("--do", action="append", metavar="VAR=DIST",
                   help="VAR=p1,p2,..., VAR=@preset or VAR=value; repeatable")
    s.add_argument("--out", type=Path, help="also write the intervened model")
    s.set_defaults(func=cmd_intervene)

    s = sub.add_parser("check-abstraction", parents=[common, pair], help="check naturality")
    s.add_argument("--mode", choices=("grouped", "edgewise"), default="grouped")
    s.set_defaults(func=cmd_check_abstraction)

    s = sub.add_parser("check-equivalence", parents=[common, pair],
                       help="naturality plus permutation components")
    s.add_argument("--mode", choices=("grouped", "edgewise"), default="grouped")
    s.set_defaults(func=cmd_check_equivalence)

    s = sub.add_parser("check-interventions", parents=[common, pair],
                       help="compare intervened joints across levels for every macro cut set")
    s.add_argument("--do", action="append", metavar="VAR=DIST", help="micro intervened state; repeatable")
    s.add_argument("--preset", default="default", help="preset name used when --do omits a vertex")
    s.add_argument("--singletons", action="store_true", help="only the empty and singleton cut sets")
    s.set_defaults(func=cmd_check_interventions, tol_default=INTERVENTION_TOL)

    s = sub.add_parser("homogeneity", parents=[common], help="block column-sum check of one channel")
    s.add_argument("problem", type=Path, help='JSON {"f": rows, "tau_x": [...], "tau_y": [...]}')
    s.set_defaults(func=cmd_homogeneity)

    s = sub.add_parser("synthesize", parents=[common], help="build the macro model from deterministic maps")
    s.add_argument("--micro", required=True, type=Path)
    s.add_argument("--hom", type=Path, help="defaults to the taus file's 'hom' ref")
    s.add_argument("--taus", required=True, type=Path)
    s.add_argument("--out", type=Path)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("generate", parents=[common], help="write a seeded random instance")
    s.add_argument("--kind", choices=KINDS, default="arbitrary")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--vertices", type=_range, default=(2, 6), metavar="MIN:MAX")
    s.add_argument("--arities", type=_range, default=(2, 3), metavar="MIN:MAX")
    s.add_argument("--edge-prob", type=float, default=0.5)
    s.add_argument("--out", required=True, type=Path)
    s.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.tol is None:
            args.tol = getattr(args, "tol_default", None) or _default_tol()
        return args.func(args)
    except (SchemaError, InputError, ArityMismatch, CycleError, StateSpaceOverflow,
            UnrepresentableImage, ab.PreconditionError, ab.NotSurjective, ab.MissingIntervention,
            KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(f"causalabs {args.verb}: error: {msg}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
