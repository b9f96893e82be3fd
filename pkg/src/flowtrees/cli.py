"""Command line entry point.

Subcommands:

  critical-points  locate critical points of a sheet-difference field
  flow             integrate and classify a maximal flow
  limit            certified broken limit of a flow sequence
  tree validate    vertex-matching and loop diagnostics of a tree document
  tree reduce      canonical minimal representative of a tree document
  tree gamma       combinatorial type of a tree document
  tree limit       certified stratum limit of a tree-document sequence
  tree audit       five-axiom convergence-structure audit of a family

Exit codes: 0 success, 2 inconclusive extraction, 1 validation or input
error. CSV output uses %.12g formatting and is byte-reproducible for a
fixed configuration; certificates are JSON.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

from . import broken as broken_mod
from . import svg as svg_mod
from . import tree as tree_mod
from .flow import FlowOptions, integrate_maximal
from .morse import critical_points
from .scenario import Scenario, ScenarioError, load_scenario

FIXTURE_ENV = "FLOWTREES_FIXTURES"


def _resolve_scenario(ref: str) -> Scenario:
    if os.path.exists(ref):
        return load_scenario(ref)
    roots = []
    if os.environ.get(FIXTURE_ENV):
        roots.append(os.environ[FIXTURE_ENV])
    roots.append(os.path.join(os.path.dirname(__file__), "fixtures"))
    for root in roots:
        for cand in (os.path.join(root, ref), os.path.join(root, ref + ".json")):
            if os.path.exists(cand):
                return load_scenario(cand)
    raise ScenarioError(f"cannot resolve scenario {ref!r}")


def _parse_pair(text: str) -> tuple:
    i, j = (int(x) for x in text.split(","))
    return i, j


def _parse_point(text: str) -> list[float]:
    return [float(x) for x in text.split(",")]


def _write_csv(path: str, header: list, rows: list):
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(
                [f"{v:.12g}" if isinstance(v, float) else v for v in row]
            )


def _outdir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _flow_options(args) -> FlowOptions:
    opts = FlowOptions()
    if getattr(args, "tol_integration", None):
        from dataclasses import replace

        opts = replace(opts, rtol=args.tol_integration)
    return opts


def cmd_critical_points(args) -> int:
    sc = _resolve_scenario(args.scenario)
    F = sc.difference(*_parse_pair(args.pair))
    cps = critical_points(F)
    rows = []
    for c in sorted(cps, key=lambda c: c.key()):
        rows.append([*map(float, c.location), c.index, float(c.value)])
    out = _outdir(args)
    dim = sc.chart.dim
    header = [f"x{k+1}" for k in range(dim)] + ["index", "value"]
    _write_csv(os.path.join(out, "critical-points.csv"), header, rows)
    with open(os.path.join(out, "critical-points.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg_mod.scenario_scene(sc, pair=_parse_pair(args.pair)))
    for row in rows:
        print(", ".join(f"{v:.12g}" if isinstance(v, float) else str(v) for v in row))
    return 0


def cmd_flow(args) -> int:
    sc = _resolve_scenario(args.scenario)
    pair = _parse_pair(args.pair)
    F = sc.difference(*pair)
    fl = integrate_maximal(F, _parse_point(args.start), _flow_options(args))
    out = _outdir(args)
    dim = sc.chart.dim
    rows = [
        [float(t), *map(float, sc.chart.wrap(p)), float(f)]
        for t, p, f in zip(fl.times, fl.points, fl.fvalues)
    ]
    header = ["t"] + [f"x{k+1}" for k in range(dim)] + ["F"]
    _write_csv(os.path.join(out, "flow.csv"), header, rows)
    with open(os.path.join(out, "flow.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg_mod.scenario_scene(sc, pair=pair, flows=[fl]))
    print(f"class: {fl.flow_class.kind}")
    print(f"start: {_describe_event(fl.start_event)}")
    print(f"end:   {_describe_event(fl.end_event)}")
    return 0


def _describe_event(ev) -> str:
    from .flow import ChartEnd, CriticalEnd, FoldEnd

    if isinstance(ev, CriticalEnd):
        return f"critical point {tuple(ev.cp.location)} (index {ev.cp.index})"
    if isinstance(ev, FoldEnd):
        extra = f", contact order {ev.contact_order}" if ev.contact_order else ""
        return f"fold #{ev.component.id} at {tuple(ev.point)}{extra}"
    if isinstance(ev, ChartEnd):
        return f"chart boundary at {tuple(ev.point)}"
    return str(ev)


def _read_starts(path: str) -> list:
    starts = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                starts.append([float(x) for x in row])
            except ValueError:
                continue  # header line
    return starts


def cmd_limit(args) -> int:
    sc = _resolve_scenario(args.scenario)
    pair = _parse_pair(args.pair)
    F = sc.difference(*pair)
    opts = _flow_options(args)
    seq = [
        broken_mod.from_flow(integrate_maximal(F, x0, opts))
        for x0 in _read_starts(args.starts)
    ]
    if args.family:
        mismatched = [b.family.kind for b in seq if b.family.kind != args.family]
        if mismatched:
            print(
                f"error: sequence contains {mismatched[0]} flows, expected "
                f"{args.family}",
                file=sys.stderr,
            )
            return 1
    out = _outdir(args)
    try:
        res = broken_mod.extract_limit(seq, cluster_radius=args.tol_cluster)
    except broken_mod.InconclusiveError as e:
        cert = {"status": "inconclusive", "reason": str(e), "diagnostics": repr(e.diagnostics)}
        with open(os.path.join(out, "certificate.json"), "w", encoding="utf-8") as fh:
            json.dump(cert, fh, indent=2)
        print(f"inconclusive: {e}", file=sys.stderr)
        return 2
    lim = res.limit
    dim = sc.chart.dim
    rows = []
    for k, seg in enumerate(lim.segments):
        for t, p, f in zip(seg.times, seg.points, seg.fvalues):
            rows.append([k, float(t), *map(float, sc.chart.wrap(p)), float(f)])
    header = ["segment", "t"] + [f"x{k+1}" for k in range(dim)] + ["F"]
    _write_csv(os.path.join(out, "limit-segments.csv"), header, rows)
    cert = {
        "status": "certified",
        "family": lim.family.kind,
        "chain": [list(c.location) for c in lim.chain],
        "chain_indices": [c.index for c in lim.chain],
        "subsequence": res.indices,
        "ladder": res.certificate["ladder"],
    }
    with open(os.path.join(out, "certificate.json"), "w", encoding="utf-8") as fh:
        json.dump(cert, fh, indent=2)
    with open(os.path.join(out, "limit.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg_mod.scenario_scene(sc, pair=pair, flows=lim.segments))
    print(f"family: {lim.family.kind}, {lim.q}-times broken")
    for c in lim.chain:
        print(f"chain point: {c.location} (index {c.index})")
    for rung in res.certificate["ladder"]:
        print(f"radius {rung['radius']:g}: tail from element {rung['tail_index']}")
    return 0


def _load_tree_doc(args) -> tuple:
    with open(args.tree, encoding="utf-8") as fh:
        doc = json.load(fh)
    sc = _resolve_scenario(args.scenario or doc.get("scenario", ""))
    return tree_mod.loads_tree(json.dumps(doc), sc), sc


def cmd_tree_validate(args) -> int:
    t, _sc = _load_tree_doc(args)
    diag = tree_mod.validate(t, tol=args.tol_match)
    print(f"valid: {diag.valid}")
    print(f"loop closed: {diag.loop_closed}")
    for vid in sorted(diag.vertex_residuals):
        print(
            f"vertex {vid}: covector residual {diag.vertex_residuals[vid]:.3e}, "
            f"base residual {diag.base_residuals[vid]:.3e}"
            + (" [orientation?]" if diag.orientation_flags[vid] else "")
        )
    return 0 if diag.valid else 1


def cmd_tree_reduce(args) -> int:
    t, sc = _load_tree_doc(args)
    r = tree_mod.minimal_representative(t)
    text = tree_mod.dump_tree(r, args.scenario or sc.name)
    out = _outdir(args)
    path = os.path.join(out, "reduced.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"{len(r.edges)} edges, {len(r.vertices)} vertices -> {path}")
    return 0


def cmd_tree_gamma(args) -> int:
    t, _sc = _load_tree_doc(args)
    gamma = tree_mod.combinatorial_type(t)
    for token in gamma.code:
        print(token)
    return 0


def cmd_tree_limit(args) -> int:
    sc = _resolve_scenario(args.scenario)
    seq = [tree_mod.load_tree(path, sc) for path in args.trees]
    out = _outdir(args)
    try:
        lim, sel, cert = tree_mod.stratum_limit(seq, cluster_radius=args.tol_cluster)
    except (tree_mod.TreeError, broken_mod.InconclusiveError) as e:
        status = 2 if isinstance(e, broken_mod.InconclusiveError) else 1
        print(f"{'inconclusive' if status == 2 else 'error'}: {e}", file=sys.stderr)
        return status
    with open(os.path.join(out, "tree-limit.json"), "w", encoding="utf-8") as fh:
        fh.write(tree_mod.dump_tree(lim, args.scenario))
    with open(os.path.join(out, "tree-certificate.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "status": "certified",
                "subsequence": sel,
                "ghost_history": lim.annotations.get("ghost_history", []),
                "edges": {str(k): v for k, v in cert["edges"].items()},
                "vertices": {str(k): v for k, v in cert["vertices"].items()},
            },
            fh,
            indent=2,
        )
    print(f"limit with {len(lim.edges)} edges; subsequence {sel}")
    return 0


def cmd_tree_audit(args) -> int:
    with open(args.family, encoding="utf-8") as fh:
        spec = json.load(fh)
    sc = _resolve_scenario(spec["scenario"])
    probes, diagonal = tree_mod.builtin_family(
        spec["family"], sc, prefix_length=spec.get("prefix", 16)
    )
    report = tree_mod.audit_convergence_structure(
        probes,
        diagonal,
        prefix_length=spec.get("prefix", 16),
        ladder_depth=spec.get("ladder", 4),
        seed=args.seed,
    )
    out = _outdir(args)
    with open(os.path.join(out, "audit-report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, default=str)
    for axiom in ("constant", "subsequence", "subsubsequence", "diagonal", "uniqueness"):
        entry = report[axiom]
        print(f"{axiom}: {'pass' if entry['pass'] else 'FAIL'}")
    return 0 if report["all_pass"] else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowtrees", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--tol-integration", type=float, default=None, dest="tol_integration")
        sp.add_argument("--tol-match", type=float, default=1e-6, dest="tol_match")
        sp.add_argument(
            "--tol-cluster", type=float, default=broken_mod.CLUSTER_RADIUS,
            dest="tol_cluster",
        )

    sp = sub.add_parser("critical-points", help="critical points of a pair")
    sp.add_argument("scenario")
    sp.add_argument("--pair", required=True)
    common(sp)
    sp.set_defaults(fn=cmd_critical_points)

    sp = sub.add_parser("flow", help="integrate one maximal flow")
    sp.add_argument("scenario")
    sp.add_argument("--pair", required=True)
    sp.add_argument("--start", required=True)
    common(sp)
    sp.set_defaults(fn=cmd_flow)

    sp = sub.add_parser("limit", help="certified broken limit of a flow sequence")
    sp.add_argument("scenario")
    sp.add_argument("--pair", required=True)
    sp.add_argument("--starts", required=True, help="CSV of start points")
    sp.add_argument("--family", default=None)
    common(sp)
    sp.set_defaults(fn=cmd_limit)

    tp = sub.add_parser("tree", help="flow tree operations")
    tsub = tp.add_subparsers(dest="tree_command", required=True)

    sp = tsub.add_parser("validate")
    sp.add_argument("tree")
    sp.add_argument("--scenario", default=None)
    common(sp)
    sp.set_defaults(fn=cmd_tree_validate)

    sp = tsub.add_parser("reduce")
    sp.add_argument("tree")
    sp.add_argument("--scenario", default=None)
    common(sp)
    sp.set_defaults(fn=cmd_tree_reduce)

    sp = tsub.add_parser("gamma")
    sp.add_argument("tree")
    sp.add_argument("--scenario", default=None)
    common(sp)
    sp.set_defaults(fn=cmd_tree_gamma)

    sp = tsub.add_parser("limit")
    sp.add_argument("trees", nargs="+", help="tree documents, in sequence order")
    sp.add_argument("--scenario", required=True)
    common(sp)
    sp.set_defaults(fn=cmd_tree_limit)

    sp = tsub.add_parser("audit")
    sp.add_argument("family", help="family spec JSON")
    common(sp)
    sp.set_defaults(fn=cmd_tree_audit)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ScenarioError, tree_mod.TreeError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
