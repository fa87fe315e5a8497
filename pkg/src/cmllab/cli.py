"""Command-line interface: ``cmllab <subcommand> [options]``.

Every subcommand reads the shared TOML configuration (``--config``), applies
environment and flag overrides, writes its results into ``--out-dir`` and
finishes with a ``manifest.json`` that lists the resolved configuration and
the sha256 of every output file. ``cmllab replay manifest.json`` re-runs the
recorded command and compares the hashes.

Exit codes: 0 on success, 2 for configuration and precondition problems,
3 for runtime failures (orbit escapes, replay mismatches, anything else).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import __version__
from . import io as rio
from .config import ConfigError, build_system, resolve
from .errors import (BracketError, CmlError, DomainError, EscapeError, HypothesisViolation,
                     PreconditionError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
_CONFIG_ERRORS = (ConfigError, PreconditionError, HypothesisViolation, BracketError, DomainError)

MANIFEST = "manifest.json"


class Result:
    """What a handler hands back: written files, metrics and a text report."""

    def __init__(self, outputs: List[Path], report: str, steps: int = 0):
        self.outputs = outputs
        self.report = report
        self.steps = steps


# ---------------------------------------------------------------------------
# handlers; each takes the resolved config and an output directory


def _orbit_config(cfg) -> "OrbitConfig":
    from .orbit import OrbitConfig

    o = cfg["orbit"]
    return OrbitConfig(n_steps=o["steps"], burn_in=o["burn_in"], eps=o["eps"], gamma=o["gamma"],
                       trace_stride=o["trace_stride"], sync_tol=o["sync_tol"],
                       sync_sustain=o["sync_sustain"], shadow=o["shadow"])


def cmd_simulate(cfg, out: Path) -> Result:
    from .orbit import run_ensemble
    from .sweeps import seed_list

    system = build_system(cfg)
    ocfg = _orbit_config(cfg)
    master = cfg["run"]["seed"]
    n = cfg["orbit"]["seeds"]
    seeds = [master] if n == 1 else seed_list(master, n)
    stats = run_ensemble(system, ocfg, seeds, threads=cfg["run"]["threads"])
    echo = {"system": system.to_dict(), "system_hash": system.content_hash(),
            "orbit": {k: v for k, v in vars(ocfg).items() if k != "seed"}}
    rows = [{**st.to_dict(), **echo} for st in stats]
    outputs = [rio.write_jsonl(out / "stats.jsonl", rows)]
    if cfg["run"]["format"] == "csv":
        flat = [{k: v for k, v in st.to_dict().items() if k != "final_state"} for st in stats]
        outputs.append(rio.write_csv(out / "stats.csv", flat))
    if ocfg.trace_stride > 0:
        for st in stats:
            tr = st.trace
            fields = ["n"] + [f"x{i + 1}" for i in range(system.m)] + ["dist"]
            trows = [dict(zip(fields, [int(r[0]), *map(float, r[1:])])) for r in tr]
            outputs.append(rio.write_csv(out / f"trace_{st.seed}.csv", trows, fields))
    lines = ["seed                  min_dist      max_dist      alternations  sync_time"]
    for st in stats:
        lines.append(f"{st.seed:<20d}  {st.min_dist_after_burn_in:<12.4g}  "
                     f"{st.max_dist_after_burn_in:<12.4g}  {st.alternations:<12d}  {st.sync_time}")
    return Result(outputs, "\n".join(lines), steps=ocfg.n_steps * len(seeds))


def _predicate(cfg):
    from .sweeps import IntermittencyScore, SyncWithin

    sw = cfg["sweep"]
    name = sw["predicate"].lower()
    if name == "sync":
        return SyncWithin(tol=sw["tol"], horizon=sw["horizon"], sustain=sw["sustain"])
    if name == "intermittency":
        return IntermittencyScore(eps=sw["eps"], gamma=sw["gamma"])
    raise ConfigError(f"unknown sweep predicate {sw['predicate']!r} (use 'sync' or 'intermittency')")


def cmd_scan(cfg, out: Path) -> Result:
    from .sweeps import SweepSpec, bifurcation_scan, c_grid

    system = build_system(cfg)
    sw = cfg["sweep"]
    values = sw["c_values"] or c_grid(sw["c_lo"], sw["c_hi"], sw["c_step"])
    samples = sw["trace_samples"] or (200 if sw["plot"] else 0)
    orbit = replace(_orbit_config(cfg), n_steps=sw["horizon"],
                    burn_in=min(sw["burn_in"], sw["horizon"] - 1), trace_stride=0)
    spec = SweepSpec(values, seeds_per_c=sw["seeds_per_c"], orbit=orbit, predicate=_predicate(cfg),
                     master_seed=cfg["run"]["seed"], trace_samples=samples)
    res = bifurcation_scan(system, spec, threads=cfg["run"]["threads"],
                           refine_iterations=sw["refine"])
    fields = ["c", "seed", "sync_time", "min_dist", "max_dist", "alternations"]
    rows = [r.record() for r in res.runs]
    outputs = [rio.write_records(out / "runs", rows, cfg["run"]["format"], fields),
               rio.write_json(out / "summary.json", res.summary())]
    if sw["plot"]:
        pts = [(r.c, d) for r in res.runs for d in (r.samples or [])]
        outputs.append(rio.bifurcation_svg(out / "bifurcation.svg", pts, title=f"{res.predicate} scan"))
    lines = ["c         sync_fraction  mean_alternations  escapes"]
    for row in res.rows:
        lines.append(f"{row.c:<8.4g}  {row.sync_fraction:<13.3f}  {row.mean_alternations:<17.3g}  "
                     f"{row.n_escapes}")
    lines.append(f"c* = {res.c_star}  interval = {res.c_star_interval}")
    lines.extend(f"finding: {f}" for f in res.findings)
    n_run = len(res.runs) * spec.run_config().n_steps
    return Result(outputs, "\n".join(lines), steps=n_run)


def _root_segment(cfg, rng, single_cell=False):
    from .curvelab import Polyline, random_segment

    cu = cfg["curve"]
    if cu["start"] is not None or cu["end"] is not None:
        if cu["start"] is None or cu["end"] is None or len(cu["start"]) != 2 or len(cu["end"]) != 2:
            raise ConfigError("[curve] start and end must both be given as [x1, x2]")
        return Polyline([cu["start"], cu["end"]])
    return random_segment(rng, cu["length"], single_cell=single_cell)


def cmd_curve(cfg, out: Path) -> Result:
    from . import curvelab as cl

    system = build_system(cfg)
    cu = cfg["curve"]
    fmt = cfg["run"]["format"]
    rng = np.random.default_rng(cfg["run"]["seed"])
    demo = cu["demo"].lower()
    outputs: List[Path] = []
    if demo == "prop32":
        from .lemmacalc import expansion_bounds

        lam = expansion_bounds(system, "curve").e_minus
        e = cl.growth_exponent(lam)
        rows = []
        for i in range(cu["count"]):
            length = cu["delta1"] * (1.0 + rng.random())
            seg = cl.random_segment(rng, length, single_cell=True, kink=system.map.kink)
            res = cl.growth_step(system, seg, delta1=cu["delta1"], h=cu["h"])
            rows.append({"index": i, "length": seg.length, "outcome": res.kind,
                         "depth": getattr(res, "depth", None),
                         "factor": getattr(res, "factor", None)})
        counts = {k: sum(r["outcome"] == k for r in rows) for k in ("DiagonalHit", "Grown", "Fail")}
        factors = [r["factor"] for r in rows if r["factor"] is not None]
        summary = {"lambda": lam, "e": e, "required_factor": 1.0 + e, "counts": counts,
                   "min_factor": min(factors) if factors else None}
        outputs.append(rio.write_records(out / "growth", rows, fmt))
        outputs.append(rio.write_json(out / "growth_report.json", summary))
        report = (f"lambda = {lam:.12g}\ne = {e:.12g}\nrequired factor = {1 + e:.12g}\n"
                  f"outcomes: {counts}\nmin factor = {summary['min_factor']}")
        return Result(outputs, report)
    root = _root_segment(cfg, rng)
    if demo == "components":
        forest = cl.iterate_curve(system, root, cu["depth"], h=cu["h"])
        if fmt == "csv":
            outputs.append(rio.write_csv(out / "forest.csv", forest.to_rows(),
                                         ["depth", "id", "parent", "cell", "length", "r_a"]))
        else:
            outputs.append(rio.write_json(out / "forest.json", forest.to_dict()))
        outputs.append(rio.forest_svg(out / "forest.svg", forest, forest.depth, system.map.kink))
        lines = ["depth  components  length        r_a"]
        for s in forest.stats:
            lines.append(f"{s.depth:<5d}  {s.component_count:<10d}  {s.length:<12.6g}  {s.r_a:.3g}")
        return Result(outputs, "\n".join(lines))
    if demo == "pullback":
        if isinstance(system.map, cl.PerturbedTent):
            forest = cl.iterate_curve(system, root, cu["depth"], h=cu["h"])
            hits = cl.diagonal_pullback(forest, cu["eps"])
            per = np.zeros(cu["depth"] + 1)
            for (t0, t1), k in hits:
                per[k] += t1 - t0
            total = float(np.abs(np.diff(root.params)).sum())
        else:
            scan = cl.pullback_scan(system, root, cu["depth"], cu["eps"])
            per, total = scan.per_depth, scan.root_measure
        cum = np.cumsum(per) / total
        rows = [{"depth": k, "measure": float(per[k]), "cumulative_fraction": float(cum[k])}
                for k in range(len(per))]
        outputs.append(rio.write_records(out / "pullback", rows, fmt))
        report = "\n".join(f"depth {r['depth']:>3d}: cumulative fraction {r['cumulative_fraction']:.6f}"
                           for r in rows)
        return Result(outputs, report)
    raise ConfigError(f"unknown curve demo {cu['demo']!r} (use prop32, components or pullback)")


def cmd_polytope(cfg, out: Path) -> Result:
    from .polytope import center_point_audit

    system = build_system(cfg)
    po = cfg["polytope"]
    audit = center_point_audit(system, po["audit"], seed=cfg["run"]["seed"], scale=po["scale"],
                               eps=po["eps"])
    rows = [{"measured": r.measured, "bound": r.bound, "slack": r.slack, "samples": r.samples,
             "ok": r.ok} for r in audit.eps_checks]
    summary = {"m": system.m, "c": system.c, "regions": audit.n, "all_cells_hit": audit.all_hit,
               "some_cell_missed": audit.missed, "counterexamples": audit.counterexamples,
               "eps": po["eps"], "eps_checks": len(rows), "eps_failures": audit.eps_failures}
    findings = [{"kind": "center_outside", **c} for c in audit.counterexamples]
    findings += [{"kind": "eps_ratio_below_bound", **r} for r in rows if not r["ok"]]
    outputs = [rio.write_json(out / "center_audit.json", summary),
               rio.write_jsonl(out / "findings.jsonl", findings),
               rio.write_records(out / "eps_ratio", rows, cfg["run"]["format"],
                                 ["measured", "bound", "slack", "samples", "ok"])]
    report = (f"regions {audit.n}: all cells hit {audit.all_hit}, missed {audit.missed}, "
              f"counterexamples {len(audit.counterexamples)}\n"
              f"eps = {po['eps']}: {len(rows)} checks, {audit.eps_failures} below the bound")
    return Result(outputs, report)


def cmd_lemma(cfg, out: Path) -> Result:
    from .lemmacalc import derive_iteration_constants, expansion_bounds

    system = build_system(cfg)
    le = cfg["lemma"]
    bounds = expansion_bounds(system, le["mode"])
    consts = derive_iteration_constants(bounds, le["a"], le["m0"], le["delta1"], mu=le["mu"])
    table = [("E_plus", bounds.e_plus), ("E_minus", bounds.e_minus), ("mu", consts.mu),
             ("mu_upper", consts.mu_upper), ("d", consts.d), ("F", consts.f_const),
             ("log2_F", consts.log2_f), ("N0", consts.n0), ("c1_lower", consts.c1_lower)]
    if cfg["run"]["format"] == "csv":
        path = rio.write_csv(out / "constants.csv", [{"name": k, "value": v} for k, v in table])
    else:
        path = rio.write_json(out / "constants.json", consts.to_dict())
    lines = [f"{k:<10s} {v!r}" for k, v in table]
    lines.extend(f"note: {n}" for n in consts.notes)
    return Result([path], "\n".join(lines))


def cmd_validate(cfg, out: Path) -> Result:
    from .maps import PerturbedTent
    from .orbit import trapping_bounds

    system = build_system(cfg)
    lo, hi = system.map.range_certificate()
    report = {
        "system": system.to_dict(), "system_hash": system.content_hash(),
        "m": system.m, "range_certificate": [lo, hi],
        "nonnegative_matrix": system.nonnegative,
        "coupling_norm": system.coupling.norm,
    }
    if isinstance(system.map, PerturbedTent):
        pert = system.map.perturbation
        report["perturbation"] = {"sup_g": pert.sup_g, "sup_g1": pert.sup_g1, "sup_g2": pert.sup_g2}
        try:
            report["trapping"] = list(trapping_bounds(system))
        except PreconditionError as exc:
            report["trapping"] = str(exc)
    path = rio.write_json(out / "validate.json", report)
    text = [f"system ok: m = {system.m}, c = {system.c}",
            f"f([0,1]) within [{lo:.6g}, {hi:.6g}]",
            f"I + cA nonnegative: {system.nonnegative}"]
    return Result([path], "\n".join(text))


HANDLERS: Dict[str, Callable] = {
    "simulate": cmd_simulate, "scan": cmd_scan, "curve": cmd_curve, "polytope": cmd_polytope,
    "lemma": cmd_lemma, "validate": cmd_validate,
}


# ---------------------------------------------------------------------------
# manifest


def run_command(command: str, cfg, out: Path, inputs: Optional[dict] = None) -> dict:
    """Run one handler and write its manifest; returns the manifest."""
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = HANDLERS[command](cfg, out)
    wall = time.perf_counter() - t0
    files = sorted(set(Path(p) for p in res.outputs))
    manifest = {
        "tool": "cmllab", "version": __version__, "command": command,
        "config": cfg, "seed": cfg["run"]["seed"],
        "inputs": dict(inputs or {}),
        "outputs": [{"path": p.relative_to(out).as_posix(), "sha256": rio.sha256_file(p),
                     "bytes": p.stat().st_size} for p in files],
        "metrics": {"wall_seconds": wall, "steps": res.steps,
                    "steps_per_second": res.steps / wall if res.steps and wall > 0 else None},
    }
    rio.write_json(out / MANIFEST, manifest)
    print(res.report)
    return manifest


def replay(manifest_path, out_dir=None) -> Tuple[bool, List[str]]:
    """Re-run the command of a manifest; (identical, mismatch descriptions)."""
    path = Path(manifest_path)
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    try:
        man = json.loads(path.read_text())
        command, cfg = man["command"], man["config"]
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: not a cmllab manifest ({exc})") from None
    if command not in HANDLERS:
        raise ConfigError(f"{path}: unknown command {command!r}")
    cfg = resolve(flags=cfg, environ={})
    out = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="cmllab-replay-"))
    new = run_command(command, cfg, out, man.get("inputs"))
    old = {o["path"]: o["sha256"] for o in man["outputs"]}
    now = {o["path"]: o["sha256"] for o in new["outputs"]}
    problems = []
    for p in sorted(set(old) | set(now)):
        if p not in now:
            problems.append(f"{p}: not produced by the replay")
        elif p not in old:
            problems.append(f"{p}: not in the original manifest")
        elif old[p] != now[p]:
            problems.append(f"{p}: sha256 {now[p][:12]} differs from recorded {old[p][:12]}")
    return not problems, problems


# ---------------------------------------------------------------------------
# argument parsing

# (flag, section, key, argparse kwargs)
_SYSTEM_FLAGS = [
    ("--variant", "map", "variant", {}),
    ("--s0", "map", "s0", {}),
    ("--alpha1", "map", "alpha1", {}),
    ("--alpha2", "map", "alpha2", {}),
    ("--c", "coupling", "c", {}),
    ("--m", "coupling", "m", {}),
    ("--coupling", "coupling", "A", {"help": "two-node, all-to-all or path"}),
]
_COMMAND_FLAGS = {
    "simulate": [("--steps", "orbit", "steps"), ("--burn-in", "orbit", "burn_in"),
                 ("--eps", "orbit", "eps"), ("--gamma", "orbit", "gamma"),
                 ("--trace-stride", "orbit", "trace_stride"), ("--seeds", "orbit", "seeds"),
                 ("--sync-tol", "orbit", "sync_tol"), ("--sync-sustain", "orbit", "sync_sustain")],
    "scan": [("--c-lo", "sweep", "c_lo"), ("--c-hi", "sweep", "c_hi"), ("--c-step", "sweep", "c_step"),
             ("--seeds-per-c", "sweep", "seeds_per_c"), ("--predicate", "sweep", "predicate"),
             ("--horizon", "sweep", "horizon"), ("--tol", "sweep", "tol"),
             ("--sustain", "sweep", "sustain"), ("--eps", "sweep", "eps"),
             ("--gamma", "sweep", "gamma"), ("--burn-in", "sweep", "burn_in"),
             ("--refine", "sweep", "refine"), ("--trace-samples", "sweep", "trace_samples")],
    "curve": [("--demo", "curve", "demo"), ("--depth", "curve", "depth"), ("--eps", "curve", "eps"),
              ("--count", "curve", "count"), ("--length", "curve", "length"),
              ("--delta1", "curve", "delta1"), ("--h", "curve", "h")],
    "polytope": [("--audit", "polytope", "audit"), ("--eps", "polytope", "eps"),
                 ("--scale", "polytope", "scale")],
    "lemma": [("--a", "lemma", "a"), ("--m0", "lemma", "m0"), ("--delta1", "lemma", "delta1"),
              ("--mu", "lemma", "mu"), ("--mode", "lemma", "mode")],
    "validate": [],
}
_HELP = {
    "simulate": "iterate orbits and record distance-to-diagonal statistics",
    "scan": "sweep the coupling strength and locate the synchronization threshold",
    "curve": "curve demos: prop32 (growth step), components, pullback",
    "polytope": "centre-point and eps-neighbourhood audit for random convex regions",
    "lemma": "constants table of the iteration lemma",
    "validate": "check a system definition",
}


def _dest(section, key):
    return f"cfg__{section}__{key}"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmllab", description="Coupled tent-map lattice toolkit.")
    p.add_argument("--version", action="version", version=f"cmllab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    for name, flags in _COMMAND_FLAGS.items():
        sp = sub.add_parser(name, help=_HELP[name])
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--seed", dest=_dest("run", "seed"))
        sp.add_argument("--out-dir", dest=_dest("run", "out_dir"))
        sp.add_argument("--format", dest=_dest("run", "format"), choices=["csv", "json"])
        sp.add_argument("--threads", dest=_dest("run", "threads"))
        for flag, section, key, kw in _SYSTEM_FLAGS:
            sp.add_argument(flag, dest=_dest(section, key), **kw)
        for flag, section, key in flags:
            sp.add_argument(flag, dest=_dest(section, key))
        if name == "simulate":
            sp.add_argument("--no-shadow", dest=_dest("orbit", "shadow"), action="store_const",
                            const=False, help="iterate the map literally, without the shadow offset")
        if name == "scan":
            sp.add_argument("--plot", dest=_dest("sweep", "plot"), action="store_const", const=True,
                            help="also write bifurcation.svg")
        if name == "curve":
            sp.add_argument("--start", dest=_dest("curve", "start"), nargs=2, metavar=("X1", "X2"))
            sp.add_argument("--end", dest=_dest("curve", "end"), nargs=2, metavar=("X1", "X2"))
    rp = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    rp.add_argument("manifest")
    rp.add_argument("--out-dir", help="where to write the replayed outputs (default: a temp dir)")
    return p


def flags_layer(ns: argparse.Namespace) -> dict:
    layer: dict = {}
    for k, v in vars(ns).items():
        if k.startswith("cfg__") and v is not None:
            _, section, key = k.split("__")
            layer.setdefault(section, {})[key] = v
    return layer


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if ns.command == "replay":
            ok, problems = replay(ns.manifest, ns.out_dir)
            if not ok:
                for line in problems:
                    print(f"replay mismatch: {line}", file=sys.stderr)
                return EXIT_RUNTIME
            print("replay identical")
            return EXIT_OK
        cfg = resolve(ns.config, flags_layer(ns))
        inputs = {}
        if ns.config:
            inputs["config_file"] = {"path": str(ns.config), "sha256": rio.sha256_file(ns.config)}
        run_command(ns.command, cfg, Path(cfg["run"]["out_dir"]), inputs)
        return EXIT_OK
    except _CONFIG_ERRORS as exc:
        print(f"cmllab {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EscapeError as exc:
        print(f"cmllab {ns.command}: escape: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CmlError, OSError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"cmllab {ns.command}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
