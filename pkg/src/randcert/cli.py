"""Command-line frontend: ``randcert <command> ...``.

Every command that writes ``--out FILE`` also writes ``FILE.manifest.json``
holding the argument vector and resolved settings; ``randcert replay
MANIFEST`` repeats the run.  Scans write CSV with a units row in the header.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import multiprocessing
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bell import (CHSH_SCENARIO, BellExpression, Behavior, InputDistribution, InvalidBehavior,
                   Scenario, ScenarioMismatch, chsh_expression, evaluate_bell, gamma_expression)
from .certificate import (CertificateError, check_certificate, extract_certificate, fingerprint,
                          fit_gamma, verify_certificate)
from .models import (BINNINGS, EberhardConfig, NoViolationError, eberhard_behavior,
                     gamma_optimal_behavior, max_chsh_behavior, optimize_eberhard)
from .pipeline import (CountsRecord, InvalidCounts, behavior_document, check_quantum_membership,
                       process_counts, reference_document, reference_behavior)
from .programs import (DEFAULT_BLOCK_BUDGET, BlockBudgetExceeded, GuessingResult, InfeasibleError,
                       guessing_from_violation, guessing_weighted)
from .solver import SolverError, SolverSettings

log = logging.getLogger("randcert")

EXIT_OK, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_INPUT = 0, 2, 3, 4
LEVELS = ("local-1", "npa-2", "ns")
ETA_MODES = ("chsh-fixed", "full2-fixed", "full3-fixed", "chsh-uniform", "full2-uniform")


class InputError(ValueError):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list
    input_paths: list = field(default_factory=list)
    scenario: dict | None = None
    level: str | None = None
    inputs: dict | None = None
    solver: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    seed: int | None = None
    version: str = __version__

    def write(self, path) -> Path:
        path = Path(str(path) + ".manifest.json")
        path.write_text(json.dumps(asdict(self), indent=2))
        return path


# -- argument helpers ------------------------------------------------------------------------

def parse_inputs(spec: str, scenario: Scenario) -> InputDistribution:
    """``uniform``, ``point:x,y`` or a JSON file with a ``weights`` table."""
    if spec == "uniform":
        return InputDistribution.uniform(scenario)
    if spec.startswith("point:"):
        try:
            x, y = (int(t) for t in spec[6:].split(","))
        except ValueError as exc:
            raise InputError(f"bad input spec {spec!r}; expected point:x,y") from exc
        if not (0 <= x < scenario.num_inputs_a and 0 <= y < scenario.num_inputs_b):
            raise InputError(f"input pair ({x}, {y}) outside the scenario")
        return InputDistribution.point(scenario, x, y)
    doc = _load_json(spec)
    p = InputDistribution(np.asarray(doc["weights"], dtype=float))
    p.check_scenario(scenario)
    return p


def parse_expression(spec: str) -> BellExpression:
    """``chsh``, ``gamma:G`` or a JSON file written by :meth:`BellExpression.to_dict`."""
    if spec == "chsh":
        return chsh_expression()
    if spec.startswith("gamma:"):
        try:
            return gamma_expression(float(spec[6:]))
        except ValueError as exc:
            raise InputError(f"bad gamma in {spec!r}") from exc
    return BellExpression.from_dict(_load_json(spec))


def parse_grid(spec: str) -> np.ndarray:
    """``start:stop:num`` (inclusive) or a comma-separated list."""
    try:
        if ":" in spec:
            a, b, n = spec.split(":")
            return np.linspace(float(a), float(b), int(n))
        return np.array([float(t) for t in spec.split(",")])
    except ValueError as exc:
        raise InputError(f"bad grid {spec!r}") from exc


def _load_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InputError(f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc


def load_behavior(spec: str) -> Behavior:
    """A behavior JSON file, or ``reference`` for the bundled dataset."""
    if spec == "reference":
        return reference_behavior()
    return Behavior.from_dict(_load_json(spec))


def settings_from(args) -> SolverSettings:
    return SolverSettings(backend=args.backend, feas_tol=args.tol, gap_tol=args.tol)


def _status_code(status: str) -> int:
    return EXIT_OK if status == "optimal" else EXIT_SOLVER


def _emit(args, doc: dict, manifest: RunManifest, summary: str) -> None:
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2))
        manifest.outputs.append(str(args.out))
        manifest.write(args.out)
        print(summary)
    else:
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")


def _manifest(args, P_scenario=None, p=None, paths=()) -> RunManifest:
    return RunManifest(command=args.command, argv=list(args.argv), input_paths=list(paths),
                       scenario=P_scenario.to_dict() if P_scenario is not None else None,
                       level=getattr(args, "level", None),
                       inputs=p.to_dict() if p is not None else None,
                       solver=asdict(settings_from(args)), seed=getattr(args, "seed", None))


def result_document(result: GuessingResult) -> dict:
    doc = result.to_dict()
    if result.behavior is not None:
        doc["behavior"] = result.behavior.to_dict()
    if result.expression is not None:
        doc["expression"] = result.expression.to_dict()
        doc["bell_value"] = result.bell_value
    if result.inputs is not None:
        doc["inputs"] = result.inputs.to_dict()
    doc["fingerprint"] = fingerprint(result.behavior, result.inputs, result.level)
    return doc


def _summary(result: GuessingResult) -> str:
    return (f"min-entropy {result.min_entropy:.8g} bits  G={result.G:.10g}  "
            f"status={result.status}  level={result.level}  gap={result.gap:.2g}")


# -- commands --------------------------------------------------------------------------------

def cmd_certify(args) -> int:
    P = load_behavior(args.behavior)
    p = parse_inputs(args.inputs, P.scenario)
    result = guessing_weighted(P, p, args.level, settings_from(args), budget=args.blocks_budget)
    paths = [] if args.behavior == "reference" else [args.behavior]
    _emit(args, result_document(result), _manifest(args, P.scenario, p, paths), _summary(result))
    return _status_code(result.status)


def cmd_certify_violation(args) -> int:
    expr = parse_expression(args.expr)
    p = parse_inputs(args.inputs, expr.scenario)
    result = guessing_from_violation(expr, args.value, p, args.level, settings_from(args),
                                     budget=args.blocks_budget)
    _emit(args, result_document(result), _manifest(args, expr.scenario, p), _summary(result))
    return _status_code(result.status)


def cmd_project(args) -> int:
    rec = CountsRecord.from_csv(args.counts)
    P, provenance = process_counts(rec)
    provenance["source"] = str(args.counts)
    doc = behavior_document(P, provenance)
    chsh = evaluate_bell(chsh_expression(), P) if P.scenario == CHSH_SCENARIO else None
    summary = f"projected behavior written; residual norm {provenance['projection_residual_norm']:.3g}"
    if chsh is not None:
        doc["chsh_value"] = chsh
        summary += f"; CHSH {chsh:.7f}"
    _emit(args, doc, _manifest(args, P.scenario, None, [args.counts]), summary)
    return EXIT_OK


def violation_row(expr: BellExpression, v: float, p: InputDistribution, level: str,
                  settings: SolverSettings, budget: int) -> dict:
    lb = expr.local_bound
    if lb is not None and v <= lb:
        # local values allow a deterministic decomposition
        return {"v": v, "min_entropy": 0.0, "G": 1.0, "status": "local"}
    try:
        r = guessing_from_violation(expr, v, p, level, settings, budget=budget)
    except InfeasibleError:
        return {"v": v, "min_entropy": math.nan, "G": math.nan, "status": "infeasible"}
    return {"v": v, "min_entropy": r.min_entropy, "G": r.G, "status": r.status}


def _violation_task(a):
    expr_doc, v, w, level, settings, budget = a
    return violation_row(BellExpression.from_dict(expr_doc), v, InputDistribution(np.asarray(w)),
                         level, settings, budget)


def _parallel(fn, tasks, jobs: int) -> list:
    if jobs <= 1:
        return [fn(t) for t in tasks]
    # spawn: forking after the solvers start OpenMP threads is unsafe
    with ProcessPoolExecutor(max_workers=jobs, mp_context=multiprocessing.get_context("spawn")) as pool:
        return list(pool.map(fn, tasks))      # map keeps grid order


def _write_csv(path, header, units, rows) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerow(units)
        for row in rows:
            w.writerow([_fmt(row[h]) for h in header])
    finally:
        if path:
            fh.close()


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def cmd_scan_violation(args) -> int:
    expr = parse_expression(args.expr)
    p = parse_inputs(args.inputs, expr.scenario)
    grid = np.sort(parse_grid(args.grid))
    settings = settings_from(args)
    tasks = [(expr.to_dict(), float(v), p.weights.tolist(), args.level, settings, args.blocks_budget)
             for v in grid]
    rows = _parallel(_violation_task, tasks, args.jobs)
    _write_csv(args.out, ["v", "min_entropy", "G", "status"],
               ["dimensionless", "bits", "probability", ""], rows)
    if args.out:
        m = _manifest(args, expr.scenario, p)
        m.outputs.append(str(args.out))
        m.write(args.out)
    return max(EXIT_OK if r["status"] in ("optimal", "local") else EXIT_SOLVER for r in rows)


def eta_row(eta: float, mode: str, level: str, settings: SolverSettings | None = None,
            seed: int = 0, budget: int = DEFAULT_BLOCK_BUDGET) -> dict:
    """One point of an efficiency scan; angles maximize the binned CHSH value."""
    if mode not in ETA_MODES:
        raise InputError(f"unknown mode {mode!r}")
    fit = optimize_eberhard(eta, seed=seed)
    cfg = fit.config
    row = {"eta": eta, "chsh": fit.value, "theta": cfg.theta, "alpha1": cfg.alpha1,
           "alpha2": cfg.alpha2, "gamma": math.nan, "gamma_residual": math.nan}
    if not fit.violates:
        return {**row, "min_entropy": 0.0, "status": "local"}
    binned = eberhard_behavior(cfg)
    s = binned.scenario
    p = InputDistribution.uniform(s) if mode.endswith("uniform") else InputDistribution.point(s, 0, 0)
    if mode.startswith("chsh"):
        r = guessing_from_violation(chsh_expression(), fit.value, p, level, settings, budget=budget)
    elif mode.startswith("full3"):
        P3 = eberhard_behavior(cfg.with_binning("three-outcome"))
        r = guessing_weighted(P3, InputDistribution.point(P3.scenario, 0, 0), level, settings,
                              budget=budget)
    else:
        r = guessing_weighted(binned, p, level, settings, budget=budget)
        if mode == "full2-fixed":
            g = fit_gamma(extract_certificate(r).bell)
            row.update(gamma=g.gamma, gamma_residual=g.residual)
    return {**row, "min_entropy": max(r.min_entropy, 0.0), "status": r.status}


def _eta_task(a):
    return eta_row(*a)


def cmd_scan_eta(args) -> int:
    grid = np.sort(parse_grid(args.grid))
    settings = settings_from(args)
    tasks = [(float(e), args.mode, args.level, settings, args.seed, args.blocks_budget) for e in grid]
    rows = _parallel(_eta_task, tasks, args.jobs)
    header = ["eta", "chsh", "min_entropy", "theta", "alpha1", "alpha2", "gamma",
              "gamma_residual", "status"]
    units = ["dimensionless", "dimensionless", "bits", "rad", "rad", "rad", "dimensionless",
             "dimensionless", ""]
    _write_csv(args.out, header, units, rows)
    if args.out:
        m = _manifest(args, CHSH_SCENARIO)
        m.outputs.append(str(args.out))
        m.write(args.out)
    return max(EXIT_OK if r["status"] in ("optimal", "local") else EXIT_SOLVER for r in rows)


def resolve_result(doc: dict, settings: SolverSettings | None = None,
                   budget: int = DEFAULT_BLOCK_BUDGET) -> GuessingResult:
    """Re-solve the program described by a result document."""
    level = doc["level"]
    if "behavior" in doc:
        P = Behavior.from_dict(doc["behavior"])
        p = InputDistribution(np.asarray(doc["inputs"]["weights"], dtype=float))
        return guessing_weighted(P, p, level, settings, budget=budget)
    if "expression" in doc:
        expr = BellExpression.from_dict(doc["expression"])
        p = InputDistribution(np.asarray(doc["inputs"]["weights"], dtype=float))
        return guessing_from_violation(expr, doc["bell_value"], p, level, settings, budget=budget)
    raise InputError("result document has neither a behavior nor an expression")


def cmd_certificate(args) -> int:
    doc = _load_json(args.result)
    settings = settings_from(args)
    result = resolve_result(doc, settings, args.blocks_budget)
    cert = extract_certificate(result, gap_tol=args.gap_tol)
    checks = check_certificate(cert, result)
    out = cert.to_dict()
    out["checks"] = checks
    if result.behavior is not None:
        out["verified_bound"] = verify_certificate(cert, result.behavior, result.inputs,
                                                   result.level, settings, budget=args.blocks_budget)
    if cert.bell.scenario.shape == (2, 2, 2, 2):
        g = fit_gamma(cert.bell)
        out["gamma_fit"] = {"gamma": g.gamma, "scale": g.scale, "residual": g.residual}
    summary = (f"certificate bound {cert.claimed_bound:.10g}  checks ok={checks['ok']}  "
               f"advisory={cert.advisory}")
    if "verified_bound" in out:
        summary += f"  verified {out['verified_bound']:.10g}"
    _emit(args, out, _manifest(args, cert.bell.scenario, result.inputs, [args.result]), summary)
    if not checks["ok"] or cert.advisory:
        return EXIT_SOLVER
    return _status_code(result.status)


def cmd_check_quantum(args) -> int:
    P = load_behavior(args.behavior)
    level = "local-1" if args.level == "ns" else args.level
    rep = check_quantum_membership(P, level, tol=args.membership_tol, settings=settings_from(args))
    doc = rep.to_dict()
    summary = f"{'inside' if rep.feasible else 'outside'} the {level} relaxation (margin {rep.margin:.3g})"
    paths = [] if args.behavior == "reference" else [args.behavior]
    _emit(args, doc, _manifest(args, P.scenario, None, paths), summary)
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


def cmd_model(args) -> int:
    provenance: dict = {}
    if args.preset == "max-chsh":
        P = max_chsh_behavior()
        provenance["model"] = "maximal CHSH violation"
    elif args.gamma is not None:
        P = gamma_optimal_behavior(args.gamma)
        provenance["model"] = {"gamma": args.gamma}
    else:
        angles = (args.theta, args.alpha1, args.alpha2)
        if all(a is not None for a in angles):
            cfg = EberhardConfig(args.theta, args.alpha1, args.alpha2, args.eta, args.binning)
        elif any(a is not None for a in angles):
            raise InputError("give all of --theta, --alpha1, --alpha2 or none")
        else:
            fit = optimize_eberhard(args.eta, objective=args.objective, level=args.opt_level,
                                    seed=args.seed)
            cfg = fit.config.with_binning(args.binning)
            provenance["optimized"] = {"objective": args.objective, "value": fit.value,
                                       "violates": fit.violates}
        P = eberhard_behavior(cfg)
        provenance["model"] = cfg.to_dict()
    doc = behavior_document(P, provenance)
    if P.scenario == CHSH_SCENARIO:
        doc["chsh_value"] = evaluate_bell(chsh_expression(), P)
    _emit(args, doc, _manifest(args, P.scenario), "behavior written")
    return EXIT_OK


def cmd_reference(args) -> int:
    json.dump(reference_document(), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_replay(args) -> int:
    m = _load_json(args.manifest)
    return main(m["argv"])


# -- parser ----------------------------------------------------------------------------------

def _common(sp, level_default="local-1", inputs=True):
    sp.add_argument("--level", choices=LEVELS, default=level_default)
    if inputs:
        sp.add_argument("--inputs", default="uniform",
                        help="uniform | point:x,y | JSON file with a weights table")
    sp.add_argument("--tol", type=float, default=1e-8, help="solver feasibility and gap tolerance")
    sp.add_argument("--backend", choices=("auto", "clarabel", "qics", "highs"), default="auto")
    sp.add_argument("--blocks-budget", type=int, default=DEFAULT_BLOCK_BUDGET)
    sp.add_argument("--out", help="output file (stdout when omitted)")
    sp.add_argument("--seed", type=int, default=0, help="seed for angle searches")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes for scans")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="randcert", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("certify", help="guessing bound from full statistics")
    sp.add_argument("behavior", help="behavior JSON, or 'reference' for the bundled dataset")
    _common(sp)
    sp.set_defaults(func=cmd_certify)

    sp = sub.add_parser("certify-violation", help="guessing bound from one Bell value")
    sp.add_argument("--expr", default="chsh", help="chsh | gamma:G | expression JSON")
    sp.add_argument("--value", type=float, required=True)
    _common(sp)
    sp.set_defaults(func=cmd_certify_violation)

    sp = sub.add_parser("project", help="counts CSV to a no-signalling behavior")
    sp.add_argument("counts")
    _common(sp, inputs=False)
    sp.set_defaults(func=cmd_project)

    sp = sub.add_parser("scan-violation", help="min-entropy against Bell value (CSV)")
    sp.add_argument("--expr", default="chsh")
    sp.add_argument("--grid", default="2:2.8284271247461903:21", help="start:stop:num or v1,v2,...")
    _common(sp)
    sp.set_defaults(func=cmd_scan_violation)

    sp = sub.add_parser("scan-eta", help="min-entropy against detection efficiency (CSV)")
    sp.add_argument("--mode", choices=ETA_MODES, default="full2-fixed")
    sp.add_argument("--grid", default="0.7:1:7")
    _common(sp, inputs=False)
    sp.set_defaults(func=cmd_scan_eta)

    sp = sub.add_parser("certificate", help="extract and check the certificate of a result")
    sp.add_argument("result", help="result JSON written by certify or certify-violation")
    sp.add_argument("--gap-tol", type=float, default=1e-6)
    _common(sp, inputs=False)
    sp.set_defaults(func=cmd_certificate)

    sp = sub.add_parser("check-quantum", help="membership in a moment relaxation")
    sp.add_argument("behavior")
    sp.add_argument("--membership-tol", type=float, default=1e-7)
    _common(sp, inputs=False)
    sp.set_defaults(func=cmd_check_quantum)

    sp = sub.add_parser("model", help="behavior from a two-qubit model")
    sp.add_argument("--eta", type=float, default=1.0)
    sp.add_argument("--theta", type=float)
    sp.add_argument("--alpha1", type=float)
    sp.add_argument("--alpha2", type=float)
    sp.add_argument("--binning", choices=BINNINGS, default="bin-to-outcome-1")
    sp.add_argument("--objective", choices=("chsh-value", "min-entropy"), default="chsh-value")
    sp.add_argument("--opt-level", choices=LEVELS[:2], default="local-1")
    sp.add_argument("--preset", choices=("max-chsh",))
    sp.add_argument("--gamma", type=float, help="optimal behavior for the gamma family")
    _common(sp, inputs=False)
    sp.set_defaults(func=cmd_model)

    sp = sub.add_parser("reference", help="print the bundled dataset with provenance")
    sp.set_defaults(func=cmd_reference)

    sp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    sp.add_argument("manifest")
    sp.set_defaults(func=cmd_replay)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SolverError, CertificateError, NoViolationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, InvalidCounts, InvalidBehavior, ScenarioMismatch, BlockBudgetExceeded,
            KeyError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT

if __name__ == "__main__":
    sys.exit(main())
