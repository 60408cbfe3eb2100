"""Command-line workflows: synthesize, fit, allocate, and analyze run logs.

Exit codes: 0 success, 2 usage error, 3 validation error, 4 fit failure,
5 I/O error.  Machine-readable outputs are written atomically (temp file
then rename) and every document carries a schema version.

Defaults for common flags can be supplied by a JSON file named by the
``CPTLAWS_CONFIG`` environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import tempfile

from . import allocator, fitter, ingest, laws, synth, transfer
from .errors import CptLawsError, FitError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_FIT = 4
EXIT_IO = 5

CONFIG_ENV_VAR = "CPTLAWS_CONFIG"

#: Flag destinations the environment config file may override.
_CONFIG_KEYS = (
    "delta",
    "warmup_fraction",
    "bins_per_decade",
    "levels",
    "resolution",
    "noise",
    "seed",
)

_PRESETS = {"paper-scratch": "scratch", "paper-cpt": "cpt"}


def _write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{os.path.basename(path)}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: str, doc: dict) -> None:
    _write_atomic(path, json.dumps(doc, indent=2) + "\n")


def _write_csv_atomic(path: str, write_fn) -> None:
    """Run a path-taking CSV exporter against a temp file, then rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{os.path.basename(path)}.")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_law(path: str):
    """Read a law from either a bare law document or a fit-report document."""
    doc = _load_json(path)
    if isinstance(doc, dict) and "params" in doc:
        doc = doc["params"]
    return laws.law_from_dict(doc)


def _parse_range(text: str) -> tuple[float, float]:
    lo, _, hi = text.partition(":")
    return float(lo), float(hi)


def cmd_fit(args) -> int:
    runs = ingest.load_runs(args.runs)
    cfg = fitter.FitConfig(delta=args.delta, warmup_fraction=args.warmup_fraction)
    if args.strategy == "scratch":
        if args.fixed_from:
            print("error: --fixed-from only applies to --strategy cpt", file=sys.stderr)
            return EXIT_USAGE
        report = fitter.fit_scratch(runs, cfg)
    else:
        if not args.fixed_from:
            print("error: --strategy cpt requires --fixed-from <scratch-fit.json>",
                  file=sys.stderr)
            return EXIT_USAGE
        base = _load_law(args.fixed_from)
        if not isinstance(base, laws.ChinchillaParams):
            print("error: --fixed-from must point at a from-scratch fit", file=sys.stderr)
            return EXIT_VALIDATION
        report = fitter.fit_cpt(runs, (base.E, base.A, base.alpha), cfg)
    _write_json(args.out, fitter.fit_report_to_dict(report))
    print(f"fitted {type(report.params).__name__} on {report.n_points} records")
    for field in dataclasses.fields(report.params):
        print(f"  {field.name:<10} = {getattr(report.params, field.name):.6g}")
    print(f"  objective  = {report.objective:.6g}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_frontier(args) -> int:
    runs = ingest.load_runs(args.runs)
    points = fitter.extract_compute_frontier(runs, args.bins_per_decade)
    params = fitter.fit_frontier(points, fix_offset_zero=args.fix_offset_zero)
    doc = {
        "schema_version": laws.SCHEMA_VERSION,
        "kind": "frontier_fit",
        "params": laws.law_to_dict(params),
        "n_points": len(points),
        "points": [[c, l] for c, l in points],
    }
    _write_json(args.out, doc)
    print(
        f"frontier over {len(points)} points: "
        f"L(C) = {params.offset:.4g} + {params.coefficient:.6g} * C^-{params.exponent:.6g}"
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_allocate(args) -> int:
    law = _load_law(args.fit)
    if isinstance(law, laws.FrontierParams):
        print("error: cannot derive an allocation from a frontier fit", file=sys.stderr)
        return EXIT_VALIDATION
    coeffs = allocator.allocation_coefficients(law)
    plan = allocator.optimal_allocation(coeffs, args.compute, law)
    doc = {
        "schema_version": laws.SCHEMA_VERSION,
        "kind": "allocation_plan",
        "coefficients": {"G": coeffs.G, "a": coeffs.a, "b": coeffs.b,
                         "k_N": coeffs.k_N, "k_D": coeffs.k_D},
        "compute": plan.compute,
        "n_opt": plan.n_opt,
        "d_opt": plan.d_opt,
        "predicted_loss": plan.predicted_loss,
    }
    if args.out:
        _write_json(args.out, doc)
    print(f"C = {plan.compute:.4g} FLOPs")
    print(f"  N_opt = {plan.n_opt:.4g} params  ({coeffs.k_N:.3g} * C^{coeffs.a:.4g})")
    print(f"  D_opt = {plan.d_opt:.4g} tokens  ({coeffs.k_D:.3g} * C^{coeffs.b:.4g})")
    print(f"  predicted loss = {plan.predicted_loss:.5g}")
    if args.out:
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_isoloss(args) -> int:
    law = _load_law(args.fit)
    if isinstance(law, laws.FrontierParams):
        print("error: isoloss needs a loss law, not a frontier fit", file=sys.stderr)
        return EXIT_VALIDATION
    grid = allocator.isoloss_grid(
        law, _parse_range(args.n_range), _parse_range(args.d_range), args.resolution
    )
    _write_csv_atomic(args.out, lambda tmp: allocator.export_isoloss_csv(grid, law, tmp))
    print(
        f"wrote {args.out}: {grid.loss_values.size} grid cells, "
        f"{len(grid.frontier)} frontier points"
    )
    return EXIT_OK


def _load_single_run(path: str) -> ingest.TrainingRun:
    runs = ingest.load_runs(path)
    if len(runs) != 1:
        raise ingest.ValidationError(
            f"{path} must contain exactly one run, found {len(runs)}"
        )
    return runs.runs[0]


def cmd_transfer(args) -> int:
    empirical = args.pt_run is not None or args.cpt_run is not None
    parametric = any(
        value is not None for value in (args.scratch_fit, args.cpt_fit, args.n, args.d)
    )
    if empirical == parametric:
        print(
            "error: use either --pt-run/--cpt-run or --scratch-fit/--cpt-fit/--n/--d",
            file=sys.stderr,
        )
        return EXIT_USAGE

    if empirical:
        if not (args.pt_run and args.cpt_run):
            print("error: empirical transfer needs both --pt-run and --cpt-run",
                  file=sys.stderr)
            return EXIT_USAGE
        report = transfer.empirical_transfer(
            _load_single_run(args.pt_run), _load_single_run(args.cpt_run), args.levels
        )
        if args.out:
            if args.out.endswith(".json"):
                _write_json(args.out, transfer.transfer_report_to_dict(report))
            else:
                _write_csv_atomic(args.out, lambda tmp: transfer.export_transfer_csv(report, tmp))
            print(f"wrote {args.out}")
        saved = report.flops_saved_fraction
        print(
            f"{len(saved)} loss levels; FLOPs saved "
            f"{min(saved):.3f} .. {max(saved):.3f}"
        )
        return EXIT_OK

    if None in (args.scratch_fit, args.cpt_fit, args.n, args.d):
        print("error: parametric transfer needs --scratch-fit, --cpt-fit, --n, and --d",
              file=sys.stderr)
        return EXIT_USAGE
    scratch = _load_law(args.scratch_fit)
    cpt = _load_law(args.cpt_fit)
    if not isinstance(scratch, laws.ChinchillaParams) or not isinstance(
        cpt, laws.ExtendedCptParams
    ):
        print("error: --scratch-fit must be a from-scratch law and --cpt-fit a CPT law",
              file=sys.stderr)
        return EXIT_VALIDATION
    moved = transfer.parametric_transfer(scratch, cpt, args.n, args.d)
    level = laws.eval_extended(cpt, args.n, args.d)
    doc = {
        "schema_version": laws.SCHEMA_VERSION,
        "kind": "parametric_transfer",
        "n": args.n,
        "d_cpt": args.d,
        "loss": level,
        "d_pt": args.d + moved,
        "transferred_tokens": moved,
    }
    if args.out:
        _write_json(args.out, doc)
        print(f"wrote {args.out}")
    print(f"loss at (N={args.n:.4g}, D={args.d:.4g}) = {level:.5g}")
    print(f"effectively transferred tokens = {moved:.5g}")
    return EXIT_OK


def cmd_replay(args) -> int:
    runs = ingest.load_runs(args.runs)
    curves = transfer.forgetting_curves(runs)
    if args.out.endswith(".json"):
        _write_json(args.out, transfer.forgetting_curves_to_dict(curves))
    else:
        _write_csv_atomic(args.out, lambda tmp: transfer.export_forgetting_csv(curves, tmp))
    print(f"wrote {args.out}: {len(curves)} forgetting curves")
    return EXIT_OK


def cmd_synth(args) -> int:
    if bool(args.preset) == bool(args.law):
        print("error: use exactly one of --preset or --law", file=sys.stderr)
        return EXIT_USAGE
    if args.preset:
        cfg = synth.paper_replica_config(_PRESETS[args.preset])
    else:
        law = _load_law(args.law)
        if isinstance(law, laws.FrontierParams):
            print("error: --law must be a loss law, not a frontier fit", file=sys.stderr)
            return EXIT_VALIDATION
        sizes = tuple(s.param_size_millions * 1_000_000 for s in ingest.load_catalog())
        cfg = synth.SynthConfig(law=law, param_sizes=sizes)
    cfg = dataclasses.replace(cfg, noise_sigma=args.noise, seed=args.seed)
    runs = synth.generate_runset(cfg)
    _write_atomic(args.out, ingest.serialize_runs(runs))
    total = sum(len(run.records) for run in runs)
    print(f"wrote {args.out}: {len(runs)} runs, {total} records")
    return EXIT_OK


def cmd_compare_laws(args) -> int:
    runs = ingest.load_runs(args.runs)
    cfg = fitter.FitConfig(delta=args.delta, warmup_fraction=args.warmup_fraction)
    comparison = fitter.compare_laws(runs, cfg)
    doc = {
        "schema_version": laws.SCHEMA_VERSION,
        "kind": "model_comparison",
        "chinchilla_error": comparison.chinchilla_error,
        "extended_error": comparison.extended_error,
        "gamma_fitted": comparison.gamma_fitted,
    }
    if args.out:
        _write_json(args.out, doc)
        print(f"wrote {args.out}")
    print(f"chinchilla objective = {comparison.chinchilla_error:.6g}")
    print(f"extended objective   = {comparison.extended_error:.6g}")
    print(f"fitted gamma         = {comparison.gamma_fitted:.4g}")
    return EXIT_OK


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    """The main parser plus a name -> subparser map (for default injection)."""
    parser = argparse.ArgumentParser(
        prog="cptlaws",
        description="Fit scaling laws to training-run logs and derive "
        "compute-optimal allocations and transfer metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers: dict[str, argparse.ArgumentParser] = {}

    def add_command(name: str, **kwargs) -> argparse.ArgumentParser:
        subparsers[name] = sub.add_parser(name, **kwargs)
        return subparsers[name]

    p = add_command("fit", help="fit a loss law to a run log")
    p.add_argument("--runs", required=True)
    p.add_argument("--strategy", required=True, choices=("scratch", "cpt"))
    p.add_argument("--fixed-from", help="from-scratch fit JSON supplying (E, A, alpha)")
    p.add_argument("--delta", type=float, default=fitter.DEFAULT_DELTA)
    p.add_argument("--warmup-fraction", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = add_command("frontier", help="extract and fit the loss-compute frontier")
    p.add_argument("--runs", required=True)
    p.add_argument("--bins-per-decade", type=int, default=10)
    p.add_argument("--fix-offset-zero", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_frontier)

    p = add_command("allocate", help="compute-optimal (N, D) for a budget")
    p.add_argument("--fit", required=True, help="law or fit-report JSON")
    p.add_argument("--compute", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_allocate)

    p = add_command("isoloss", help="loss grid and efficient frontier as CSV")
    p.add_argument("--fit", required=True)
    p.add_argument("--n-range", required=True, help="lo:hi in parameters")
    p.add_argument("--d-range", required=True, help="lo:hi in tokens")
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_isoloss)

    p = add_command("transfer", help="tokens and FLOPs saved by CPT")
    p.add_argument("--pt-run", help="run log holding the from-scratch run")
    p.add_argument("--cpt-run", help="run log holding the CPT run")
    p.add_argument("--scratch-fit", help="from-scratch law JSON (parametric route)")
    p.add_argument("--cpt-fit", help="CPT law JSON (parametric route)")
    p.add_argument("--n", type=float, help="model size for the parametric route")
    p.add_argument("--d", type=float, help="CPT token count for the parametric route")
    p.add_argument("--levels", type=int, default=transfer.DEFAULT_LEVELS)
    p.add_argument("--out")
    p.set_defaults(func=cmd_transfer)

    p = add_command("replay", help="forgetting curves from replay runs")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)

    p = add_command("synth", help="generate a synthetic run log")
    p.add_argument("--preset", choices=tuple(_PRESETS))
    p.add_argument("--law", help="loss-law JSON to generate from")
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = add_command("compare-laws", help="fit both law families and compare")
    p.add_argument("--runs", required=True)
    p.add_argument("--delta", type=float, default=fitter.DEFAULT_DELTA)
    p.add_argument("--warmup-fraction", type=float, default=0.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare_laws)

    return parser, subparsers


def _env_overrides() -> dict:
    path = os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        overrides = json.load(fh)
    if not isinstance(overrides, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return {k: v for k, v in overrides.items() if k in _CONFIG_KEYS}


def main(argv=None) -> int:
    try:
        overrides = _env_overrides()
    except (OSError, ValueError) as exc:
        print(f"error reading {CONFIG_ENV_VAR} config: {exc}", file=sys.stderr)
        return EXIT_IO
    parser, subparsers = build_parser()
    # Subcommands parse into a fresh namespace, so config-file defaults must
    # be installed on each subparser that defines the flag.
    for sub_parser in subparsers.values():
        dests = {action.dest for action in sub_parser._actions}
        sub_parser.set_defaults(**{k: v for k, v in overrides.items() if k in dests})
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (CptLawsError, ValueError) as exc:
        # ValueError covers malformed JSON documents and bad numeric flags
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
