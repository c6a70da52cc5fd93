"""Command-line interface: ``percentile-rmdp {solve,bench,validate,export-domain}``.

Exit codes are 0 on success, 1 when a guarantee check fails and 2 on
errors, including failed benchmark cells.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import pipeline
from .domains import DomainSpec
from .mdp import write_mdp_csv

EXIT_OK, EXIT_VALIDATION, EXIT_ERROR = 0, 1, 2


def _add_config_flags(parser, multi=False):
    many = "+" if multi else None
    parser.add_argument("--config", help="INI file with an [experiment] section")
    parser.add_argument("--domain", nargs=many)
    parser.add_argument("--param", action="append", default=None, metavar="KEY=VALUE",
                        help="domain parameter, repeatable (e.g. discount=0.99)")
    parser.add_argument("--mode", nargs=many, choices=["bayesian", "frequentist"])
    parser.add_argument("--norm", choices=["l1", "linf"])
    parser.add_argument("--shape-mode", choices=["uniform", "analytic", "socp"])
    parser.add_argument("--delta", type=float, nargs=many)
    parser.add_argument("--n-samples", type=int)
    parser.add_argument("--dataset-size", type=int)
    parser.add_argument("--dataset-mode", choices=["per_pair", "trajectory"])
    parser.add_argument("--seeds", type=int, nargs="+")
    parser.add_argument("--output-dir")
    parser.add_argument("--validation-samples", type=int)
    parser.add_argument("--inequality", choices=["hoeffding_l1", "hoeffding_linf", "bernstein_l1"])
    parser.add_argument("--split-data", action="store_true", default=None)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--prior-concentration", type=float)
    parser.add_argument("--jobs", type=int, help="worker processes for the seed loop")


def _config_from_args(args, **overrides) -> pipeline.ExperimentConfig:
    config = pipeline.load_config(args.config) if args.config else pipeline.ExperimentConfig()
    values = {}
    for f in dataclasses.fields(pipeline.ExperimentConfig):
        value = getattr(args, f.name, None)
        if f.name == "seeds" and value is not None:
            value = tuple(value)
        if value is not None and not isinstance(value, list):
            values[f.name] = value
    if args.param:
        values["domain_params"] = pipeline._parse_value("domain_params", ",".join(args.param))
    values.update(overrides)
    return dataclasses.replace(config, **values)


def _cmd_solve(args) -> int:
    config = _config_from_args(args)
    ctx = pipeline.prepare_seed(config, config.seeds[0])
    amb, sol = pipeline.run_algorithm1(config, context=ctx)
    print(f"domain={config.domain} mode={config.mode} "
          f"method={pipeline.method_label(config.norm, config.shape_mode)} delta={config.delta:g}")
    print(f"robust_return={sol.robust_return!r} nominal_return={ctx.nominal_return!r} "
          f"loss={pipeline.normalized_loss(ctx.nominal_return, sol.robust_return):.6f}")
    print(f"iterations={sol.iterations} residual={sol.residual:.3e}")
    print("policy=" + " ".join(str(a) for a in sol.policy))
    if config.output_dir:
        print(f"artifacts: {pipeline.run_directory(config, config.seeds[0])}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    config = _config_from_args(args, mode="bayesian")
    ctx = pipeline.prepare_seed(config, config.seeds[0])
    amb, sol = pipeline.run_algorithm1(config, context=ctx)
    report = pipeline.validate_guarantee(config, amb, sol, context=ctx)
    status = "ok" if report.passed else "FAILED"
    print(f"robust_return={sol.robust_return!r}")
    print(f"guarantee_fraction={report.fraction:.4f} threshold={report.threshold:.4f} "
          f"coverage={report.coverage:.4f} samples={report.n_samples} {status}")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def _cmd_bench(args) -> int:
    base = _config_from_args(args)
    domains = args.domain or [base.domain]
    modes = args.mode or [base.mode]
    deltas = args.delta or [base.delta]
    rows = []
    for domain in domains:
        for mode in modes:
            for delta in deltas:
                cfg = dataclasses.replace(base, domain=domain, mode=mode, delta=delta,
                                          validate=args.validate, output_dir=None)
                rows.extend(pipeline.run_experiment(cfg))
    if base.output_dir:
        pipeline.write_results(rows, base.output_dir)
    print(pipeline.format_table(pipeline.summarize(rows)), end="")
    print("seeds: " + " ".join(str(s) for s in base.seeds))
    errors = [r for r in rows if r.error]
    for row in errors:
        print(f"error: {row.domain} {row.mode} {row.method} seed {row.seed}: {row.error}",
              file=sys.stderr)
    if errors:
        return EXIT_ERROR
    failed = [r for r in rows if r.guarantee is not None
              and r.guarantee < 1.0 - r.delta - pipeline.GUARANTEE_MARGIN]
    for row in failed:
        print(f"guarantee below threshold: {row.domain} {row.method} seed {row.seed}: "
              f"{row.guarantee:.3f}", file=sys.stderr)
    if failed:
        return EXIT_VALIDATION
    return EXIT_OK


def _cmd_export(args) -> int:
    spec = DomainSpec(args.name, pipeline._parse_value("domain_params", ",".join(args.param or [])))
    mdp, model = spec.build()
    if not hasattr(model, "shape"):
        model = model.mean()
    write_mdp_csv(Path(args.output), mdp, model)
    print(f"wrote {spec.name} ({mdp.num_states} states, {mdp.num_actions} actions) to {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="percentile-rmdp",
                                     description="Percentile-criterion policies via robust MDPs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="build one ambiguity set and solve the robust MDP")
    _add_config_flags(solve)
    solve.set_defaults(func=_cmd_solve)

    bench = sub.add_parser("bench", help="run the method grid over seeds")
    _add_config_flags(bench, multi=True)
    bench.add_argument("--validate", action="store_true",
                       help="check the return guarantee on fresh posterior draws")
    bench.set_defaults(func=_cmd_bench)

    validate = sub.add_parser("validate", help="Monte-Carlo check of the return guarantee")
    _add_config_flags(validate)
    validate.set_defaults(func=_cmd_validate)

    export = sub.add_parser("export-domain", help="write a built-in domain as CSV")
    export.add_argument("name")
    export.add_argument("output")
    export.add_argument("--param", action="append", metavar="KEY=VALUE")
    export.set_defaults(func=_cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except Exception as exc:  # report any failure as an error exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
