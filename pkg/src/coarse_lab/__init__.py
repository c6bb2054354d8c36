import argparse
import json
import logging
import math
import sys
from pathlib import Path

from rich.console import Console
from rich.table import Table

from .coarse_modules import domain, make_module, uniform_module
from .coarse_space import relation_closeness
from .config import load_config
from .harness import (
    KINDS,
    ExperimentConfig,
    build_scrambled_unitary,
    experiment_modules,
    gen_equivalence,
    gen_space,
    render_heatmap,
    sweep,
    write_csv,
)
from .laws import SUITES, verify_laws
from .operators import Operator, random_band_operator
from .rigidity import MODES, extract_embedding
from .serialization import (
    dims_from_json,
    dumps,
    lfcm_from_json,
    lfcm_to_json,
    map_to_json,
    measurable_map_from_json,
    module_from_json,
    module_to_json,
    operator_from_json,
    operator_to_json,
    read_matrix_binary,
    relation_to_json,
    write_matrix_binary,
)
from .utils import CoarseLabError, as_scale, configure_logging, scale_to_json

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_INPUT = 0, 1, 2

console = Console(stderr=True)


def parse_schedule(text: str):
    """``"a,b;c,d"`` into ``[(a, b), (c, d)]``; ``inf`` is accepted."""
    steps = []
    for chunk in text.split(";"):
        if not chunk.strip():
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise CoarseLabError(f"Schedule step {chunk!r} is not of the form F,E")
        steps.append((as_scale(parts[0].strip()), as_scale(parts[1].strip())))
    if not steps:
        raise CoarseLabError("Empty schedule")
    return steps


def _read_json(path):
    return json.loads(Path(path).read_text())


def _read_dims(path):
    if path is None:
        return None
    data = _read_json(path)
    return dims_from_json(data["dims"] if isinstance(data, dict) and "dims" in data else data)


def _emit(payload, out=None):
    text = dumps(payload)
    if out:
        Path(out).write_text(text + "\n")
        logger.info(f"Wrote {out}")
    else:
        print(text)


def _load_unitary(args):
    """Read the bundle written by ``build-unitary`` (or a CRLB matrix with ``--space``)."""
    if args.unitary.endswith(".crlb"):
        if not args.space:
            raise CoarseLabError("A CRLB matrix needs --space")
        X = lfcm_from_json(_read_json(args.space))
        dims = _read_dims(args.module)
        C = uniform_module(X) if dims is None else make_module(X, dims)
        return X, Operator(C, C, read_matrix_binary(args.unitary))
    bundle = _read_json(args.unitary)
    X = lfcm_from_json(bundle["space"])
    C_X = module_from_json(bundle["source_module"], X)
    C_Y = module_from_json(bundle["target_module"], X)
    return X, operator_from_json(bundle["operator"], C_X, C_Y)


def cmd_gen_space(args, config):
    X = gen_space(args.kind, args.size, args.seed, args.components)
    _emit(lfcm_to_json(X), args.out)
    return EXIT_OK


def cmd_gen_map(args, config):
    X = lfcm_from_json(_read_json(args.space))
    equivalence = gen_equivalence(X, args.distortion, args.seed)
    _emit(
        {
            "forward": map_to_json(equivalence.forward.map),
            "inverse": map_to_json(equivalence.inverse.map),
            "distortion": args.distortion,
        },
        args.out,
    )
    return EXIT_OK


def cmd_build_unitary(args, config):
    X = lfcm_from_json(_read_json(args.space))
    f = measurable_map_from_json(_read_json(args.map)["forward"], X, X)
    C_X, C_Y = experiment_modules(X, f, _read_dims(args.module))
    U = build_scrambled_unitary(f, C_X, C_Y, args.scramble, args.seed)
    if args.out and args.out.endswith(".crlb"):
        write_matrix_binary(U.matrix, args.out)
        return EXIT_OK
    _emit(
        {
            "space": lfcm_to_json(X),
            "source_module": module_to_json(C_X),
            "target_module": module_to_json(C_Y),
            "scramble": args.scramble,
            "operator": operator_to_json(U),
        },
        args.out,
    )
    return EXIT_OK


def cmd_extract(args, config):
    X, U = _load_unitary(args)
    schedule = parse_schedule(args.schedule) if args.schedule else None
    result = extract_embedding(
        U,
        delta=args.delta,
        schedule=schedule,
        mode=args.mode,
        thresholds=config.thresholds,
        threads=config.threads,
    )
    report = {"extraction": result.as_dict(), "relation": relation_to_json(result.relation)}
    status = EXIT_OK if result.success else EXIT_FAILED
    if args.map:
        f = measurable_map_from_json(_read_json(args.map)["forward"], X, X)
        covered = X.points_of(domain(U.source, 1).blocks)
        closeness = relation_closeness(result.relation, f.map, covered)
        report["closeness"] = scale_to_json(closeness)
        report["verdict"] = "not_recovered" if math.isinf(closeness) else "recovered"
        status = EXIT_OK if report["verdict"] == "recovered" else EXIT_FAILED
    _emit(report, args.out)
    return status


def cmd_verify_laws(args, config):
    suites = sorted(SUITES) if args.suite == "all" else [args.suite]
    reports = [verify_laws(suite, args.count, args.seed) for suite in suites]
    table = Table(title="Law verification")
    table.add_column("suite")
    table.add_column("checked", justify="right")
    table.add_column("failures", justify="right")
    table.add_column("verdict")
    for report in reports:
        table.add_row(
            report.suite,
            str(report.checked),
            str(len(report.failures)),
            "[green]passed[/green]" if report.passed else "[red]failed[/red]",
        )
    console.print(table)
    _emit([report.as_dict() for report in reports], args.out)
    return EXIT_OK if all(report.passed for report in reports) else EXIT_FAILED


def cmd_sweep(args, config):
    base = ExperimentConfig(
        kind=args.kind,
        size=args.size,
        components=args.components,
        distortion=args.distortion,
        scramble=args.scramble,
        delta=args.delta,
        schedule=tuple(parse_schedule(args.schedule)) if args.schedule else None,
        seed=args.seed,
        mode=args.mode,
        dims=_read_dims(args.module),
    )
    seeds = range(args.seed, args.seed + args.runs)
    results = sweep(base, seeds, config.threads, config)
    if args.csv:
        write_csv(results, args.csv)
    within = sum(r.within_bound for r in results)
    console.print(f"{within}/{len(results)} run(s) within the recovery bound")
    _emit([r.to_json() for r in results], args.out)
    return EXIT_OK if all(r.verdict == "recovered" for r in results) else EXIT_FAILED


def cmd_heatmap(args, config):
    if args.unitary:
        _, t = _load_unitary(args)
    else:
        C = uniform_module(gen_space("interval", args.size))
        t = random_band_operator(C, args.band, args.seed)
    render_heatmap(t, args.out or "heatmap.pgm")
    return EXIT_OK


def cmd_serve(args, config):
    from .server import create_server

    # Create the server with appropriate settings
    if args.transport == "http":
        logger.info(
            f"Starting MCP server on {args.host}:{args.port} with HTTP transport"
        )
        server = create_server(
            host=args.host, port=args.port, stateless_http=args.stateless_http
        )
        server.run(transport="streamable-http")
    else:
        logger.info("Starting MCP server with stdio transport")
        server = create_server()
        server.run(transport="stdio")
    return EXIT_OK


def _add_extraction_flags(parser):
    parser.add_argument("--delta", type=float, default=0.1, help="Block-norm threshold (default: 0.1)")
    parser.add_argument("--schedule", help='Parameter schedule "F,E;F,E" (default: doubling)')
    parser.add_argument("--mode", choices=MODES, default="blocks", help="Relation mode (default: blocks)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coarse-lab",
        description="Coarse geometry laboratory: rigidity of Roe-like algebras, computed.",
    )
    parser.add_argument("--config", help="JSON file overriding LabConfig fields")
    parser.add_argument("--verbose", "-v", action="store_true", help="Log at DEBUG level")
    commands = parser.add_subparsers(dest="command", required=True)

    def command(name, handler, help):
        sub = commands.add_parser(name, help=help)
        sub.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
        sub.add_argument("--out", help="Output file (default: stdout)")
        sub.set_defaults(handler=handler)
        return sub

    sub = command("gen-space", cmd_gen_space, "Generate an experiment space")
    sub.add_argument("kind", choices=KINDS)
    sub.add_argument("size", type=int)
    sub.add_argument("--components", type=int, default=2, help="Parts of multi_component")

    sub = command("gen-map", cmd_gen_map, "Generate a ground-truth coarse equivalence")
    sub.add_argument("space", help="Space JSON")
    sub.add_argument("--distortion", "-D", type=int, default=1)

    sub = command("build-unitary", cmd_build_unitary, "Scramble a map into a unitary")
    sub.add_argument("space", help="Space JSON")
    sub.add_argument("map", help="Map JSON from gen-map")
    sub.add_argument("--scramble", "-p", type=int, default=0)
    sub.add_argument("--module", help="Dimension vector JSON of the source module")

    sub = command("extract", cmd_extract, "Extract a coarse equivalence from a unitary")
    sub.add_argument("unitary", help="Bundle JSON from build-unitary, or a .crlb matrix")
    sub.add_argument("--map", help="Ground-truth map JSON; reports closeness to truth")
    sub.add_argument("--space", help="Space JSON (for .crlb input)")
    sub.add_argument("--module", help="Dimension vector JSON (for .crlb input)")
    _add_extraction_flags(sub)

    sub = command("verify-laws", cmd_verify_laws, "Run a law verification suite")
    sub.add_argument("suite", choices=sorted(SUITES) + ["all"])
    sub.add_argument("--count", type=int, help="Instances per suite")

    sub = command("sweep", cmd_sweep, "Run seeded recovery experiments")
    sub.add_argument("--kind", choices=KINDS, default="interval")
    sub.add_argument("--size", type=int, default=50)
    sub.add_argument("--components", type=int, default=1)
    sub.add_argument("--distortion", "-D", type=int, default=1)
    sub.add_argument("--scramble", "-p", type=int, default=0)
    sub.add_argument("--runs", type=int, default=20, help="Number of consecutive seeds")
    sub.add_argument("--module", help="Dimension vector JSON of the source module")
    sub.add_argument("--csv", help="Also write a CSV summary")
    _add_extraction_flags(sub)

    sub = command("heatmap", cmd_heatmap, "Render block norms as a PGM image")
    sub.add_argument("unitary", nargs="?", help="Bundle JSON or .crlb matrix")
    sub.add_argument("--space", help="Space JSON (for .crlb input)")
    sub.add_argument("--module", help="Dimension vector JSON (for .crlb input)")
    sub.add_argument("--band", type=int, default=1, help="Band of the random demo operator")
    sub.add_argument("--size", type=int, default=20, help="Interval size of the demo operator")

    sub = command("serve", cmd_serve, "Serve the laboratory over MCP")
    sub.add_argument(
        "--transport",
        "-t",
        choices=["stdio", "http"],
        default="stdio",
        help="Transport type to use (default: stdio)",
    )
    sub.add_argument(
        "--port",
        "-p",
        type=int,
        default=8000,
        help="Port for HTTP transport (default: 8000)",
    )
    sub.add_argument(
        "--host",
        default="127.0.0.1",
        help="Host for HTTP transport (default: 127.0.0.1)",
    )
    sub.add_argument(
        "--stateless-http",
        action="store_true",
        help="Enable stateless HTTP mode (no session persistence)",
    )
    return parser


def main(argv=None) -> int:
    """Coarse-lab: extract coarse equivalences from unitaries and verify the laws behind them."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging("DEBUG" if args.verbose else None)
    try:
        config = load_config(args.config)
        return args.handler(args, config)
    except (CoarseLabError, json.JSONDecodeError, KeyError, OSError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
