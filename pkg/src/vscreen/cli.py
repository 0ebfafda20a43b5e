"""Command-line entry point: ``vscreen <command> ...``.

Exit status is 0 on success, 2 for bad input or configuration and 3 when a
stage fails while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    # subcommands repeat the global flags without defaults so they only override when given
    def default(value):
        return argparse.SUPPRESS if suppress else value

    parser.add_argument("--seed", type=int, default=default(0), help="master seed")
    parser.add_argument("--threads", type=int, default=default(1), help="worker threads")
    parser.add_argument("--trace", default=default(None), help="write the scheduler trace (JSONL) here")
    parser.add_argument("-v", "--verbose", action="store_true", default=default(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vscreen", description="Desk-scale virtual screening campaigns.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        _global_flags(p, suppress=True)
        return p

    p = command("run", "run a campaign from a JSON config")
    p.add_argument("config")
    p.add_argument("--out", default="campaign-out", help="output directory")

    p = command("compress", "compress a SMILES library")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--dictionary", help="dictionary file (default: shipped dictionary)")
    p.add_argument("--train", metavar="PATH", help="train a dictionary on the input, save it here and use it")
    p.add_argument("--max-entries", type=int, default=128)

    p = command("decompress", "restore a compressed SMILES library")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--dictionary")

    p = command("dock", "dock ligands into a pocket")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--library")
    src.add_argument("--smiles")
    p.add_argument("--pocket", help="pocket JSON (default: shipped pocket)")
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--diversity-delta", type=float, default=1.0)
    p.add_argument("--max-steps", type=int, default=500)
    p.add_argument("--out", default="-", help="poses JSONL (default: stdout)")

    p = command("sched-sim", "simulate a task set on a cluster")
    p.add_argument("--tasks", required=True)
    p.add_argument("--workers", "--cluster", dest="cluster", required=True, help="cluster JSON")
    p.add_argument("--policy")

    p = command("tune", "autotune pipeline knobs")
    p.add_argument("--space", help="knob space JSON (default: shipped space)")
    p.add_argument("--objective", choices=("synthetic", "pipeline"), default="synthetic")
    p.add_argument("--budget-cost", type=float)
    p.add_argument("--evals", type=int, default=50)
    p.add_argument("--out", default="history.jsonl")
    p.add_argument("--csv", help="also write a cost,quality,dominated table")
    p.add_argument("--noise", type=float, default=0.01, help="synthetic surface noise")
    p.add_argument("--library", help="mini-corpus for the pipeline objective")
    p.add_argument("--pocket")

    p = command("fep", "relative free energies for a small ligand set")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--library")
    src.add_argument("--family", choices=("symmetric", "offset", "harmonic"), help="analytic test model")
    p.add_argument("--target-sem", type=float, default=0.05)
    p.add_argument("--max-replicas", type=int, default=32)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--out", default="-", help="results TSV (default: stdout)")
    return parser


def _dictionary(path: str | None):
    from . import codec

    return codec.Dictionary.load(path) if path else codec.default_dictionary()


def cmd_run(args) -> int:
    from .pipeline import CampaignConfig, run_campaign

    config = CampaignConfig.load(args.config)
    config.seed = args.seed if args.seed_given else config.seed
    config.threads = args.threads if args.threads_given else config.threads
    report = run_campaign(config, args.out, trace_path=args.trace)
    counts = " -> ".join(f"{row['stage']} {row['count']}" for row in report.funnel)
    print(counts)
    print(f"report written to {Path(args.out) / 'report.json'}")
    return EXIT_OK


def cmd_compress(args) -> int:
    from . import codec

    lines = Path(args.input).read_text(encoding="ascii").splitlines()
    if args.train:
        d = codec.train_dictionary(lines, args.max_entries)
        d.save(args.train)
    else:
        d = _dictionary(args.dictionary)
    codec.write_compressed_library(args.output, lines, d)
    print(f"{len(lines)} lines, ratio {codec.compression_ratio(lines, d):.3f}")
    return EXIT_OK


def cmd_decompress(args) -> int:
    from . import codec

    lines = codec.read_compressed_library(args.input, _dictionary(args.dictionary))
    Path(args.output).write_text("".join(line + "\n" for line in lines), encoding="ascii")
    return EXIT_OK


def cmd_dock(args) -> int:
    from . import dock
    from ._seeding import derive_seed
    from .chem import Ligand, embed_3d
    from .library import load_ligands, read_library
    from .pipeline import _shipped

    pocket = dock.Pocket.load(args.pocket or _shipped("pocket.json"))
    if args.smiles:
        ligands = [Ligand.from_smiles("L1", args.smiles)]
    else:
        ligands = load_ligands(read_library(args.library))
    poses = []
    for lig in ligands:
        conf = embed_3d(lig.graph, seed=derive_seed(args.seed, "embed", lig.id), ligand_id=lig.id)
        found = dock.dock(
            conf,
            pocket,
            restarts=args.restarts,
            diversity_delta=args.diversity_delta,
            max_steps=args.max_steps,
            seed=derive_seed(args.seed, "dock", lig.id),
        )
        poses.extend(dock.rescore_poses(conf, found, pocket))
    if args.out == "-":
        for pose in poses:
            print(json.dumps(pose.to_dict(), sort_keys=True))
    else:
        dock.write_poses(args.out, poses)
    return EXIT_OK


def cmd_sched_sim(args) -> int:
    from . import sched

    tasks = sched.load_tasks(args.tasks)
    workers = sched.load_workers(args.cluster)
    policy = sched.load_policy(args.policy)
    try:
        trace = sched.run_simulation(tasks, workers, policy, seed=args.seed)
    except sched.Starvation as exc:
        if args.trace and exc.trace is not None:
            exc.trace.write(args.trace)
        raise
    if args.trace:
        trace.write(args.trace)
    util = " ".join(f"{k}={v:.4f}" for k, v in trace.utilization.items())
    print(f"makespan {trace.makespan:.6f} s; utilization {util}")
    return EXIT_OK


def cmd_tune(args) -> int:
    from . import tune

    space = tune.KnobSpace.load(args.space) if args.space else tune.default_space()
    if args.objective == "synthetic":
        objective = tune.SyntheticSurface.random(space, seed=args.seed, noise=args.noise)
    else:
        from .chem import embed_3d
        from .dock import Pocket
        from .library import load_ligands, read_library, synthetic_library
        from .pipeline import _shipped

        records = read_library(args.library) if args.library else synthetic_library(4, seed=args.seed)
        pocket = Pocket.load(args.pocket or _shipped("pocket.json"))
        confs = [embed_3d(l.graph, seed=args.seed, ligand_id=l.id) for l in load_ligands(records)]
        objective = tune.PipelineObjective(confs, pocket, space, seed=args.seed)
    history = tune.autotune(objective, args.evals, space, args.budget_cost, seed=args.seed)
    tune.write_history(args.out, history)
    if args.csv:
        tune.write_tradeoff_csv(args.csv, history)
    best = min(history, key=lambda o: o.quality)
    print(f"{len(history)} evaluations; best quality {best.quality:.6f} at cost {best.cost:.6f}")
    print(f"pareto front: {len(tune.pareto_front(history))} configs")
    return EXIT_OK


def cmd_fep(args) -> int:
    from ._seeding import derive_seed
    from .fep import AlchemicalModel, awh_run, pair_compounds, run_until_sem, write_results
    from .library import load_ligands, read_library
    from .pipeline import pair_model

    def estimator(model):
        def run(seed: int):
            res = awh_run(model, args.steps, seed)
            return res.delta_f, len(res.bias_history)

        return run

    if args.family:
        model = {
            "symmetric": AlchemicalModel.harmonic((1.0, 1.0)),
            "offset": AlchemicalModel.shifted_wells((0.0, 2.0)),
            "harmonic": AlchemicalModel.harmonic((1.0, 2.0)),
        }[args.family]
        res = run_until_sem(estimator(model), args.target_sem, args.max_replicas, seed=args.seed)
        print(f"dF {res.estimate:.6f} kT  sem {res.sem:.6f}  replicas {res.replicas}  exact {model.exact_delta_f:.6f}  {res.flag}")
        return EXIT_OK

    ligands = load_ligands(read_library(args.library))
    rows = []
    for n, pair in enumerate(pair_compounds(ligands, threads=args.threads), start=1):
        pid = f"P{n:03d}"
        res = run_until_sem(
            estimator(pair_model(pair, 0.0, 0.0)), args.target_sem, args.max_replicas, seed=derive_seed(args.seed, "fep", pid)
        )
        rows.append((pid, pair, res))
    write_results(sys.stdout if args.out == "-" else args.out, rows)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compress": cmd_compress,
    "decompress": cmd_decompress,
    "dock": cmd_dock,
    "sched-sim": cmd_sched_sim,
    "tune": cmd_tune,
    "fep": cmd_fep,
}


def main(argv=None) -> int:
    from . import codec, sched
    from .chem import SmilesError
    from .dock import DockingError
    from .fep import NotEnoughLigands
    from .library import LibraryError
    from .pipeline import ConfigError, StageFailure
    from .tune import InvalidConfig

    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    # flags given after the subcommand override the ones before it
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    args.threads_given = any(a == "--threads" or a.startswith("--threads=") for a in argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except StageFailure as exc:
        print(f"vscreen: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except sched.Starvation as exc:
        print(f"vscreen: scheduling failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (
        ConfigError,
        InvalidConfig,
        LibraryError,
        SmilesError,
        codec.CodecError,
        sched.SchedulerError,
        NotEnoughLigands,
        DockingError,
        json.JSONDecodeError,
        KeyError,
        FileNotFoundError,
        UnicodeDecodeError,
    ) as exc:
        print(f"vscreen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
