"""Command-line entry point: ``simulate``, ``evolve``, ``compare``, ``crosstest``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import gp
from .metrics import SimReport, compare_samples, compute_report
from .netsim import EventLog
from .routing import run_simulation
from .settings import SettingsError, build_scenario, bundled_scenario, load_settings

log = logging.getLogger("evodtn")


class CliError(Exception):
    def __init__(self, message: str, code: int = 1):
        super().__init__(message)
        self.code = code


def _settings_path(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    if not path.suffix and "/" not in arg:
        try:
            return bundled_scenario(arg)
        except FileNotFoundError:
            pass
    raise CliError(f"settings file not found: {arg}", code=2)


def _load_spec(arg: str, seed: int | None):
    settings = load_settings(_settings_path(arg))
    return build_scenario(settings, seed)


def _read_tree(path: str) -> gp.Node:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read tree file {path}: {exc.strerror}", code=2) from exc
    tree = gp.parse_tree(text)
    if not gp.check_validity(tree):
        raise CliError(f"tree in {path} is not a valid program")
    return tree


def _resolve_router(router: str | None, tree_path: str | None) -> tuple[str, gp.Node | None]:
    if tree_path:
        return "tree", _read_tree(tree_path)
    router = router or "epidemic"
    if router.startswith("tree:"):
        return "tree", _read_tree(router[5:])
    if router not in ("epidemic", "prophet"):
        raise CliError(f"unknown router {router!r}; use epidemic, prophet or tree:<path>")
    return router, None


def _run(spec, kind: str, tree: gp.Node | None, seed: int) -> EventLog:
    if tree is None:
        return run_simulation(spec, kind, seed=seed)
    return run_simulation(spec, gp.router_kind(tree), update=gp.compile_tree(tree), seed=seed)


def _seeds(first: int, runs: int) -> list[int]:
    return list(range(first, first + runs))


def cmd_simulate(args) -> int:
    kind, tree = _resolve_router(args.router, args.tree)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base_seed = args.seed
    spec = _load_spec(args.settings, base_seed)
    seeds = _seeds(spec.seed, args.runs)
    for seed in seeds:
        elog = _run(spec, kind, tree, seed)
        report = compute_report(elog)
        suffix = "" if args.runs == 1 else f"_seed{seed}"
        (out / f"report{suffix}.txt").write_text(report.to_text(f"{spec.name} seed {seed}"))
        if not args.no_events:
            (out / f"events{suffix}.csv").write_text(elog.to_csv())
        print(f"seed {seed}: delivery_prob {report.delivery_probability!r}")
    return 0


def cmd_evolve(args) -> int:
    spec = _load_spec(args.settings, args.seed)
    params = gp.GpParams(population=args.pop, max_gens=args.gens)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(rec: gp.GenerationRecord):
        log.info("gen %d best %.4f mean %.4f", rec.gen, rec.best_fitness, rec.mean_fitness)

    res = gp.evolve(spec, args.target, params, run_seed=args.run_seed, on_generation=progress)
    (out / "best_tree.txt").write_text(gp.dump_tree(res.best.tree) + "\n")
    (out / "generations.csv").write_text(res.history_csv())
    if res.best.report is not None:
        (out / "report.txt").write_text(res.best.report.to_text(f"{spec.name} seed {spec.seed}"))
    print(f"best fitness {res.best.fitness!r}: {gp.dump_tree(res.best.tree)}")
    return 0


def _delivery(paths: Sequence[str]) -> list[float]:
    out = []
    for p in paths:
        try:
            rep = SimReport.from_text(Path(p).read_text())
        except OSError as exc:
            raise CliError(f"cannot read report {p}: {exc.strerror}", code=2) from exc
        out.append(rep.fitness)
    return out


def _emit(text: str, path: str | None):
    if path:
        Path(path).write_text(text)
    sys.stdout.write(text)


def cmd_compare(args) -> int:
    a, b = _delivery(args.a), _delivery(args.b)
    if len(a) < 2 or len(b) < 2:
        raise CliError("compare needs at least 2 reports per side")
    _emit(compare_samples(a, b, args.label_a, args.label_b).to_csv(), args.out)
    return 0


def cmd_crosstest(args) -> int:
    tree = _read_tree(args.tree)
    spec = _load_spec(args.settings, args.seed)
    seeds = _seeds(spec.seed, args.runs)
    sample = [compute_report(_run(spec, "tree", tree, s)).fitness for s in seeds]
    if args.baseline_reports:
        base = _delivery(args.baseline_reports)
        label_b = "baseline"
    else:
        base = [compute_report(_run(spec, args.baseline, None, s)).fitness for s in seeds]
        label_b = args.baseline
    _emit(compare_samples(sample, base, args.label or Path(args.tree).stem, label_b).to_csv(), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evodtn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one or more simulations and write reports")
    s.add_argument("--settings", required=True, help="settings file or bundled scenario name")
    s.add_argument("--router", default="epidemic", help="epidemic, prophet or tree:<path>")
    s.add_argument("--tree", help="serialized tree to use as the router update")
    s.add_argument("--seed", type=int, help="simulation seed (default: MovementModel.rngSeed)")
    s.add_argument("--runs", type=int, default=1, help="number of consecutive seeds")
    s.add_argument("--out-dir", default=".")
    s.add_argument("--no-events", action="store_true", help="skip the event CSV")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evolve", help="evolve a router update program")
    e.add_argument("--settings", required=True)
    e.add_argument("--target", choices=["epidemic", "prophet"], default="epidemic")
    e.add_argument("--pop", type=int, default=gp.GpParams.population)
    e.add_argument("--gens", type=int, default=gp.GpParams.max_gens)
    e.add_argument("--seed", type=int, help="simulation seed shared by all individuals")
    e.add_argument("--run-seed", type=int, default=0, help="seed of the GP run")
    e.add_argument("--out-dir", default=".")
    e.set_defaults(func=cmd_evolve)

    c = sub.add_parser("compare", help="medians and rank-sum p-value of two report sets")
    c.add_argument("--a", nargs="+", required=True, metavar="REPORT")
    c.add_argument("--b", nargs="+", required=True, metavar="REPORT")
    c.add_argument("--label-a", default="a")
    c.add_argument("--label-b", default="b")
    c.add_argument("--out", help="also write the CSV here")
    c.set_defaults(func=cmd_compare)

    x = sub.add_parser("crosstest", help="run a tree on another scenario and compare with a baseline")
    x.add_argument("--tree", required=True)
    x.add_argument("--settings", required=True)
    x.add_argument("--seed", type=int)
    x.add_argument("--runs", type=int, default=10)
    x.add_argument("--baseline", choices=["epidemic", "prophet"], default="epidemic")
    x.add_argument("--baseline-reports", nargs="+", metavar="REPORT")
    x.add_argument("--label")
    x.add_argument("--out")
    x.set_defaults(func=cmd_crosstest)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"evodtn: error: {exc}", file=sys.stderr)
        return exc.code
    except (SettingsError, gp.TreeSyntaxError, ValueError) as exc:
        print(f"evodtn: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
