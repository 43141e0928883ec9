"""Command-line driver: ``gramphase <subcommand> [options]``.

Every stochastic subcommand needs ``--seed``. Results go to
``<out>/<name>.csv`` with a ``<name>.manifest.json`` sidecar; ``<out>``
defaults to ``$GRAMPHASE_OUT`` or the current directory. Options can also
come from a JSON file passed with ``--config`` (keys are the long option
names with dashes replaced by underscores); explicit flags win.

Exit codes: 0 success, 2 transversality violation found, 1 any error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata

import numpy as np

from . import priors as _priors
from ._validation import check_random_state
from .metrics import MetricReport, metric_report
from .moments import second_moment
from .recovery import (
    cryoem_toy,
    noise_stability_experiment,
    recover_from_gram,
    sample_complexity_experiment,
)
from .repspec import (
    RepSpec,
    Signal,
    all_gates,
    ambient_dim,
    cryoem_rep_spec,
    effective_dim_K,
    max_orbit_dim,
    zn_rep_spec,
)
from .serialize import (
    Table,
    config_digest,
    dumps,
    fmt_number,
    load_schema,
    signal_from_dict,
    signal_to_dict,
    validate,
)
from .stability import (
    counterexample_affine_plane,
    counterexample_line_segment,
    estimate_lipschitz_bounds,
    hull_transversality_check,
    transversality_search_linear,
    transversality_search_set,
)

OUT_ENV = "GRAMPHASE_OUT"
EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2
STOCHASTIC = {"metrics", "lipschitz", "transversality", "recover", "mra", "cryoem"}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; exit code 2 is reserved for violations."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------ parsing helpers


def parse_spec(text: str) -> RepSpec:
    """``zn<N>``, ``cryo:<L>,<R>`` or a JSON object ``{"blocks": [[N, R], ...]}``."""
    text = text.strip()
    if text.startswith("zn"):
        return zn_rep_spec(int(text[2:]))
    if text.startswith("cryo:"):
        L, R = (int(v) for v in text[5:].split(","))
        return cryoem_rep_spec(L, R)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"malformed spec {text!r}: {exc}") from None
    validate(data, "RepSpec")
    return RepSpec.from_dict(data)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def build_prior(kind: str, spec: RepSpec | None, m: int, seed: int):
    """Prior named on the command line; ``seed`` fixes any random construction."""
    if kind == "segment":
        return _priors.segment_prior()
    if kind == "plane":
        return _priors.affine_plane_prior()
    if kind == "circle":
        return _priors.sphere_prior(RepSpec(((2, 1),)), 1)
    if spec is None:
        raise CliError(f"prior {kind!r} needs --spec")
    d = spec.ambient_dim
    if kind == "full":
        return _priors.LinearPrior(spec, np.eye(d))
    if kind == "linear":
        return _priors.generic_linear_prior(spec, m, seed)
    if kind == "sparse":
        return _priors.sparse_prior(spec, m, False, seed)
    if kind == "relu":
        return _priors.relu_prior(spec, [m, d, d], seed)
    if kind == "sphere":
        rng = check_random_state(seed)
        embed = np.linalg.qr(rng.standard_normal((d, m + 1)))[0]
        return _priors.sphere_prior(spec, m, embed=embed)
    raise CliError(f"unknown prior {kind!r}")


def version_string() -> str:
    try:
        base = metadata.version("gramphase")
    except metadata.PackageNotFoundError:
        base = "0+unknown"
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
            cwd=os.path.dirname(__file__), timeout=5,
        )
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{base}+g{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return base


# ------------------------------------------------------------ output


class _Run:
    def __init__(self, args):
        self.args = args
        self.started = _dt.datetime.now(_dt.timezone.utc)
        self.t0 = time.perf_counter()
        self.outputs: list[str] = []
        self.out_dir = args.out or os.environ.get(OUT_ENV) or "."
        os.makedirs(self.out_dir, exist_ok=True)
        self.name = args.name or args.command

    def config(self) -> dict:
        skip = {"out", "name", "config", "workers", "func"}
        return {k: v for k, v in sorted(vars(self.args).items()) if k not in skip}

    def write_table(self, table: Table, suffix: str = "") -> str:
        path = os.path.join(self.out_dir, f"{self.name}{suffix}.csv")
        with open(path, "w", newline="") as fh:
            fh.write(table.to_csv())
        self.outputs.append(path)
        return path

    def write_json(self, obj, suffix: str) -> str:
        path = os.path.join(self.out_dir, f"{self.name}{suffix}.json")
        with open(path, "w") as fh:
            fh.write(json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")
        self.outputs.append(path)
        return path

    def finish(self, extra: dict | None = None) -> str:
        cfg = self.config()
        manifest = {
            "command": self.args.command,
            "config": cfg,
            "config_digest": config_digest(cfg),
            "seed": getattr(self.args, "seed", None),
            "outputs": list(self.outputs),
            "started": self.started.isoformat(),
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "wall_time_s": time.perf_counter() - self.t0,
            "version": version_string(),
        }
        if extra:
            manifest.update(extra)
        path = os.path.join(self.out_dir, f"{self.name}.manifest.json")
        with open(path, "w") as fh:
            fh.write(json.dumps(manifest, sort_keys=True, indent=2, default=_json_default) + "\n")
        return path


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _spec_arg(args) -> RepSpec | None:
    return parse_spec(args.spec) if args.spec else None


def _print_table(table: Table) -> None:
    sys.stdout.write(table.to_csv())


# ------------------------------------------------------------ commands


def cmd_k_bound(args) -> int:
    given = [v is not None for v in (args.zn, args.cryo, args.spec)]
    if sum(given) != 1:
        raise CliError("give exactly one of --zn, --cryo, --spec")
    if args.zn is not None:
        spec = zn_rep_spec(args.zn)
    elif args.cryo is not None:
        L, R = args.cryo
        if R < 2 * L + 1 and not args.force:
            raise CliError(f"cryo-EM model needs R >= 2L+1, got L={L}, R={R}; use --force")
        spec = cryoem_rep_spec(L, R)
    else:
        spec = parse_spec(args.spec)
    table = Table(("quantity", "value"))
    table.append(("dim_V", ambient_dim(spec)))
    table.append(("k_H", max_orbit_dim(spec)))
    table.append(("K", effective_dim_K(spec)))
    table.append(("M", args.m))
    for gate in all_gates(args.m, spec):
        table.append((gate.gate_kind.value, "pass" if gate.passes else "fail"))
    _print_table(table)
    return EXIT_OK


def cmd_metrics(args) -> int:
    run = _Run(args)
    table = Table(("pair",) + MetricReport.FIELDS)
    if args.x or args.y:
        if not (args.x and args.y):
            raise CliError("--x and --y go together")
        x = signal_from_dict(json.loads(args.x))
        y = signal_from_dict(json.loads(args.y))
        table.append((0,) + metric_report(x, y).as_row())
    else:
        spec = _spec_arg(args)
        if spec is None:
            raise CliError("metrics needs --spec or --x/--y")
        rng = check_random_state(args.seed)
        for i in range(args.pairs):
            x, y = Signal.random(spec, rng), Signal.random(spec, rng)
            table.append((i,) + metric_report(x, y).as_row())
    run.write_table(table)
    violations = sum(not r[-1] for r in table.rows)
    run.finish({"derksen_violations": violations})
    print(f"pairs={len(table.rows)} derksen_violations={violations}")
    return EXIT_OK


def cmd_lipschitz(args) -> int:
    run = _Run(args)
    prior = build_prior(args.prior, _spec_arg(args), args.m, args.seed)
    est = estimate_lipschitz_bounds(prior, args.pairs, args.refine_steps, args.seed, n_refine=args.n_refine)
    table = Table(("c1_hat", "c2_hat", "n_pairs_evaluated", "n_degenerate_skipped"))
    table.append((est.c1_hat, est.c2_hat, est.n_pairs_evaluated, est.n_degenerate_skipped))
    run.write_table(table)
    run.write_json({"worst_pair": [signal_to_dict(s) for s in est.worst_pair], "search": est.search}, ".worst")
    run.finish()
    print(f"c1_hat={fmt_number(est.c1_hat)} c2_hat={fmt_number(est.c2_hat)}")
    return EXIT_OK


def cmd_transversality(args) -> int:
    run = _Run(args)
    prior = build_prior(args.prior, _spec_arg(args), args.m, args.seed)
    if args.mode == "linear":
        if not isinstance(prior, _priors.LinearPrior):
            raise CliError("--mode linear needs a linear prior")
        verdict = transversality_search_linear(prior, args.budget, args.seed)
    elif args.mode == "set":
        verdict = transversality_search_set(prior, args.budget, args.seed)
    else:
        verdict = hull_transversality_check(prior, args.budget, args.seed)
    table = Table(("verdict", "budget_used", "best_objective"))
    table.append((verdict.kind.value, verdict.search_stats.get("budget_used", ""),
                  verdict.search_stats.get("best_objective", "")))
    run.write_table(table)
    run.write_json(verdict.to_dict(), ".verdict")
    run.finish({"verdict": verdict.kind.value})
    print(verdict.kind.value)
    return EXIT_VIOLATION if verdict.violation else EXIT_OK


def cmd_counterexample(args) -> int:
    run = _Run(args)
    if args.which == "segment":
        table = counterexample_line_segment(_floats(args.grid))
    else:
        table = counterexample_affine_plane(_floats(args.a))
    run.write_table(table)
    run.finish({"checks": table.checks})
    _print_table(table)
    return EXIT_OK


def _recover_trial(task):
    seed_seq, prior_kind, spec_text, m, restarts, max_iters, tol = task
    rng = np.random.default_rng(seed_seq)
    spec = parse_spec(spec_text) if spec_text else None
    prior = build_prior(prior_kind, spec, m, int(rng.integers(2**63 - 1)))
    truth = prior.sample(1, rng)[0]
    truth = truth / truth.norm()
    res = recover_from_gram(second_moment(truth), prior, restarts, max_iters, tol, rng, truth=truth)
    return (res.relative_error, res.objective, res.restarts_used, res.iterations, res.converged)


def _map(fn, tasks, workers: int):
    """Order-preserving map; results depend on task index only, never on scheduling."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def cmd_recover(args) -> int:
    run = _Run(args)
    root = np.random.SeedSequence(args.seed)
    if args.deltas:
        rng = np.random.default_rng(root)
        prior = build_prior(args.prior, _spec_arg(args), args.m, int(rng.integers(2**63 - 1)))
        truth = prior.sample(1, rng)[0]
        truth = truth / truth.norm()
        table = noise_stability_experiment(
            prior, truth, _floats(args.deltas), args.trials, rng, args.restarts, args.max_iters, args.tol
        )
        run.write_table(table)
        run.finish({"checks": table.checks})
        print(f"slope={fmt_number(table.checks['slope'])}")
        return EXIT_OK
    tasks = [(s, args.prior, args.spec, args.m, args.restarts, args.max_iters, args.tol) for s in root.spawn(args.trials)]
    rows = _map(_recover_trial, tasks, args.workers)
    table = Table(("trial", "relative_error", "objective", "restarts_used", "iterations", "converged"))
    for i, row in enumerate(rows):
        table.append((i,) + row)
    run.write_table(table)
    ok = sum(r[0] <= args.success_tol for r in rows)
    run.finish({"successes": ok})
    print(f"trials={len(rows)} successes={ok}")
    return EXIT_OK


def cmd_mra(args) -> int:
    run = _Run(args)
    rng = check_random_state(args.seed)
    x = rng.standard_normal(args.zn)
    x /= np.linalg.norm(x)
    table = sample_complexity_experiment(x, _floats(args.sigmas), _ints(args.ns), args.trials, rng)
    run.write_table(table)
    run.finish()
    print(f"cells={len(table.rows) // args.trials}")
    return EXIT_OK


def cmd_cryoem(args) -> int:
    run = _Run(args)
    rep = cryoem_toy(args.L, args.R, args.prior, args.m, args.seed, args.delta,
                     args.restarts, args.max_iters, args.tol, force=args.force)
    d = rep.to_dict()
    table = Table(tuple(d))
    table.append(tuple(d.values()))
    run.write_table(table)
    run.finish({"outside_theory": not rep.gate_passes})
    if not rep.gate_passes:
        print(f"gate {rep.gate_kind} fails for M={rep.M}, K={rep.K}: outside theory", file=sys.stderr)
    _print_table(table)
    return EXIT_OK


def cmd_schema(args) -> int:
    print(dumps(load_schema()))
    return EXIT_OK


# ------------------------------------------------------------ parser


def _common(p, stochastic: bool) -> None:
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    p.add_argument("--name", help="output file stem (default: the command name)")
    p.add_argument("--config", help="JSON file with option values")
    if stochastic:
        p.add_argument("--seed", type=int, help="random seed (required)")


def _spec_opt(p) -> None:
    p.add_argument("--spec", help="zn<N>, cryo:<L>,<R> or JSON {\"blocks\": [[N, R], ...]}")


PRIORS = ("linear", "sparse", "relu", "sphere", "full", "segment", "plane", "circle")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gramphase", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("k-bound", help="dim V, k(H), K and the dimension gates")
    p.add_argument("--zn", type=int)
    p.add_argument("--cryo", type=int, nargs=2, metavar=("L", "R"))
    _spec_opt(p)
    p.add_argument("--m", type=int, default=0)
    p.add_argument("--force", action="store_true", help="allow cryo R < 2L+1")
    p.set_defaults(func=cmd_k_bound)

    p = sub.add_parser("metrics", help="d_sigma, d_H, d_Gram and the Derksen check")
    _common(p, True)
    _spec_opt(p)
    p.add_argument("--pairs", type=int, default=100)
    p.add_argument("--x", help="Signal JSON")
    p.add_argument("--y", help="Signal JSON")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("lipschitz", help="empirical bi-Lipschitz constants over a prior")
    _common(p, True)
    _spec_opt(p)
    p.add_argument("--prior", choices=PRIORS, default="linear")
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--refine-steps", type=int, default=20)
    p.add_argument("--n-refine", type=int, default=5)
    p.set_defaults(func=cmd_lipschitz)

    p = sub.add_parser("transversality", help="search for orbit collisions; exit 2 on a violation")
    _common(p, True)
    _spec_opt(p)
    p.add_argument("--prior", choices=PRIORS, default="linear")
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--mode", choices=("linear", "set", "hull"), default="hull")
    p.add_argument("--budget", type=int, default=1000)
    p.set_defaults(func=cmd_transversality)

    p = sub.add_parser("counterexample", help="segment and affine-plane counterexample tables")
    _common(p, False)
    p.add_argument("--which", choices=("segment", "plane"), required=True)
    p.add_argument("--grid", default="0.4,0.2,0.1,0.05")
    p.add_argument("--a", default="1,10,100")
    p.set_defaults(func=cmd_counterexample)

    p = sub.add_parser("recover", help="Gram recovery trials or, with --deltas, noise stability")
    _common(p, True)
    _spec_opt(p)
    p.add_argument("--prior", choices=PRIORS, default="linear")
    p.add_argument("--m", type=int, default=5)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--success-tol", type=float, default=1e-6)
    p.add_argument("--deltas", help="comma-separated perturbation norms")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_recover)

    p = sub.add_parser("mra", help="Z_N sample-complexity grid")
    _common(p, True)
    p.add_argument("--zn", type=int, default=16)
    p.add_argument("--sigmas", default="1,2")
    p.add_argument("--ns", default="1000,4000")
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_mra)

    p = sub.add_parser("cryoem", help="cryo-EM coefficient-space recovery toy")
    _common(p, True)
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--R", type=int, required=True)
    p.add_argument("--prior", choices=("linear", "sparse"), default="linear")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_cryoem)

    p = sub.add_parser("schema", help="print the JSON schema for configs and data files")
    p.set_defaults(func=cmd_schema)
    return parser


def _apply_config(parser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path:
        return args
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    validate(cfg, "RunConfig")
    defaults = {k.replace("-", "_"): v for k, v in cfg.items()}
    for action in parser._subparsers._group_actions:
        action.choices[args.command].set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.command in STOCHASTIC and args.seed is None:
            raise CliError(f"{args.command} needs --seed")
        return args.func(args)
    except SystemExit as exc:
        if exc.code is None:
            return EXIT_OK
        return int(exc.code) if isinstance(exc.code, int) else EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit code 1
        print(f"gramphase: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
