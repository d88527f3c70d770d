"""Command-line front end: solve, verify, compare, oracle and random campaigns.

Scenario files are JSON::

    {
      "horizon": 1.0, "periods": 2, "marks": ["a", "b"],
      "event_prob": 0.5, "mark_kernel": [0.5, 0.5],
      "obstacle": {"type": "terminal_payoff", "event_count": [0, 1, 1], "interior": 0},
      "driver": {"type": "affine", "a": 0.1, "b": [0.2, 0.0], "g0": 0.0},
      "seed": 0
    }

``obstacle`` is ``{"type": "constant", "value": c}``,
``{"type": "terminal_payoff", "event_count": [...] | "leaves": [...], "interior": c}``
or ``{"type": "table", "at": [...], "post": [...]}`` with one entry per flat node.
``compare`` files carry ``"compare": [{"obstacle": ..., "driver": ...}, {...}]``.

Exit codes: 0 success, 1 check failure, 2 input error, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .analysis import (
    RULE_GUARD,
    RbsdeSpec,
    brute_force_value,
    compare,
    count_rules,
    ito_identity_check,
    solution_decomposition,
)
from .errors import ConvergenceError, ObstacleError, ScenarioError
from .processes import h2_norm, s2_norm
from .rbsde import AffineDriver, Driver, FrozenDriver, RbsdeSolution, picard_solve, verify_solution
from .scenario import EventTree, Obstacle, ScenarioSpec, build_tree, random_obstacle, random_spec
from .snell import check_flat_off, epsilon_optimal_time, mertens_decompose

log = logging.getLogger("rbsdetree")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_CONVERGENCE = 0, 1, 2, 3


class InputError(Exception):
    """Malformed or invalid scenario file."""


# parsing ------------------------------------------------------------------


def load_document(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top level must be a JSON object")
    return doc


def _field(doc: dict, name: str):
    if name not in doc:
        raise InputError(f"missing field '{name}'")
    return doc[name]


def parse_scenario(doc: dict) -> EventTree:
    try:
        spec = ScenarioSpec(
            horizon=float(_field(doc, "horizon")),
            periods=int(_field(doc, "periods")),
            marks=tuple(str(u) for u in _field(doc, "marks")),
            event_prob=_field(doc, "event_prob"),
            mark_kernel=_field(doc, "mark_kernel"),
            seed=int(doc.get("seed", 0)),
        )
        return build_tree(spec)
    except (ScenarioError, ValueError, TypeError) as exc:
        raise InputError(str(exc)) from exc


def parse_obstacle(tree: EventTree, spec: dict) -> Obstacle:
    if not isinstance(spec, dict) or "type" not in spec:
        raise InputError("obstacle must be an object with a 'type'")
    kind = spec["type"]
    try:
        if kind == "constant":
            return Obstacle.constant(tree, float(_field(spec, "value")))
        if kind == "terminal_payoff":
            interior = float(spec.get("interior", 0.0))
            if "event_count" in spec:
                table = np.asarray(spec["event_count"], dtype=float)
                if table.shape != (tree.periods + 1,):
                    raise InputError(f"event_count needs {tree.periods + 1} entries")
                terminal = table[tree.event_count[tree.leaves]]
            else:
                terminal = np.asarray(_field(spec, "leaves"), dtype=float)
            return Obstacle.terminal(tree, terminal, interior)
        if kind == "table":
            return Obstacle.from_arrays(tree, _field(spec, "at"), spec.get("post"))
    except (ValueError, TypeError) as exc:
        raise InputError(f"obstacle: {exc}") from exc
    raise InputError(f"unknown obstacle type '{kind}'")


def parse_driver(tree: EventTree, spec: dict | None) -> Driver:
    if spec is None:
        return FrozenDriver(0.0)
    kind = spec.get("type")
    if kind == "affine":
        b = spec.get("b", [])
        if len(b) not in (0, tree.n_marks):
            raise InputError(f"driver b needs {tree.n_marks} entries, got {len(b)}")
        return AffineDriver(spec.get("a", 0.0), b, spec.get("g0", 0.0))
    if kind == "frozen":
        g = spec.get("g", 0.0)
        try:
            FrozenDriver(g).gain(tree)
        except ValueError as exc:
            raise InputError(f"driver: {exc}") from exc
        return FrozenDriver(g)
    raise InputError(f"unknown driver type '{kind}'")


def load_problem(path) -> tuple[EventTree, Obstacle, Driver, dict]:
    doc = load_document(path)
    tree = parse_scenario(doc)
    obstacle = parse_obstacle(tree, _field(doc, "obstacle"))
    driver = parse_driver(tree, doc.get("driver"))
    return tree, obstacle, driver, doc


# outputs ------------------------------------------------------------------

CSV_COLUMNS = (
    "kind", "node", "level", "path", "t", "xi_at", "xi_post",
    "y_at", "y_post", "dA", "dC", "M", "mark", "z",
)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_solution_csv(path: Path, tree: EventTree, sol: RbsdeSolution) -> None:
    M = sol.M.values
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for v in range(tree.n_nodes):
            level = int(tree.node_level[v])
            dA = sol.dA[v] if v < tree.n_interior else 0.0
            w.writerow([
                "node", v, level, tree.position(v)[1], _fmt(tree.node_time[v]),
                _fmt(sol.obstacle.at[v]), _fmt(sol.obstacle.post[v]),
                _fmt(sol.Y.at[v]), _fmt(sol.Y.post[v]), _fmt(dA), _fmt(sol.dC[v]), _fmt(M[v]),
                "", "",
            ])
        for v in range(tree.n_interior):
            for j, mark in enumerate(tree.marks):
                w.writerow([
                    "z", v, int(tree.node_level[v]), tree.position(v)[1],
                    _fmt(tree.node_time[v] + tree.dt), "", "", "", "", "", "", "",
                    mark, _fmt(sol.Z.values[v, j]),
                ])


def write_json(path: Path, payload: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        f = float(x)
        return f if np.isfinite(f) else str(f)
    return x


def _solver_kwargs(args) -> dict:
    return {"beta": args.beta, "eps": args.eps, "tol": args.tol, "max_iter": args.max_iter}


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# commands -----------------------------------------------------------------


def cmd_solve(args) -> int:
    tree, obstacle, driver, _ = load_problem(args.scenario)
    sol = picard_solve(tree, obstacle, driver, **_solver_kwargs(args))
    out = _out_dir(args)
    write_solution_csv(out / "solution.csv", tree, sol)
    diag = dict(sol.diagnostics)
    diag["norms"] = {
        "s2_Y": s2_norm(tree, sol.Y, diag["beta"]),
        "h2_Z": h2_norm(tree, sol.Z, diag["beta"]),
    }
    diag["Y0"] = float(sol.Y.at[0])
    write_json(out / "diagnostics.json", diag)
    print(f"Y0 = {sol.Y.at[0]:.17g}  iterations = {diag['iterations']}")
    return EXIT_OK


def verify_problem(tree, obstacle, driver, solver_kwargs: dict, guard: int = RULE_GUARD) -> dict:
    """Run every assertable check on one problem; returns a JSON-ready report."""
    sol = picard_solve(tree, obstacle, driver, **solver_kwargs)
    report: dict = {"checks": verify_solution(tree, sol, obstacle, driver).as_dict()}
    parts = mertens_decompose(tree, sol.Y, sol.gain)
    flat_ok, flat_worst = True, 0.0
    for eps in (0.0, 0.01, 0.1):
        rule = epsilon_optimal_time(tree, sol.Y, obstacle, 0, eps)
        rep = check_flat_off(tree, parts, sol.Y, obstacle, rule, eps)
        flat_ok &= rep.passed
        flat_worst = max(flat_worst, rep.worst_increment)
    report["checks"]["flat_off"] = {"passed": flat_ok, "worst": flat_worst, "detail": "eps in 0, 0.01, 0.1"}
    M, a_part, b_part = solution_decomposition(tree, sol)
    defect = ito_identity_check(tree, sol.Y, M, a_part, b_part, beta=0.0)
    report["checks"]["ito"] = {"passed": defect < 1e-10, "worst": defect, "detail": "beta=0"}
    if count_rules(tree) <= guard:
        brute = brute_force_value(tree, obstacle, sol.gain, guard=guard)
        diff = abs(brute - sol.Y.at[0])
        report["checks"]["oracle"] = {"passed": diff <= 1e-12, "worst": diff, "detail": f"brute={brute:.17g}"}
    else:
        report["oracle_skipped"] = f"{count_rules(tree)} rules exceed guard {guard}"
    report["Y0"] = float(sol.Y.at[0])
    report["iterations"] = sol.diagnostics["iterations"]
    report["passed"] = all(c["passed"] for c in report["checks"].values())
    return report


def cmd_verify(args) -> int:
    tree, obstacle, driver, _ = load_problem(args.scenario)
    report = verify_problem(tree, obstacle, driver, _solver_kwargs(args))
    write_json(_out_dir(args) / "verify.json", report)
    for name, c in sorted(report["checks"].items()):
        print(f"{name:15s} {'PASS' if c['passed'] else 'FAIL'}  worst={c['worst']:.3e}")
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_compare(args) -> int:
    doc = load_document(args.scenario)
    tree = parse_scenario(doc)
    pair = _field(doc, "compare")
    if not isinstance(pair, list) or len(pair) != 2:
        raise InputError("'compare' must list exactly two specs")
    specs = [
        RbsdeSpec(parse_obstacle(tree, _field(p, "obstacle")), parse_driver(tree, p.get("driver")))
        for p in pair
    ]
    rep = compare(tree, specs[0], specs[1], **_solver_kwargs(args))
    write_json(_out_dir(args) / "compare.json", rep.as_dict())
    flag = "" if rep.in_hypothesis else " (out of hypothesis)"
    print(f"Y1 <= Y2: {rep.holds}  max violation {rep.max_violation:.3e}{flag}")
    return EXIT_OK if rep.passed else EXIT_CHECK


def cmd_oracle(args) -> int:
    tree, obstacle, driver, _ = load_problem(args.scenario)
    sol = picard_solve(tree, obstacle, driver, **_solver_kwargs(args))
    brute = brute_force_value(tree, obstacle, sol.gain, guard=args.guard)
    dp = float(sol.Y.at[0])
    print(f"brute_force {brute:.17g}\ndp          {dp:.17g}\ndifference  {brute - dp:.3e}")
    return EXIT_OK


def _campaign_instance(task: tuple[int, int, dict]) -> dict:
    index, seed, solver_kwargs = task
    rng = np.random.default_rng(seed)
    tree = build_tree(random_spec(rng))
    obstacle = random_obstacle(tree, rng)
    a = rng.uniform(-1.0, 1.0)
    b = rng.normal(size=tree.n_marks)
    driver = AffineDriver(a, b, rng.normal())
    L = driver.lipschitz(tree)
    if L > 2.0:
        driver = AffineDriver(a * 2.0 / L, b * 2.0 / L, driver.g0)
    try:
        report = verify_problem(tree, obstacle, driver, solver_kwargs)
    except ConvergenceError as exc:
        report = {"passed": False, "error": str(exc)}
    report.update(index=index, seed=seed, periods=tree.periods, marks=tree.n_marks)
    return report


def cmd_campaign(args) -> int:
    seeds = np.random.SeedSequence(args.seed).generate_state(args.count)
    tasks = [(i, int(s), _solver_kwargs(args)) for i, s in enumerate(seeds)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_campaign_instance, tasks))
    else:
        results = [_campaign_instance(t) for t in tasks]
    failed = [r["index"] for r in results if not r["passed"]]
    write_json(_out_dir(args) / "campaign.json", {"seed": args.seed, "instances": results, "failed": failed})
    print(f"{len(results) - len(failed)}/{len(results)} instances passed")
    return EXIT_OK if not failed else EXIT_CHECK


# entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--beta", type=float, default=None, help="weight exponent (default 1/eps^2)")
    common.add_argument("--eps", type=float, default=None, help="norm parameter (default from L and T)")
    common.add_argument("--tol", type=float, default=None, help="Picard tolerance (default 1e-10)")
    common.add_argument("--max-iter", type=int, default=None, help="Picard iteration cap (default 200)")
    common.add_argument("--out", default=".", help="output directory")

    parser = argparse.ArgumentParser(prog="rbsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, helptext in (
        ("solve", cmd_solve, "solve one scenario, write solution.csv and diagnostics.json"),
        ("verify", cmd_verify, "solve and run every check, write verify.json"),
        ("compare", cmd_compare, "compare the two specs of a scenario file"),
        ("oracle", cmd_oracle, "brute-force stopping value next to the DP value"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("scenario")
        p.set_defaults(func=func)
        if name == "oracle":
            p.add_argument("--guard", type=int, default=RULE_GUARD)
    p = sub.add_parser("campaign", parents=[common], help="verify randomized instances")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_campaign)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("RBSDE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ObstacleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        # parameter validation (beta below 1/eps^2, overflow, ...)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConvergenceError as exc:
        ratios = ", ".join(f"{r:.3g}" for r in exc.ratios[-10:])
        print(f"error: {exc}\nratio history (last 10): {ratios}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
