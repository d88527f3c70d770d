"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly as a script.
"""

import functools
import sys
import time

import numpy as np

from rbsdetree import (
    AffineDriver,
    Obstacle,
    PredictableField,
    RbsdeSpec,
    apriori_check,
    bracket,
    brute_force_value,
    build_tree,
    check_flat_off,
    compare,
    epsilon_optimal_time,
    integrate,
    ito_identity_check,
    mertens_decompose,
    picard_solve,
    represent,
    snell_envelope,
    solution_decomposition,
    verify_solution,
)
from rbsdetree.analysis import scheme_monotone
from rbsdetree.rbsde import default_eps
from rbsdetree.scenario import random_obstacle, random_spec

sys.path.insert(0, __file__.rsplit("/", 1)[0])
from conftest import random_affine  # noqa: E402

# every (periods, marks) shape with periods <= 4 and marks <= 2 whose stopping
# rules can be enumerated; (4, 2) has about 1.4e13 rules
ORACLE_SHAPES = [(1, 1), (2, 1), (3, 1), (4, 1), (1, 2), (2, 2), (3, 2)]
ORACLE_GUARD = 30_000
N_DEF = 200


def report(capsys, number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


@functools.cache
def definition_instances():
    """Criterion-2 population: random trees, r.u.s.c. obstacles, affine drivers with L <= 2."""
    rng = np.random.default_rng(20_240_601)
    out = []
    for k in range(N_DEF):
        tree = build_tree(random_spec(rng, per_node=bool(k % 2)))
        obs = random_obstacle(tree, rng)
        driver = random_affine(tree, rng, max_l=2.0)
        sol = picard_solve(tree, obs, driver)
        out.append((tree, obs, driver, sol))
    return out


def check_oracle(capsys=None):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst, shapes = 0.0, set()
    for k in range(200):
        tree = build_tree(random_spec(rng, per_node=bool(k % 2), shapes=ORACLE_SHAPES))
        obs = random_obstacle(tree, rng)
        g = rng.normal(size=tree.n_interior)
        dp = snell_envelope(tree, obs, g).at[0]
        worst = max(worst, abs(dp - brute_force_value(tree, obs, g, guard=ORACLE_GUARD)))
        shapes.add((tree.periods, tree.n_marks))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 30.0
    return report(
        capsys, 1, "oracle equivalence", ok,
        f"200 scenarios over shapes {sorted(shapes)}, max |dp - brute| = {worst:.2e}, {elapsed:.2f} s",
    )


def check_definition(capsys=None):
    worst, failures = 0.0, 0
    for tree, obs, driver, sol in definition_instances():
        rep = verify_solution(tree, sol, obs, driver, tol=1e-9)
        worst = max(worst, rep.checks["reconstruction"].worst)
        failures += not rep.passed
    ok = failures == 0
    return report(
        capsys, 2, "definition suite", ok,
        f"{N_DEF} Picard solutions, {failures} failing, max reconstruction residual {worst:.2e}",
    )


def check_snell_identity(capsys=None):
    bad = 0
    for tree, obs, _, sol in definition_instances():
        bad += int(np.sum(sol.Y.at != np.maximum(obs.at, sol.Y.post)))
    rng = np.random.default_rng(3)
    for _ in range(200):
        tree = build_tree(random_spec(rng))
        obs = random_obstacle(tree, rng)
        Y = snell_envelope(tree, obs, rng.normal(size=tree.n_interior))
        bad += int(np.sum(Y.at != np.maximum(obs.at, Y.post)))
    return report(capsys, 3, "Snell identity", bad == 0, f"400 instances, {bad} node mismatches (exact)")


def check_right_jump(capsys=None):
    rng = np.random.default_rng(4)
    missed, jump_gap, rc_nonzero = 0, 0.0, 0
    for _ in range(200):
        tree = build_tree(random_spec(rng))
        driver = random_affine(tree, rng)
        base = random_obstacle(tree, rng, right_jump_prob=0.0)
        sol = picard_solve(tree, base, driver)
        rc_nonzero += int(np.count_nonzero(sol.dC))
        # raise the at-value above Y at one interior node: binds there, post untouched
        v = int(rng.integers(tree.n_interior))
        at = base.at.copy()
        at[v] = sol.Y.at[v] + rng.uniform(0.1, 1.0)
        jumped = Obstacle.from_arrays(tree, at, base.post)
        sol = picard_solve(tree, jumped, driver)
        missed += not (sol.Y.at[v] == jumped.at[v] and sol.dC[v] > 0)
        jump_gap = max(jump_gap, float(np.max(np.abs(sol.dC - (sol.Y.at - sol.Y.post)))))
    ok = missed == 0 and jump_gap <= 1e-12 and rc_nonzero == 0
    return report(
        capsys, 4, "right-jump capture", ok,
        f"200 injected jumps, {missed} missed, max |dC - (Y - Y+)| = {jump_gap:.1e}, "
        f"right-continuous obstacles with nonzero C: {rc_nonzero}",
    )


def check_representation(capsys=None):
    rng = np.random.default_rng(5)
    worst_rt = worst_iso = 0.0
    for k in range(500):
        tree = build_tree(random_spec(rng, per_node=bool(k % 2)))
        Z = PredictableField(rng.normal(size=(tree.n_interior, tree.n_marks)))
        M = integrate(tree, Z)
        worst_rt = max(worst_rt, float(np.max(np.abs(represent(tree, M).values - Z.values))))
        leaf_prob = tree.path_prob[-1]
        iso = np.dot(leaf_prob, M.values[tree.leaves] ** 2) - np.dot(leaf_prob, bracket(tree, Z)[tree.leaves])
        worst_iso = max(worst_iso, abs(float(iso)))
    ok = worst_rt <= 1e-12 and worst_iso <= 1e-12
    return report(
        capsys, 5, "representation round trip", ok,
        f"500 integrands, round trip {worst_rt:.1e}, isometry {worst_iso:.1e}",
    )


def check_picard(capsys=None):
    max_iter, nonmono, gap = 0, 0, 0.0
    for tree, obs, driver, sol in definition_instances():
        d = sol.diagnostics["distances"]
        max_iter = max(max_iter, sol.diagnostics["iterations"])
        nonmono += not all(b <= a for a, b in zip(d[1:], d[2:]))
        other = picard_solve(tree, obs, driver, init="obstacle")
        gap = max(
            gap,
            float(np.max(np.abs(other.Y.at - sol.Y.at))),
            float(np.max(np.abs(other.Y.post - sol.Y.post))),
            float(np.max(np.abs(other.Z.values - sol.Z.values), initial=0.0)),
        )
    ok = max_iter <= 50 and nonmono == 0 and gap <= 1e-8
    return report(
        capsys, 6, "Picard convergence", ok,
        f"max iterations {max_iter}, non-monotone runs {nonmono}, init gap {gap:.1e}",
    )


def check_comparison(capsys=None):
    rng = np.random.default_rng(7)
    held, skipped, outside, worst = 0, 0, 0, 0.0
    while held < 100:
        tree = build_tree(random_spec(rng))
        o1 = random_obstacle(tree, rng)
        bump = rng.uniform(0.0, 0.5, tree.n_nodes) * (rng.uniform(size=tree.n_nodes) < 0.7)
        o2 = Obstacle.from_arrays(tree, o1.at + bump, np.minimum(o1.post + bump, o1.at + bump))
        d1 = random_affine(tree, rng)
        d2 = AffineDriver(d1.a, d1.b, d1.g0 + rng.uniform(0.0, 0.5) * (rng.uniform() < 0.7))
        if not scheme_monotone(tree, d1):
            skipped += 1
            continue
        rep = compare(tree, RbsdeSpec(o1, d1), RbsdeSpec(o2, d2))
        # pairs are built inside the hypothesis; the harness must agree
        outside += not rep.in_hypothesis
        worst = max(worst, rep.max_violation)
        held += 1
    return report(
        capsys, 7, "comparison theorem", worst <= 1e-10 and outside == 0,
        f"100 ordered pairs ({skipped} non-monotone drafts redrawn, {outside} flagged "
        f"out of hypothesis), max violation {worst:.1e}",
    )


def check_apriori(capsys=None):
    rng = np.random.default_rng(8)
    worst, ratios, failures = 0.0, [], 0
    for _ in range(50):
        tree = build_tree(random_spec(rng))
        obs = random_obstacle(tree, rng)
        eps = default_eps(0.0, tree.horizon)
        g1 = rng.normal(size=tree.n_interior)
        g2 = g1 + rng.normal(scale=rng.uniform(0.1, 2.0), size=tree.n_interior)
        rep = apriori_check(tree, obs, g1, g2, eps, 2.0 / eps**2)
        failures += not rep.holds
        worst = max(worst, rep.z_distance / rep.rhs)
        ratios.append(rep.y_ratio)
    return report(
        capsys, 8, "a-priori estimate", failures == 0,
        f"50 frozen pairs, max LHS/RHS {worst:.3f}; Y ratio (not asserted) "
        f"median {np.median(ratios):.3f}, max {np.max(ratios):.3f}",
    )


def check_ito(capsys=None):
    worst = 0.0
    for tree, _, _, sol in definition_instances():
        M, a_part, b_part = solution_decomposition(tree, sol)
        for beta in (0.0, 1.0):
            worst = max(worst, ito_identity_check(tree, sol.Y, M, a_part, b_part, beta=beta))
    return report(
        capsys, 9, "Gal'chouk-Lenglart identity", worst < 1e-10,
        f"{N_DEF} solver decompositions, beta in (0, 1), max defect {worst:.1e}",
    )


def check_eps_optimal(capsys=None):
    value_bad, flat_bad, checked = 0, 0, 0
    for tree, obs, _, sol in definition_instances():
        parts = mertens_decompose(tree, sol.Y, sol.gain)
        for start in range(tree.n_interior):
            for eps in (0.0, 0.01, 0.1):
                rule = epsilon_optimal_time(tree, sol.Y, obs, start, eps)
                value = rule.value(tree, obs, sol.gain)
                value_bad += not sol.Y.at[start] <= value + eps + 1e-12
                flat_bad += not check_flat_off(tree, parts, sol.Y, obs, rule, eps).passed
                checked += 1
    ok = value_bad == 0 and flat_bad == 0
    return report(
        capsys, 10, "epsilon-optimality", ok,
        f"{checked} (start, eps) cases, value failures {value_bad}, flat-off failures {flat_bad}",
    )


def test_criterion_01_oracle(capsys):
    assert check_oracle(capsys)


def test_criterion_02_definition(capsys):
    assert check_definition(capsys)


def test_criterion_03_snell_identity(capsys):
    assert check_snell_identity(capsys)


def test_criterion_04_right_jump(capsys):
    assert check_right_jump(capsys)


def test_criterion_05_representation(capsys):
    assert check_representation(capsys)


def test_criterion_06_picard(capsys):
    assert check_picard(capsys)


def test_criterion_07_comparison(capsys):
    assert check_comparison(capsys)


def test_criterion_08_apriori(capsys):
    assert check_apriori(capsys)


def test_criterion_09_ito(capsys):
    assert check_ito(capsys)


def test_criterion_10_eps_optimal(capsys):
    assert check_eps_optimal(capsys)


if __name__ == "__main__":
    checks = [
        check_oracle, check_definition, check_snell_identity, check_right_jump,
        check_representation, check_picard, check_comparison, check_apriori,
        check_ito, check_eps_optimal,
    ]
    results = [c() for c in checks]
    sys.exit(0 if all(results) else 1)
