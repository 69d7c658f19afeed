import csv
import math

import numpy as np
import pytest

from shares.datasets import Dataset, gen_equation
from shares.errors import NoAdmissibleDonor
from shares.evaluator import TrainConfig
from shares.expr import (
    Binary,
    BinaryOp,
    Constant,
    active_vars,
    canonical_render,
    validate_transparent,
    walk,
)
from shares.search import (
    FitnessCache,
    ScoredProgram,
    SearchConfig,
    allowed_variables,
    best_per_shape_count,
    crossover,
    evolve,
    hoist_mutation,
    point_mutation,
    random_grow,
    score_program,
    subtree_mutation,
    tournament,
    write_run,
)

from .conftest import share

N3 = ["x1", "x2", "x3"]


def outcomes(op, n=300):
    return {canonical_render(op(np.random.default_rng(s))) for s in range(n)}


def test_random_grow_with_one_variable():
    seen = {canonical_render(random_grow(np.random.default_rng(s), 1, var_names=["x1"])) for s in range(200)}
    assert seen == {"x1", "s1(x1)"}


def test_random_grow_uses_only_search_nodes():
    rng = np.random.default_rng(0)
    for _ in range(500):
        tree = random_grow(rng, 6)
        for _, node in walk(tree.root):
            assert not isinstance(node, Constant)
            if isinstance(node, Binary):
                assert node.op in (BinaryOp.ADD, BinaryOp.MUL, BinaryOp.DIV)


def test_allowed_variables():
    parent = share("s1(x1) + s2(x2)", N3)
    # path to the right child of the root
    assert allowed_variables(parent, (1,)) == {1, 2}
    assert allowed_variables(parent, ()) == {0, 1, 2}


def test_crossover_example():
    parent = share("s1(x1) + s2(x2)", N3)
    donor = share("s9(x3)", N3)

    def op(rng):
        try:
            return crossover(rng, parent, donor)
        except NoAdmissibleDonor:
            return parent

    seen = outcomes(op)
    assert "s1(x1) + s2(x3)" in seen
    for text in seen:
        assert validate_transparent(share(text, N3)).is_transparent


def test_crossover_without_admissible_donor():
    parent = share("x1 + x2", ["x1", "x2"])
    donor = share("x1", ["x1", "x2"])
    raised = ok = 0
    for s in range(100):
        try:
            child = crossover(np.random.default_rng(s), parent, donor)
            ok += 1
            assert validate_transparent(child).is_transparent
        except NoAdmissibleDonor:
            raised += 1
    assert raised and ok


def test_crossover_never_duplicates_a_kept_variable():
    parent = share("s1(x1) + s2(x2)", N3)
    donor = share("s1(x1 + x3)", N3)
    for s in range(300):
        try:
            child = crossover(np.random.default_rng(s), parent, donor)
        except NoAdmissibleDonor:
            continue
        assert validate_transparent(child).is_transparent


def test_subtree_mutation_of_single_variable():
    parent = share("x1", ["x1", "x2"])
    seen = outcomes(lambda rng: subtree_mutation(rng, parent))
    assert len(seen) > 3
    for text in seen:
        tree = share(text, ["x1", "x2"])
        assert validate_transparent(tree).is_transparent
        assert active_vars(tree.root) <= {0, 1}


def test_point_mutation_changes_selected_operator():
    parent = share("x1 * x2", ["x1", "x2"])
    for s in range(50):
        child = point_mutation(np.random.default_rng(s), parent, p_replace=1.0)
        assert child.root.op in (BinaryOp.ADD, BinaryOp.DIV)
        assert {child.root.left.index, child.root.right.index} == {0, 1}


def test_point_mutation_keeps_shapes():
    parent = share("s1(x1) + s2(x2)", N3)
    for s in range(50):
        child = point_mutation(np.random.default_rng(s), parent, p_replace=1.0)
        assert sum(1 for _ in walk(child.root)) == 5
        assert validate_transparent(child).is_transparent


def test_point_mutation_with_zero_rate_is_identity():
    parent = share("s1(x1 / x3) * x2", N3)
    assert point_mutation(np.random.default_rng(0), parent, p_replace=0.0).root == parent.root


def test_hoist_examples():
    assert "x1 + x2" in outcomes(lambda rng: hoist_mutation(rng, share("s1(x1 + x2)", ["x1", "x2"])))
    seen = outcomes(lambda rng: hoist_mutation(rng, share("s1(s2(x1) + x2)", ["x1", "x2"])))
    # s1(s2(x1)) is collapsed into a single shape
    assert "s1(x1)" in seen
    for text in seen:
        assert validate_transparent(share(text, ["x1", "x2"])).is_transparent


def test_operator_closure_fuzz():
    rng = np.random.default_rng(99)
    for _ in range(500):
        n = int(rng.integers(1, 7))
        a, b = random_grow(rng, n), random_grow(rng, n)
        children = [subtree_mutation(rng, a), point_mutation(rng, a), hoist_mutation(rng, a)]
        try:
            children.append(crossover(rng, a, b, "gplearn"))
        except NoAdmissibleDonor:
            pass
        for child in children:
            assert validate_transparent(child).is_transparent, canonical_render(child)


def test_tournament_picks_lowest_among_contestants():
    fitness = [5.0, 1.0, 3.0, math.inf, 0.5, 2.0]
    for s in range(50):
        contestants = np.random.default_rng(s).integers(0, len(fitness), 3)
        winner = tournament(np.random.default_rng(s), fitness, 3)
        assert fitness[winner] == min(fitness[i] for i in contestants)


def _scored(n_shapes, r2, key, size=3):
    mse = math.inf if r2 == -math.inf else 1 - r2
    return ScoredProgram(tree=None, canonical_key=key, val_mse=mse, val_r2=r2, n_shapes=n_shapes, size=size)


def test_best_per_shape_count_example():
    report = best_per_shape_count([
        _scored(0, 0.5, "a"), _scored(1, 0.97, "b"), _scored(1, 0.90, "c"), _scored(3, 0.999, "d"),
    ])
    assert {k: p.val_r2 for k, p in report.rows.items()} == {0: 0.5, 1: 0.97, 3: 0.999}
    assert len(best_per_shape_count([_scored(2, 0.1, "x")]).rows) == 1


def test_best_per_shape_count_skips_failures_and_breaks_ties():
    report = best_per_shape_count([
        _scored(2, -math.inf, "bad"), _scored(1, 0.9, "zz", size=5), _scored(1, 0.9, "yy", size=4),
        _scored(1, 0.9, "aa", size=4),
    ])
    assert set(report.rows) == {1}
    assert report.rows[1].canonical_key == "aa"
    with pytest.raises(ValueError):
        best_per_shape_count([])


@pytest.fixture(scope="module")
def small_torque():
    return gen_equation("I.18.12", 60, seed=0)


FAST = TrainConfig(max_epochs=5, learning_rates=(1e-2,))


def test_cache_trains_each_structure_once(small_torque):
    names = small_torque.column_names
    cache = FitnessCache(small_torque, FAST, run_seed=0)
    a = share("r * s1(F)", names)
    b = share("s7(F) * r", names)
    first = cache.evaluate([a, b])
    assert cache.n_trainings == 1
    assert first[0] is first[1]
    cache.evaluate([a])
    assert cache.n_trainings == 1


def test_training_failure_scores_as_infinity():
    X = np.linspace(1, 2, 20)[:, None]
    flat = Dataset(("x",), X, np.full(20, 3.0), 10)
    result = score_program(share("s1(x)", ["x"]), flat, FAST)
    assert result.val_mse == math.inf and not result.ok
    assert "DegenerateTarget" in result.error


def test_evolve_is_deterministic_and_transparent(small_torque, tmp_path):
    cfg = SearchConfig(population_size=8, generations=2, seed=3, inner=FAST)
    first = evolve(small_torque, cfg)
    second = evolve(small_torque, cfg)
    assert first.report.table() == second.report.table()
    assert first.n_trainings == len(first.evaluated)
    for p in first.evaluated:
        assert validate_transparent(p.tree).is_transparent
        assert "-" not in p.canonical_key.replace("e-", "")
    for p in first.report:
        assert p.val_r2 == max(q.val_r2 for q in first.evaluated if q.n_shapes == p.n_shapes)

    files = write_run(tmp_path, first.report, {"seed": 3})
    assert files[0] == "frontier.csv" and files[-1] == "run.json"
    with open(tmp_path / "frontier.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["shape_count"]) for r in rows] == sorted(first.report.rows)


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(p_crossover=0.9, p_subtree_mutation=0.2)
    with pytest.raises(ValueError):
        SearchConfig(population_size=0)
    assert SearchConfig().to_dict()["population_size"] == 500

