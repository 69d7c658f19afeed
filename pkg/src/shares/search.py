"""Genetic programming over transparent SHARE structures.

All variation operators keep the two transparency constraints intact by
construction: a variable never appears twice and a shape is never applied
directly to another shape. The fitness of a structure is the validation MSE
after training its shape functions; it depends only on the canonical text of
the structure, the data and the run seed, so results are independent of the
order in which programs are evaluated.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import evaluator
from .errors import NoAdmissibleDonor, SharesError
from .evaluator import TrainConfig
from .expr import (
    SEARCH_OPS,
    Binary,
    ExprTree,
    Shape,
    Variable,
    active_vars,
    canonicalize,
    collapse_shape_chains,
    get_subtree,
    render,
    renumber_shapes,
    replace_subtree,
    structural_metrics,
    walk,
)

OPERATORS = ("crossover", "subtree_mutation", "hoist_mutation", "point_mutation", "reproduction")


@dataclass
class SearchConfig:
    population_size: int = 500
    generations: int = 10
    tournament_size: int = 10
    p_crossover: float = 0.4
    p_subtree_mutation: float = 0.2
    p_point_mutation: float = 0.2
    p_hoist_mutation: float = 0.05
    p_point_replace: float = 0.2
    parsimony_coefficient: float = 0.0
    max_init_depth: int = 4
    subtree_selection: str = "uniform"  # or "gplearn": 90% internal nodes, 10% leaves
    seed: int = 0
    threads: int = 1
    inner: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        probs = (self.p_crossover, self.p_subtree_mutation, self.p_point_mutation, self.p_hoist_mutation)
        if any(p < 0 for p in probs) or sum(probs) > 1.0 + 1e-12:
            raise ValueError("operator probabilities must be non-negative and sum to at most 1")
        if not 0.0 <= self.p_point_replace <= 1.0:
            raise ValueError("p_point_replace must lie in [0, 1]")
        if self.population_size < 1 or self.generations < 1 or self.tournament_size < 1:
            raise ValueError("population_size, generations and tournament_size must be positive")
        if self.max_init_depth < 1:
            raise ValueError("max_init_depth must be positive")
        if self.subtree_selection not in ("uniform", "gplearn"):
            raise ValueError("subtree_selection must be 'uniform' or 'gplearn'")
        if self.threads < 1:
            raise ValueError("threads must be positive")
        if isinstance(self.inner, dict):
            self.inner = TrainConfig(**self.inner)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["inner"]["learning_rates"] = list(d["inner"]["learning_rates"])
        return d


# ---------------------------------------------------------------------------
# Tree construction and variation


def _normalize(root):
    return renumber_shapes(collapse_shape_chains(root))


def _names(n_vars, var_names):
    return tuple(var_names) if var_names else tuple(f"x{i + 1}" for i in range(n_vars))


def _grow(rng, pool, budget, under_shape, names):
    kinds = ["var"]
    if budget is None or budget >= 2:
        if not under_shape:
            kinds.append("shape")
        if len(pool) >= 2:
            kinds.append("binary")
    kind = kinds[rng.integers(len(kinds))]
    nxt = None if budget is None else budget - 1
    if kind == "var":
        idx = int(pool[rng.integers(len(pool))])
        return Variable(idx, names[idx])
    if kind == "shape":
        return Shape(0, _grow(rng, pool, nxt, True, names))
    shuffled = [int(v) for v in rng.permutation(pool)]
    cut = int(rng.integers(1, len(shuffled)))
    op = SEARCH_OPS[rng.integers(len(SEARCH_OPS))]
    return Binary(op, _grow(rng, shuffled[:cut], nxt, False, names),
                  _grow(rng, shuffled[cut:], nxt, False, names))


def grow_subtree(rng, pool, max_depth=None, names=None, under_shape=False):
    """Random transparent subtree over the variable indices in `pool`.

    At every node the kind (variable, shape, binary operation) is drawn
    uniformly among those still allowed: a shape may not sit directly under a
    shape, a binary node needs two or more variables to split between its
    children, and nothing but a variable fits at the depth cap.
    """
    pool = sorted(int(v) for v in pool)
    if not pool:
        raise ValueError("variable pool must be non-empty")
    names = names or _names(max(pool) + 1, ())
    return _grow(rng, pool, max_depth, under_shape, names)


def random_grow(rng, n_vars: int, max_depth: int | None = 4, var_names=()) -> ExprTree:
    """Random transparent SHARE over ``n_vars`` variables (``None`` = no depth cap)."""
    if n_vars < 1:
        raise ValueError("n_vars must be >= 1")
    names = _names(n_vars, var_names)
    root = grow_subtree(rng, range(n_vars), max_depth, names)
    return ExprTree(_normalize(root), n_vars, names)


def _pick_path(rng, root, selection="uniform"):
    nodes = [p for p, _ in walk(root)]
    if selection == "gplearn" and len(nodes) > 1:
        internal = [p for p, n in walk(root) if not isinstance(n, Variable)]
        leaves = [p for p, n in walk(root) if isinstance(n, Variable)]
        pool = internal if rng.random() < 0.9 and internal else leaves
        return pool[rng.integers(len(pool))]
    return nodes[rng.integers(len(nodes))]


def allowed_variables(parent: ExprTree, path) -> frozenset:
    """Variables a replacement for the subtree at `path` may use: those of
    the replaced subtree plus those not used anywhere in `parent`."""
    replaced = active_vars(get_subtree(parent.root, path))
    unused = frozenset(range(parent.n_vars)) - active_vars(parent.root)
    return replaced | unused


def _splice(parent: ExprTree, path, new) -> ExprTree:
    root = replace_subtree(parent.root, path, new)
    return ExprTree(_normalize(root), parent.n_vars, parent.var_names)


def crossover(rng, parent: ExprTree, donor: ExprTree, selection: str = "uniform") -> ExprTree:
    """Replace a random subtree of `parent` with a subtree of `donor` whose
    variables are all admissible at that site.

    Raises
    ------
    NoAdmissibleDonor
        If no subtree of `donor` fits the chosen site.
    """
    path = _pick_path(rng, parent.root, selection)
    allowed = allowed_variables(parent, path)
    candidates = [p for p, n in walk(donor.root) if active_vars(n) <= allowed]
    if not candidates:
        raise NoAdmissibleDonor("donor has no subtree over the allowed variables")
    if selection == "gplearn" and len(candidates) > 1:
        internal = [p for p in candidates if not isinstance(get_subtree(donor.root, p), Variable)]
        leaves = [p for p in candidates if isinstance(get_subtree(donor.root, p), Variable)]
        pool = internal if internal and (rng.random() < 0.9 or not leaves) else leaves
    else:
        pool = candidates
    piece = get_subtree(donor.root, pool[rng.integers(len(pool))])
    return _splice(parent, path, piece)


def subtree_mutation(rng, parent: ExprTree, max_depth: int | None = 4,
                     selection: str = "uniform") -> ExprTree:
    """Replace a random subtree with a freshly grown one over the allowed variables."""
    path = _pick_path(rng, parent.root, selection)
    allowed = allowed_variables(parent, path)
    piece = grow_subtree(rng, allowed, max_depth, parent.var_names)
    return _splice(parent, path, piece)


def hoist_mutation(rng, parent: ExprTree, selection: str = "uniform") -> ExprTree:
    """Replace a random subtree by a random subtree of itself."""
    path = _pick_path(rng, parent.root, selection)
    sub = get_subtree(parent.root, path)
    inner = get_subtree(sub, _pick_path(rng, sub, selection))
    return _splice(parent, path, inner)


def point_mutation(rng, parent: ExprTree, p_replace: float = 0.2) -> ExprTree:
    """Each node is selected independently with probability `p_replace`.

    Selected operators switch to a different search operator, selected shapes
    stay as they are, and selected variables are redrawn without replacement
    from their own indices plus the ones the parent does not use.
    """
    root = parent.root
    ops, var_paths = [], []
    for path, node in walk(root):
        if rng.random() >= p_replace:
            continue
        if isinstance(node, Binary):
            others = [op for op in SEARCH_OPS if op is not node.op]
            ops.append((path, others[rng.integers(len(others))]))
        elif isinstance(node, Variable):
            var_paths.append((path, node.index))
    for path, op in ops:
        node = get_subtree(root, path)
        root = replace_subtree(root, path, Binary(op, node.left, node.right))
    if var_paths:
        unused = set(range(parent.n_vars)) - active_vars(root)
        pool = sorted({v for _, v in var_paths} | unused)
        draw = rng.choice(pool, size=len(var_paths), replace=False)
        for (path, _), idx in zip(var_paths, draw):
            idx = int(idx)
            root = replace_subtree(root, path, Variable(idx, parent.var_names[idx]))
    return ExprTree(root, parent.n_vars, parent.var_names)


def reproduction(parent: ExprTree) -> ExprTree:
    return parent


# ---------------------------------------------------------------------------
# Scoring


@dataclass
class ScoredProgram:
    tree: ExprTree
    canonical_key: str
    val_mse: float
    val_r2: float
    n_shapes: int
    fitted: object = None
    size: int = 0
    depth: int = 0
    learning_rate: float | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return math.isfinite(self.val_mse) and math.isfinite(self.val_r2)


@dataclass
class FrontierReport:
    rows: dict  # shape count -> ScoredProgram

    def __iter__(self):
        return (self.rows[k] for k in sorted(self.rows))

    def table(self) -> list:
        return [
            {
                "shape_count": p.n_shapes,
                "expression": p.canonical_key,
                "val_r2": p.val_r2,
                "val_mse": p.val_mse,
                "size": p.size,
                "depth": p.depth,
            }
            for p in self
        ]


def best_per_shape_count(evaluated) -> FrontierReport:
    """Highest validation R² for every shape count; ties go to the smaller
    program, then to the lexicographically smaller key. Failed programs are
    ignored."""
    evaluated = list(evaluated)
    if not evaluated:
        raise ValueError("no programs to report")
    rows: dict = {}
    for p in evaluated:
        if not p.ok:
            continue
        cur = rows.get(p.n_shapes)
        if cur is None or (-p.val_r2, p.size, p.canonical_key) < (-cur.val_r2, cur.size, cur.canonical_key):
            rows[p.n_shapes] = p
    return FrontierReport(rows)


def program_seed(key: str, run_seed: int) -> int:
    digest = hashlib.sha256(f"{run_seed}\x00{key}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def score_program(tree: ExprTree, data, inner: TrainConfig, run_seed: int = 0) -> ScoredProgram:
    """Train the shape functions of `tree` and score it on the validation half.

    The structure is canonicalized first, so two programs with the same key
    always receive the same initial parameters and the same score.
    """
    canon = canonicalize(tree)
    key = render(canon.root)
    metrics = structural_metrics(canon)
    seed = program_seed(key, run_seed)
    base = dict(tree=canon, canonical_key=key, n_shapes=metrics.n_shapes,
                size=metrics.size, depth=metrics.depth)
    try:
        model = evaluator.compile_tree(canon, seed=seed)
        cfg = TrainConfig(**{**asdict(inner), "seed": seed})
        res = evaluator.train(model, data.train_set, data.val_set, cfg)
    except (SharesError, FloatingPointError, ValueError) as exc:
        return ScoredProgram(val_mse=math.inf, val_r2=-math.inf, error=f"{type(exc).__name__}: {exc}", **base)
    if not (math.isfinite(res.val_mse) and math.isfinite(res.val_r2)):
        return ScoredProgram(val_mse=math.inf, val_r2=-math.inf, error="non-finite score", **base)
    return ScoredProgram(val_mse=res.val_mse, val_r2=res.val_r2, fitted=model,
                         learning_rate=res.learning_rate, **base)


class FitnessCache:
    """Scores keyed by canonical text; each key is trained at most once."""

    def __init__(self, data, inner: TrainConfig, run_seed: int, threads: int = 1):
        self.data = data
        self.inner = inner
        self.run_seed = run_seed
        self.threads = threads
        self.scores: dict = {}
        self.n_trainings = 0

    def evaluate(self, trees) -> list:
        keys = [canonical_key(t) for t in trees]
        todo = {}
        for k, t in zip(keys, trees):
            if k not in self.scores and k not in todo:
                todo[k] = t
        if todo:
            items = sorted(todo.items())
            if self.threads > 1 and len(items) > 1:
                with ThreadPoolExecutor(max_workers=self.threads) as pool:
                    results = list(pool.map(
                        lambda kt: score_program(kt[1], self.data, self.inner, self.run_seed), items))
            else:
                results = [score_program(t, self.data, self.inner, self.run_seed) for _, t in items]
            for (k, _), r in zip(items, results):
                self.scores[k] = r
            self.n_trainings += len(items)
        return [self.scores[k] for k in keys]


def canonical_key(tree: ExprTree) -> str:
    return render(canonicalize(tree).root)


def tournament(rng, fitness, size: int) -> int:
    """Index of the fittest (lowest) of `size` contestants drawn with replacement."""
    contestants = rng.integers(0, len(fitness), size)
    return int(contestants[np.argmin([fitness[i] for i in contestants])])


@dataclass
class SearchResult:
    report: FrontierReport
    evaluated: list
    n_trainings: int
    generation_best: list


def _vary(rng, cfg: SearchConfig, population, fitness):
    parent = population[tournament(rng, fitness, cfg.tournament_size)]
    r = rng.random()
    cuts = np.cumsum([cfg.p_crossover, cfg.p_subtree_mutation, cfg.p_hoist_mutation, cfg.p_point_mutation])
    if r < cuts[0]:
        donor = population[tournament(rng, fitness, cfg.tournament_size)]
        try:
            return crossover(rng, parent, donor, cfg.subtree_selection)
        except NoAdmissibleDonor:
            return reproduction(parent)
    if r < cuts[1]:
        return subtree_mutation(rng, parent, cfg.max_init_depth, cfg.subtree_selection)
    if r < cuts[2]:
        return hoist_mutation(rng, parent, cfg.subtree_selection)
    if r < cuts[3]:
        return point_mutation(rng, parent, cfg.p_point_replace)
    return reproduction(parent)


def evolve(data, cfg: SearchConfig | None = None, progress=None) -> SearchResult:
    """Generational GP; `cfg.generations` counts the initial population.

    `progress`, if given, is called as ``progress(generation, best_program)``
    after each generation is scored.
    """
    cfg = cfg or SearchConfig()
    rng = np.random.default_rng(cfg.seed)
    n_vars = len(data.column_names)
    cache = FitnessCache(data, cfg.inner, cfg.seed, cfg.threads)
    population = [random_grow(rng, n_vars, cfg.max_init_depth, data.column_names)
                  for _ in range(cfg.population_size)]
    generation_best = []
    for gen in range(cfg.generations):
        scored = cache.evaluate(population)
        fitness = [s.val_mse + cfg.parsimony_coefficient * s.size for s in scored]
        best = scored[int(np.argmin(fitness))]
        generation_best.append((best.canonical_key, best.val_mse, best.val_r2))
        if progress is not None:
            progress(gen, best)
        if gen == cfg.generations - 1:
            break
        population = [_vary(rng, cfg, population, fitness) for _ in range(cfg.population_size)]
    evaluated = [cache.scores[k] for k in sorted(cache.scores)]
    return SearchResult(best_per_shape_count(evaluated), evaluated, cache.n_trainings, generation_best)


# ---------------------------------------------------------------------------
# Run artifacts


FRONTIER_COLUMNS = ("shape_count", "expression", "val_r2", "val_mse", "size", "depth", "model_file")


def _atomic_write(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def csv_field(value) -> str:
    if isinstance(value, float):
        return repr(value)
    s = str(value)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_run(out_dir, report: FrontierReport, meta: dict) -> list:
    """Write ``frontier.csv``, one model file per frontier row and ``run.json``.

    Returns the written paths (relative to `out_dir`).
    """
    os.makedirs(out_dir, exist_ok=True)
    lines = [",".join(FRONTIER_COLUMNS)]
    written = []
    for row, p in zip(report.table(), report):
        model_file = f"model_{p.n_shapes}shapes.json"
        if p.fitted is not None:
            evaluator.save_model(p.fitted, os.path.join(out_dir, model_file))
            written.append(model_file)
        else:
            model_file = ""
        lines.append(",".join(csv_field(row[c]) if c != "model_file" else model_file
                              for c in FRONTIER_COLUMNS))
    _atomic_write(os.path.join(out_dir, "frontier.csv"), "\n".join(lines) + "\n")
    _atomic_write(os.path.join(out_dir, "run.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return ["frontier.csv", *written, "run.json"]
