"""Differentiable evaluation and training of SHARE structures.

A tree is compiled into a flat instruction list. Every shape node owns a
standardizer (batch normalization without affine terms) followed by a small
ELU network; all network parameters live in one flat vector so that a single
Adam update covers the whole model. Gradients are computed by a hand-written
reverse pass over the instruction list.
"""
from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    DegenerateTarget,
    NonFiniteGradient,
    NonFiniteOutput,
    SchemaError,
    TrainingDiverged,
    UnknownShape,
    ValidationFailed,
)
from .expr import (
    Binary,
    BinaryOp,
    Constant,
    ExprTree,
    Func,
    Shape,
    Variable,
    canonical_render,
    children,
    render,
    validate_transparent,
)

DEFAULT_WIDTHS = (1, 10, 10, 10, 10, 10, 1)
DIV_EPSILON = 1e-6

_OPCODES = {
    BinaryOp.ADD: "add",
    BinaryOp.SUB: "sub",
    BinaryOp.MUL: "mul",
    BinaryOp.DIV: "div",
}


@dataclass
class Standardizer:
    running_mean: float = 0.0
    running_var: float = 1.0
    momentum: float = 0.1
    eps: float = 1e-5

    def update(self, batch_mean, batch_var_unbiased):
        m = self.momentum
        self.running_mean = (1.0 - m) * self.running_mean + m * float(batch_mean)
        self.running_var = (1.0 - m) * self.running_var + m * float(batch_var_unbiased)


@dataclass
class ShapeFunction:
    """One trainable univariate function: standardizer followed by an MLP."""

    widths: tuple
    offset: int
    n_params: int
    standardizer: Standardizer = field(default_factory=Standardizer)
    input_range: tuple | None = None


def n_mlp_params(widths) -> int:
    return sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))


def _protect(d, eps):
    guard = np.abs(d) < eps
    return np.where(guard, np.where(d >= 0, eps, -eps), d), guard


class CompiledModel:
    """A SHARE structure bound to concrete shape functions."""

    def __init__(self, tree: ExprTree, shapes, params, div_epsilon=DIV_EPSILON):
        self.tree = tree
        self.shapes = list(shapes)
        self.params = params
        self.div_epsilon = float(div_epsilon)
        self._program = _linearize(tree.root)

    @property
    def n_shapes(self) -> int:
        return len(self.shapes)

    @property
    def expression(self) -> str:
        return render(self.tree.root)

    def shape_params(self, shape_id: int) -> np.ndarray:
        s = self.shapes[shape_id]
        return self.params[s.offset:s.offset + s.n_params]

    # -- forward / backward -------------------------------------------------

    def _run(self, X, training):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.tree.n_vars:
            raise SchemaError(
                f"expected a 2-d array with {self.tree.n_vars} columns, got shape {X.shape}"
            )
        vals = [None] * len(self._program)
        tape = [None] * len(self._program)
        eps = self.div_epsilon
        for k, ins in enumerate(self._program):
            op = ins[0]
            if op == "var":
                vals[k] = X[:, ins[1]]
            elif op == "add":
                vals[k] = vals[ins[1]] + vals[ins[2]]
            elif op == "sub":
                vals[k] = vals[ins[1]] - vals[ins[2]]
            elif op == "mul":
                vals[k] = vals[ins[1]] * vals[ins[2]]
            elif op == "div":
                d, guard = _protect(vals[ins[2]], eps)
                vals[k] = vals[ins[1]] / d
                tape[k] = (d, guard)
            else:  # shape
                u = vals[ins[1]]
                sf = self.shapes[ins[2]]
                st = sf.standardizer
                if training:
                    mean = u.mean()
                    var = u.var()
                else:
                    mean, var = st.running_mean, st.running_var
                std = math.sqrt(var + st.eps)
                xhat = (u - mean) / std
                out, acts = kernels.mlp_forward(self.shape_params(ins[2]), sf.widths, xhat)
                vals[k] = out
                tape[k] = (xhat, std, acts, mean, u)
        return vals, tape

    def forward(self, X, training=False) -> np.ndarray:
        vals, _ = self._run(X, training)
        out = np.array(vals[-1], dtype=np.float64, copy=True)
        if not np.all(np.isfinite(out)):
            raise NonFiniteOutput("prediction contains NaN or Inf")
        return out

    predict = forward

    def loss_and_grad(self, X, y, training=True):
        """Batch MSE and its exact gradient with respect to ``self.params``.

        Also returns per-shape batch statistics ``{shape_id: (mean, unbiased_var)}``
        for the caller to fold into the running averages.
        """
        y = np.asarray(y, dtype=np.float64)
        vals, tape = self._run(X, training)
        pred = vals[-1]
        n = pred.shape[0]
        resid = pred - y
        loss = float(np.mean(resid * resid))
        grad = np.zeros_like(self.params)
        grads = [None] * len(self._program)
        grads[-1] = 2.0 * resid / n
        stats = {}
        for k in range(len(self._program) - 1, -1, -1):
            ins = self._program[k]
            g = grads[k]
            op = ins[0]
            if op == "var":
                continue
            if op == "add":
                grads[ins[1]] = g
                grads[ins[2]] = g
            elif op == "sub":
                grads[ins[1]] = g
                grads[ins[2]] = -g
            elif op == "mul":
                grads[ins[1]] = g * vals[ins[2]]
                grads[ins[2]] = g * vals[ins[1]]
            elif op == "div":
                d, guard = tape[k]
                grads[ins[1]] = g / d
                grads[ins[2]] = np.where(guard, 0.0, -g * vals[ins[1]] / (d * d))
            else:
                sid = ins[2]
                sf = self.shapes[sid]
                xhat, std, acts, mean, u = tape[k]
                gx, gp = kernels.mlp_backward(self.shape_params(sid), sf.widths, acts, g)
                grad[sf.offset:sf.offset + sf.n_params] = gp
                if training:
                    gu = (gx - gx.mean() - xhat * np.mean(gx * xhat)) / std
                    var_unbiased = float(u.var(ddof=1)) if n > 1 else float(u.var())
                    stats[sid] = (mean, var_unbiased)
                else:
                    gu = gx / std
                grads[ins[1]] = gu
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradient("gradient contains NaN or Inf")
        return loss, grad, stats

    def backward(self, X, y, training=True) -> list:
        """Per-shape gradients of the batch MSE, indexed by shape id."""
        _, grad, _ = self.loss_and_grad(X, y, training)
        return [grad[s.offset:s.offset + s.n_params].copy() for s in self.shapes]

    def update_running_stats(self, stats):
        for sid, (mean, var) in stats.items():
            self.shapes[sid].standardizer.update(mean, var)

    # -- shape access -------------------------------------------------------

    def shape_inputs(self, X) -> dict:
        """Raw (pre-standardization) argument of every shape, eval mode."""
        vals, _ = self._run(X, training=False)
        return {ins[2]: vals[ins[1]] for ins in self._program if ins[0] == "shape"}

    def eval_shape(self, shape_id: int, u) -> np.ndarray:
        if not 0 <= shape_id < len(self.shapes):
            raise UnknownShape(f"model has no shape with id {shape_id} ({self.n_shapes} shapes)")
        sf = self.shapes[shape_id]
        st = sf.standardizer
        xhat = (np.asarray(u, dtype=np.float64) - st.running_mean) / math.sqrt(st.running_var + st.eps)
        out, _ = kernels.mlp_forward(self.shape_params(shape_id), sf.widths, xhat)
        return out

    def record_input_ranges(self, X):
        for sid, u in self.shape_inputs(X).items():
            self.shapes[sid].input_range = (float(np.min(u)), float(np.max(u)))

    # -- state --------------------------------------------------------------

    def snapshot(self):
        return (
            self.params.copy(),
            [(s.standardizer.running_mean, s.standardizer.running_var) for s in self.shapes],
        )

    def restore(self, snap):
        params, stats = snap
        self.params[:] = params
        for s, (m, v) in zip(self.shapes, stats):
            s.standardizer.running_mean = m
            s.standardizer.running_var = v


def _linearize(root):
    program = []

    def emit(node):
        if isinstance(node, Variable):
            program.append(("var", node.index))
        elif isinstance(node, Binary):
            a = emit(node.left)
            b = emit(node.right)
            program.append((_OPCODES[node.op], a, b))
        elif isinstance(node, Shape):
            a = emit(node.child)
            program.append(("shape", a, node.shape_id))
        else:
            raise TypeError(f"cannot compile node {node!r}")
        return len(program) - 1

    emit(root)
    return program


def compile_tree(tree: ExprTree, seed: int = 0, widths=DEFAULT_WIDTHS,
                 div_epsilon=DIV_EPSILON, check=True) -> CompiledModel:
    """Bind fresh, deterministically initialized shape functions to `tree`.

    Weights and biases of every layer are drawn from U(-a, a) with
    ``a = sqrt(1 / fan_in)``; shapes are initialized in shape-id order.
    """
    for _, node in _nodes(tree.root):
        if isinstance(node, Constant):
            raise ValueError("trees with numeric constants cannot be compiled")
        if isinstance(node, Func) or (isinstance(node, Binary) and node.op is BinaryOp.POW):
            raise ValueError(f"unsupported node in trainable model: {node!r}")
    if check:
        verdict = validate_transparent(tree)
        if not verdict.is_transparent:
            raise ValidationFailed(verdict)
    ids = sorted(n.shape_id for _, n in _nodes(tree.root) if isinstance(n, Shape))
    if ids != list(range(len(ids))):
        raise ValueError(f"shape ids must be distinct and contiguous from 0, got {ids}")
    widths = tuple(widths)
    per = n_mlp_params(widths)
    params = np.empty(per * len(ids), dtype=np.float64)
    rng = np.random.default_rng(seed)
    shapes = []
    for sid in ids:
        off = sid * per
        pos = off
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            a = math.sqrt(1.0 / fan_in)
            count = fan_in * fan_out + fan_out
            params[pos:pos + count] = rng.uniform(-a, a, size=count)
            pos += count
        shapes.append(ShapeFunction(widths, off, per))
    return CompiledModel(tree, shapes, params, div_epsilon)


def _nodes(root):
    stack = [root]
    while stack:
        n = stack.pop()
        yield None, n
        stack.extend(children(n))


# ---------------------------------------------------------------------------
# Metrics and training


def r2_score(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.size < 2:
        raise ValueError("r2_score needs two equal-length arrays with at least 2 entries")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateTarget("target has zero variance; R^2 is undefined")
    return 1.0 - float(np.sum((y - y_hat) ** 2)) / ss_tot


@dataclass
class TrainConfig:
    max_epochs: int = 1000
    learning_rates: tuple = (1e-3, 1e-2, 1e-1)
    weight_decay: float = 1e-4
    batch_size: int | None = None  # None: full batch up to full_batch_limit rows
    early_stop_patience: int = 100
    seed: int = 0
    lr_trial_fraction: float = 0.1
    full_batch_limit: int = 4096
    large_batch_size: int = 1024

    def __post_init__(self):
        self.learning_rates = tuple(float(lr) for lr in self.learning_rates)
        if not self.learning_rates:
            raise ValueError("learning_rates must not be empty")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("max_epochs and early_stop_patience must be positive")

    def effective_batch_size(self, n_rows: int) -> int:
        if self.batch_size is not None:
            return min(self.batch_size, n_rows)
        return n_rows if n_rows <= self.full_batch_limit else self.large_batch_size


@dataclass
class TrainResult:
    model: CompiledModel
    val_mse: float
    val_r2: float
    learning_rate: float | None
    epochs: int
    history: list


def _mse(model, X, y):
    try:
        pred = model.forward(X)
    except NonFiniteOutput:
        return math.inf
    return float(np.mean((pred - y) ** 2))


def _fit(model, X, y, Xv, yv, lr, epochs, cfg):
    """Adam with early stopping; leaves `model` at its best validation epoch."""
    rng = np.random.default_rng(cfg.seed)
    n = X.shape[0]
    bs = cfg.effective_batch_size(n)
    m = np.zeros_like(model.params)
    v = np.zeros_like(model.params)
    step = 0
    best = math.inf
    best_snap = model.snapshot()
    since_best = 0
    history = []
    for _epoch in range(epochs):
        order = np.arange(n) if bs >= n else rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            Xb, yb = (X, y) if bs >= n else (X[idx], y[idx])
            try:
                _, grad, stats = model.loss_and_grad(Xb, yb, training=True)
            except NonFiniteGradient as exc:
                raise TrainingDiverged(str(exc)) from exc
            model.update_running_stats(stats)
            step += 1
            kernels.adam_step(model.params, grad, m, v, step, lr, 0.9, 0.999, 1e-8,
                              cfg.weight_decay)
        if not np.all(np.isfinite(model.params)):
            raise TrainingDiverged("parameters became non-finite")
        val = _mse(model, Xv, yv)
        history.append(val)
        if val < best:
            best = val
            best_snap = model.snapshot()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                break
    if not math.isfinite(best):
        raise TrainingDiverged("validation loss never became finite")
    model.restore(best_snap)
    return best, history


def train(model: CompiledModel, train_set, val_set, cfg: TrainConfig | None = None) -> TrainResult:
    """Fit the shape functions of `model` in place.

    Each candidate learning rate gets a short trial run from the initial
    parameters; the best one (lowest validation MSE) is then used for the
    full run. The returned metrics belong to the best validation epoch.
    """
    cfg = cfg or TrainConfig()
    X, y = (np.asarray(a, dtype=np.float64) for a in train_set)
    Xv, yv = (np.asarray(a, dtype=np.float64) for a in val_set)
    if X.shape[0] == 0 or Xv.shape[0] == 0:
        raise ValueError("training and validation sets must be non-empty")
    if float(np.var(yv)) == 0.0:
        raise DegenerateTarget("validation target has zero variance")

    if model.params.size == 0:
        val = _mse(model, Xv, yv)
        if not math.isfinite(val):
            raise TrainingDiverged("non-finite predictions")
        return TrainResult(model, val, r2_score(yv, model.forward(Xv)), None, 0, [])

    init = model.snapshot()
    lr = cfg.learning_rates[0]
    if len(cfg.learning_rates) > 1:
        trial_epochs = max(1, int(round(cfg.lr_trial_fraction * cfg.max_epochs)))
        scores = []
        for cand in cfg.learning_rates:
            model.restore(init)
            try:
                score, _ = _fit(model, X, y, Xv, yv, cand, trial_epochs, cfg)
            except TrainingDiverged:
                score = math.inf
            scores.append(score)
        if all(math.isinf(s) for s in scores):
            raise TrainingDiverged("all candidate learning rates diverged")
        lr = cfg.learning_rates[int(np.argmin(scores))]
        model.restore(init)
    best, history = _fit(model, X, y, Xv, yv, lr, cfg.max_epochs, cfg)
    model.record_input_ranges(X)
    return TrainResult(model, best, r2_score(yv, model.forward(Xv)), lr, len(history), history)


# ---------------------------------------------------------------------------
# Serialization

FORMAT = "shares-model"
VERSION = 1


def _pack(arr) -> str:
    return base64.b64encode(np.asarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _unpack(text) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f8").astype(np.float64)


def model_to_dict(model: CompiledModel) -> dict:
    return {
        "format": FORMAT,
        "version": VERSION,
        "expression": render(model.tree.root),
        "canonical": canonical_render(model.tree),
        "variables": list(model.tree.var_names),
        "div_epsilon": model.div_epsilon,
        "shapes": [
            {
                "shape_id": i,
                "layer_widths": list(s.widths),
                "params_f8le": _pack(model.shape_params(i)),
                "running_mean": s.standardizer.running_mean,
                "running_var": s.standardizer.running_var,
                "momentum": s.standardizer.momentum,
                "eps": s.standardizer.eps,
                "input_range": list(s.input_range) if s.input_range else None,
            }
            for i, s in enumerate(model.shapes)
        ],
        "checksum": hashlib.sha256(model.params.astype("<f8").tobytes()).hexdigest(),
    }


def model_from_dict(doc: dict) -> CompiledModel:
    from .closedform import parse_share

    if doc.get("format") != FORMAT:
        raise SchemaError("not a serialized SHARE model")
    tree = parse_share(doc["expression"], doc["variables"])
    shapes, chunks, off = [], [], 0
    for i, s in enumerate(sorted(doc["shapes"], key=lambda s: s["shape_id"])):
        if s["shape_id"] != i:
            raise SchemaError("shape ids must be contiguous from 0")
        p = _unpack(s["params_f8le"])
        widths = tuple(s["layer_widths"])
        if p.size != n_mlp_params(widths):
            raise SchemaError(f"shape {i}: parameter count does not match layer widths")
        st = Standardizer(s["running_mean"], s["running_var"], s["momentum"], s["eps"])
        rng = tuple(s["input_range"]) if s.get("input_range") else None
        shapes.append(ShapeFunction(widths, off, p.size, st, rng))
        chunks.append(p)
        off += p.size
    params = np.concatenate(chunks) if chunks else np.empty(0)
    if "checksum" in doc and hashlib.sha256(params.astype("<f8").tobytes()).hexdigest() != doc["checksum"]:
        raise SchemaError("parameter checksum mismatch; the model file is corrupted")
    if len(shapes) != sum(isinstance(n, Shape) for _, n in _nodes(tree.root)):
        raise SchemaError("number of shapes does not match the expression")
    return CompiledModel(tree, shapes, params, doc["div_epsilon"])


def save_model(model: CompiledModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> CompiledModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
