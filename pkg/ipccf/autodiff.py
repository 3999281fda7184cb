"""
A small reverse-mode differentiation core over dense 2-D arrays and fixed sparse
operators.

Primitives record themselves on the innermost active `Tape`; without an active tape they
only compute values, which is how evaluation runs. `backward` walks the tape in reverse
and leaves the gradient of every requires_grad leaf in `Tensor.grad`.

    with Tape() as tape:
        loss = sum(elementwise_mul(x, x))
    backward(tape, loss)
"""
import itertools
import logging
import numpy as np
import scipy.sparse as sp
from dataclasses import dataclass
from scipy.special import expit, logsumexp as _logsumexp, softmax as _softmax
from typing import *

from .utils import NumericalError, ShapeError


logger = logging.getLogger(__name__)

EPS = 1e-12
_counter = itertools.count()


# ------------------- tensors and tape -------------------
class Tensor:
    """
    Dense 2-D real matrix node. Scalars are (1, 1) tensors and 1-D input becomes a column.
    """
    def __init__(self, values, requires_grad: bool = False, name: str = None):
        values = np.asarray(values)
        if not np.issubdtype(values.dtype, np.floating):
            values = values.astype(np.float64)
        if values.ndim == 0:
            values = values.reshape(1, 1)
        elif values.ndim == 1:
            values = values.reshape(-1, 1)
        elif values.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {values.shape}")
        self.values = values
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._id = next(_counter)

    def __repr__(self) -> str:
        label = f" '{self.name}'" if self.name else ''
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.values[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> 'Tensor':
        return Tensor(self.values, requires_grad=False, name=self.name)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise_mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


@dataclass
class _Record:
    output: Tensor
    inputs: Tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    op: str


class Tape:
    """
    Ordered record of executed primitives. Records are appended in execution order, so
    every record's inputs were produced before its output.
    """
    _stack: List['Tape'] = []

    def __init__(self):
        self.records: List[_Record] = []

    def __enter__(self) -> 'Tape':
        Tape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        Tape._stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, output: Tensor, inputs: Sequence[Tensor], vjp, op: str) -> None:
        for tensor in inputs:
            assert tensor._id < output._id, f"tape order violated by '{op}'"
        self.records.append(_Record(output, tuple(inputs), vjp, op))

    def leaves(self) -> List[Tensor]:
        produced = {id(rec.output) for rec in self.records}
        seen, leaves = set(), []
        for rec in self.records:
            for tensor in rec.inputs:
                if tensor.requires_grad and id(tensor) not in produced and id(tensor) not in seen:
                    seen.add(id(tensor))
                    leaves.append(tensor)
        return leaves

    def clear(self) -> None:
        self.records = []


def active_tape() -> Optional[Tape]:
    return Tape._stack[-1] if Tape._stack else None


def backward(tape: Tape, loss: Tensor, leaves: Sequence[Tensor] = ()) -> None:
    """
    Reverse traversal of `tape` from the scalar `loss`. Every requires_grad leaf on the tape
    (and every tensor in `leaves`) ends with `grad` set; unreachable leaves get zeros.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        input_grads = rec.vjp(g)
        for tensor, gi in zip(rec.inputs, input_grads):
            if gi is None or not tensor.requires_grad:
                continue
            if gi.shape != tensor.shape:
                raise ShapeError(f"gradient of '{rec.op}' has shape {gi.shape}, expected {tensor.shape}")
            key = id(tensor)
            grads[key] = grads[key] + gi if key in grads else gi
    targets = {id(t): t for t in itertools.chain(tape.leaves(), leaves)}
    if loss.requires_grad and not any(rec.output is loss for rec in tape.records):
        targets[id(loss)] = loss
    for key, tensor in targets.items():
        tensor.grad = grads.get(key, np.zeros_like(tensor.values))


def _emit(op: str, values: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"non-finite output of '{op}'")
    out = Tensor(values, requires_grad=any(t.requires_grad for t in inputs))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, inputs, vjp, op)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"'{op}' needs equal shapes, got {a.shape} and {b.shape}")


def _scatter_rows(index: np.ndarray, values: np.ndarray, num_rows: int) -> np.ndarray:
    """out[r] = sum of values[e] over entries e with index[e] == r."""
    selector = sp.csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))),
                             shape=(num_rows, len(index)))
    return np.asarray(selector @ values)


def _csr(operator) -> Tuple[sp.csr_matrix, sp.csr_matrix]:
    if hasattr(operator, 'matrix'):
        return operator.matrix, operator.transposed
    matrix = sp.csr_matrix(operator)
    return matrix, matrix.T.tocsr()


# ------------------- primitives -------------------
def spmm(operator, x: Tensor) -> Tensor:
    """Product of a fixed sparse operator with a dense tensor."""
    matrix, transposed = _csr(operator)
    if matrix.shape[1] != x.rows:
        raise ShapeError(f"spmm: operator has {matrix.shape[1]} columns, input has {x.rows} rows")
    values = np.asarray(matrix @ x.values).astype(x.values.dtype, copy=False)
    return _emit('spmm', values, [x], lambda g: [np.asarray(transposed @ g).astype(g.dtype, copy=False)])


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape('add', a, b)
    return _emit('add', a.values + b.values, [a, b], lambda g: [g, g])


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape('sub', a, b)
    return _emit('sub', a.values - b.values, [a, b], lambda g: [g, -g])


def scale(x: Tensor, alpha: float) -> Tensor:
    return _emit('scale', alpha * x.values, [x], lambda g: [alpha * g])


def shift(x: Tensor, c: float) -> Tensor:
    """x + c for a constant scalar c."""
    return _emit('shift', x.values + c, [x], lambda g: [g])


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape('elementwise_mul', a, b)
    return _emit('elementwise_mul', a.values * b.values, [a, b],
                 lambda g: [g * b.values, g * a.values])


def divide(a: Tensor, b: Tensor, floor: float = None) -> Tensor:
    """
    a / b elementwise. With `floor` the denominator is max(b, floor) and no gradient
    flows into b where the floor is active.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape('divide', a, b)
    denom = b.values if floor is None else np.maximum(b.values, floor)
    live = np.ones_like(denom, dtype=bool) if floor is None else b.values > floor
    values = a.values / denom

    def vjp(g):
        return [g / denom, np.where(live, -g * a.values / (denom * denom), 0.0)]
    return _emit('divide', values, [a, b], vjp)


def scale_rows(x: Tensor, v: Tensor) -> Tensor:
    """Multiply row r of x by v[r, 0]."""
    if v.shape != (x.rows, 1):
        raise ShapeError(f"scale_rows: weights of shape {v.shape} do not match {x.rows} rows")
    return _emit('scale_rows', x.values * v.values, [x, v],
                 lambda g: [g * v.values, np.sum(g * x.values, axis=1, keepdims=True)])


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    rows = {t.rows for t in tensors}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols needs equal row counts, got {sorted(rows)}")
    bounds = np.cumsum([0] + [t.cols for t in tensors])
    values = np.concatenate([t.values for t in tensors], axis=1)
    return _emit('concat_cols', values, list(tensors),
                 lambda g: [g[:, bounds[k]:bounds[k + 1]] for k in range(len(tensors))])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return _emit('matmul', a.values @ b.values, [a, b],
                 lambda g: [g @ b.values.T, a.values.T @ g])


def transpose(x: Tensor) -> Tensor:
    return _emit('transpose', x.values.T.copy(), [x], lambda g: [g.T.copy()])


def affine(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """x @ weights + bias, with bias a (1, out) row shared by every input row."""
    if x.cols != weights.rows or bias.shape != (1, weights.cols):
        raise ShapeError(f"affine: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    values = x.values @ weights.values + bias.values
    return _emit('affine', values, [x, weights, bias],
                 lambda g: [g @ weights.values.T, x.values.T @ g, np.sum(g, axis=0, keepdims=True)])


def gather_rows(x: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    if len(index) and (index.min() < 0 or index.max() >= x.rows):
        raise IndexError(f"gather_rows: index out of range for {x.rows} rows")
    return _emit('gather_rows', x.values[index], [x],
                 lambda g: [_scatter_rows(index, g, x.rows)])


def segment_sum(x: Tensor, segments, num_segments: int) -> Tensor:
    """out[s] = sum of rows x[e] with segments[e] == s; empty segments are zero."""
    segments = np.asarray(segments, dtype=np.int64)
    if len(segments) != x.rows:
        raise ShapeError(f"segment_sum: {len(segments)} segment ids for {x.rows} rows")
    return _emit('segment_sum', _scatter_rows(segments, x.values, num_segments), [x],
                 lambda g: [g[segments]])


def edge_spmm(rows, cols, values: Tensor, m: Tensor, num_rows: int) -> Tensor:
    """
    Sparse-dense product whose sparse weights are a tensor: out[r] = sum over edges e with
    rows[e] == r of values[e] * m[cols[e]]. Differentiable in both values and m.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if values.shape != (len(rows), 1):
        raise ShapeError(f"edge_spmm: edge weights of shape {values.shape} for {len(rows)} edges")
    matrix = sp.csr_matrix((values.values[:, 0], (rows, cols)), shape=(num_rows, m.rows))
    out = np.asarray(matrix @ m.values)

    def vjp(g):
        d_values = np.sum(g[rows] * m.values[cols], axis=1, keepdims=True)
        return [d_values, np.asarray(matrix.T @ g)]
    return _emit('edge_spmm', out, [values, m], vjp)


def row_cosine_pairs(x: Tensor, rows_a, rows_b) -> Tensor:
    """
    Cosine similarity between rows x[rows_a[e]] and x[rows_b[e]] as an (m, 1) column.
    A pair whose norm product is at most EPS has cosine 0 and zero gradient.
    """
    rows_a = np.asarray(rows_a, dtype=np.int64)
    rows_b = np.asarray(rows_b, dtype=np.int64)
    a, b = x.values[rows_a], x.values[rows_b]
    norm_all = np.linalg.norm(x.values, axis=1)
    na, nb = norm_all[rows_a], norm_all[rows_b]
    live = na * nb > EPS
    denom = np.maximum(na * nb, EPS)
    cos = np.where(live, np.sum(a * b, axis=1) / denom, 0.0)

    def vjp(g):
        g = np.where(live, g[:, 0], 0.0)[:, None]
        safe_a, safe_b = np.where(live, na, 1.0), np.where(live, nb, 1.0)
        da = b / denom[:, None] - a * (cos / (safe_a * safe_a))[:, None]
        db = a / denom[:, None] - b * (cos / (safe_b * safe_b))[:, None]
        grad = _scatter_rows(rows_a, da * g, x.rows)
        grad += _scatter_rows(rows_b, db * g, x.rows)
        return [grad]
    return _emit('row_cosine_pairs', cos[:, None], [x], vjp)


def normalize_rows(x: Tensor) -> Tensor:
    """Each row divided by max(its L2 norm, EPS)."""
    norms = np.linalg.norm(x.values, axis=1, keepdims=True)
    denom = np.maximum(norms, EPS)
    y = x.values / denom

    def vjp(g):
        radial = np.sum(g * y, axis=1, keepdims=True)
        return [np.where(norms > EPS, (g - y * radial) / denom, g / denom)]
    return _emit('normalize_rows', y, [x], vjp)


def softmax_over_axis(x: Tensor, axis: int = 1) -> Tensor:
    y = _softmax(x.values, axis=axis)
    return _emit('softmax', y, [x],
                 lambda g: [y * (g - np.sum(g * y, axis=axis, keepdims=True))])


def logsumexp(x: Tensor, axis: int = 1) -> Tensor:
    values = _logsumexp(x.values, axis=axis, keepdims=True)
    return _emit('logsumexp', values, [x],
                 lambda g: [g * np.exp(x.values - values)])


def sum(x: Tensor, axis: int = None) -> Tensor:
    if axis is None:
        return _emit('sum', np.sum(x.values).reshape(1, 1), [x],
                     lambda g: [np.full_like(x.values, g[0, 0])])
    values = np.sum(x.values, axis=axis, keepdims=True)
    return _emit('sum', values, [x], lambda g: [np.broadcast_to(g, x.shape).copy()])


def mean(x: Tensor, axis: int = None) -> Tensor:
    count = x.values.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis), 1.0 / count)


def log_sigmoid(x: Tensor) -> Tensor:
    """log(sigmoid(x)) without overflow for large |x|."""
    return _emit('log_sigmoid', -np.logaddexp(0.0, -x.values), [x],
                 lambda g: [g * expit(-x.values)])


def l2_norm_sq(x: Tensor) -> Tensor:
    """Squared Frobenius norm as a scalar tensor."""
    return _emit('l2_norm_sq', np.sum(x.values * x.values).reshape(1, 1), [x],
                 lambda g: [2.0 * g[0, 0] * x.values])


# ------------------- verification -------------------
@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst_index: Tuple[int, int]
    checked: int
    tol: float

    def __str__(self) -> str:
        status = 'PASS' if self.passed else 'FAIL'
        return (f"{status} max_rel_error={self.max_rel_error:.3e} at {self.worst_index} "
                f"({self.checked} entries, tol {self.tol:g})")


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def finite_diff_check(f: Callable[[Tensor], Tensor], point: Tensor,
                      eps: float = 1e-4, tol: float = 1e-4) -> GradCheckReport:
    """
    Compare tape gradients of the scalar function f at `point` with central differences
    (f(x + eps e) - f(x - eps e)) / 2 eps, entry by entry.

    `point` is perturbed in place and restored; f must be deterministic.
    """
    with Tape() as tape:
        loss = f(point)
    backward(tape, loss, leaves=[point])
    analytic = np.array(point.grad, dtype=np.float64)
    numeric = np.zeros_like(analytic)
    for index in np.ndindex(*point.shape):
        original = point.values[index]
        point.values[index] = original + eps
        upper = f(point).item()
        point.values[index] = original - eps
        lower = f(point).item()
        point.values[index] = original
        numeric[index] = (upper - lower) / (2.0 * eps)
    errors = relative_error(analytic, numeric)
    worst = np.unravel_index(int(np.argmax(errors)), errors.shape) if errors.size else (0, 0)
    max_error = float(errors[worst]) if errors.size else 0.0
    return GradCheckReport(passed=bool(max_error < tol), max_rel_error=max_error,
                           worst_index=tuple(int(i) for i in worst), checked=int(errors.size), tol=tol)
