"""Minimal reverse-mode autodiff over float64 numpy arrays.

The tape is rebuilt on every forward pass: each op returns a `Tensor` that
remembers its parents and a closure computing the vector-Jacobian product.
`backward` walks the tape once, in reverse topological order, and pushes
gradients of parameter leaves into their `ParameterStore` slots.

Everything is double precision; single precision makes the 1e-4
finite-difference tolerance unreliable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_FORMAT = "eegalign-checkpoint"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """One node of the tape: a value, its parents, and a local vjp."""

    __slots__ = ("value", "grad", "_parents", "_vjp", "_entry")

    def __init__(self, value, parents=(), vjp=None, op="tensor"):
        self.value = _as_array(value)
        if not np.all(np.isfinite(self.value)):
            raise FloatingPointError(f"non-finite values produced by op '{op}'")
        self.grad = None
        self._parents = tuple(parents)
        self._vjp = vjp
        self._entry = None  # set by ParameterStore.tensor()

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def tensor(x) -> Tensor:
    """Wrap a constant; it takes no gradient."""
    return Tensor(x)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) for every tape node reachable from `loss`.

    Parameter leaves additionally push their gradient into the owning
    ParameterStore entry, unless the entry is frozen.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    for node in topo:
        node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._vjp is not None:
            for parent, pg in zip(node._parents, node._vjp(node.grad)):
                parent.grad += pg
        if node._entry is not None and not node._entry.frozen:
            node._entry.grad += node.grad


# ---------------------------------------------------------------------------
# ops

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also broadcasts a 1-D bias over the rows of a matrix,
    or a scalar over anything."""
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        return Tensor(av + bv, (a, b), lambda g: (g, g), op="add")
    if av.ndim == 2 and bv.ndim == 1 and av.shape[1] == bv.shape[0]:
        return Tensor(av + bv, (a, b), lambda g: (g, g.sum(axis=0)), op="add")
    if bv.ndim == 0:
        return Tensor(av + bv, (a, b), lambda g: (g, g.sum()), op="add")
    if av.ndim == 0:
        return Tensor(av + bv, (a, b), lambda g: (g.sum(), g), op="add")
    raise ShapeError(f"add: incompatible shapes {av.shape} and {bv.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; either side may be a scalar tensor."""
    av, bv = a.value, b.value
    if av.shape == bv.shape:
        return Tensor(av * bv, (a, b), lambda g: (g * bv, g * av), op="mul")
    if bv.ndim == 0:
        return Tensor(av * bv, (a, b), lambda g: (g * bv, (g * av).sum()), op="mul")
    if av.ndim == 0:
        return Tensor(av * bv, (a, b), lambda g: ((g * bv).sum(), g * av), op="mul")
    raise ShapeError(f"mul: incompatible shapes {av.shape} and {bv.shape}")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.value * c, (a,), lambda g: (g * c,), op="scale")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {av.shape} and {bv.shape}")
    return Tensor(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), op="matmul")


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.value.shape}")
    return Tensor(a.value.T, (a,), lambda g: (g.T,), op="transpose")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return Tensor(y, (a,), lambda g: (g * (1.0 - y * y),), op="tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return Tensor(a.value * mask, (a,), lambda g: (g * mask,), op="relu")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return Tensor(y, (a,), lambda g: (g * y,), op="exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.value <= 0):
        raise FloatingPointError("log: non-positive input")
    x = a.value
    return Tensor(np.log(x), (a,), lambda g: (g / x,), op="log")


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a matrix; rows sum to 1."""
    if a.value.ndim != 2:
        raise ShapeError(f"softmax_rows: expected a matrix, got shape {a.value.shape}")
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return Tensor(y, (a,), vjp, op="softmax_rows")


def log_softmax_rows(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError(f"log_softmax_rows: expected a matrix, got shape {a.value.shape}")
    z = a.value - a.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    sm = np.exp(y)

    def vjp(g):
        return (g - sm * g.sum(axis=1, keepdims=True),)

    return Tensor(y, (a,), vjp, op="log_softmax_rows")


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit Euclidean norm. Zero rows are rejected."""
    if a.value.ndim != 2:
        raise ShapeError(f"l2_normalize_rows: expected a matrix, got shape {a.value.shape}")
    n = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
    if np.any(n == 0):
        raise FloatingPointError("l2_normalize_rows: zero-norm row")
    y = a.value / n

    def vjp(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / n,)

    return Tensor(y, (a,), vjp, op="l2_normalize_rows")


def sum_all(a: Tensor) -> Tensor:
    return Tensor(a.value.sum(), (a,), lambda g: (np.full_like(a.value, float(g)),), op="sum_all")


def mean_all(a: Tensor) -> Tensor:
    n = a.value.size
    return Tensor(a.value.mean(), (a,), lambda g: (np.full_like(a.value, float(g) / n),), op="mean_all")


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.value.shape[axis]
    return Tensor(
        a.value.mean(axis=axis),
        (a,),
        lambda g: (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),),
        op="mean_axis",
    )


def concat(parts: list[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty part list")
    sizes = [p.value.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp, op="concat")


def take_rows(a: Tensor, idx) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError(f"take_rows: expected a matrix, got shape {a.value.shape}")
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        buf = np.zeros_like(a.value)
        np.add.at(buf, idx, g)
        return (buf,)

    return Tensor(a.value[idx], (a,), vjp, op="take_rows")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.value.shape
    return Tensor(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), op="reshape")


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints

@dataclass
class _Entry:
    value: np.ndarray
    grad: np.ndarray
    frozen: bool
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros_like(self.value)
        if self.v is None:
            self.v = np.zeros_like(self.value)


class ParameterStore:
    """Named trainable arrays with gradient slots, frozen flags and Adam state."""

    def __init__(self):
        self._entries: dict[str, _Entry] = {}
        self._step = 0

    def add(self, name: str, value, frozen: bool = False) -> None:
        if name in self._entries:
            raise KeyError(f"parameter '{name}' already exists")
        arr = _as_array(value).copy()
        self._entries[name] = _Entry(value=arr, grad=np.zeros_like(arr), frozen=frozen)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> list[str]:
        return sorted(self._entries)

    def value(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def grad(self, name: str) -> np.ndarray:
        return self._entries[name].grad

    def is_frozen(self, name: str) -> bool:
        return self._entries[name].frozen

    def set_value(self, name: str, value) -> None:
        e = self._entries[name]
        arr = _as_array(value)
        if arr.shape != e.value.shape:
            raise ShapeError(f"set_value '{name}': shape {arr.shape} != {e.value.shape}")
        e.value = arr.copy()

    def tensor(self, name: str) -> Tensor:
        """Fresh tape leaf for this parameter; backward() fills its grad slot."""
        e = self._entries[name]
        t = Tensor(e.value)
        t._entry = e
        return t

    def zero_grads(self) -> None:
        for e in self._entries.values():
            e.grad[...] = 0.0

    def adam_step(self, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8) -> None:
        """One Adam update for every non-frozen entry; gradients are zeroed."""
        self._step += 1
        b1, b2 = betas
        c1 = 1.0 - b1 ** self._step
        c2 = 1.0 - b2 ** self._step
        for e in self._entries.values():
            if not e.frozen:
                e.m = b1 * e.m + (1.0 - b1) * e.grad
                e.v = b2 * e.v + (1.0 - b2) * e.grad * e.grad
                e.value = e.value - lr * (e.m / c1) / (np.sqrt(e.v / c2) + eps)
            e.grad = np.zeros_like(e.value)

    def checksum(self) -> bytes:
        """Concatenated raw bytes of all values, in name order."""
        return b"".join(self._entries[n].value.tobytes() for n in self.names())


@dataclass
class GradCheckReport:
    name: str
    max_rel_err: float
    passed: bool
    per_param: dict[str, float] = field(default_factory=dict)


def finite_difference_check(
    loss_fn,
    store: ParameterStore,
    step: float = 1e-5,
    tol: float = 1e-4,
    rng: np.random.Generator | None = None,
    max_components: int | None = None,
    name: str = "loss",
) -> GradCheckReport:
    """Compare analytic gradients of `loss_fn()` against central differences.

    `loss_fn` must build a fresh tape from the store's current values and
    return a scalar Tensor. With `max_components` set, only that many
    randomly chosen components per parameter are probed (preserving the
    componentwise comparison at a fraction of the cost).
    """
    if step <= 0 or tol <= 0:
        raise ValueError("step and tol must be positive")
    store.zero_grads()
    loss = loss_fn()
    if loss.value.size != 1 or not np.isfinite(loss.value):
        raise FloatingPointError("finite_difference_check: loss is not a finite scalar")
    backward(loss)
    analytic = {n: store.grad(n).copy() for n in store.names() if not store.is_frozen(n)}
    store.zero_grads()

    def eval_loss() -> float:
        out = loss_fn()
        val = float(out.value)
        if not np.isfinite(val):
            raise FloatingPointError("finite_difference_check: non-finite loss evaluation")
        return val

    per_param: dict[str, float] = {}
    for pname, ag in analytic.items():
        flat = store.value(pname).reshape(-1)
        n = flat.size
        if max_components is not None and max_components < n:
            if rng is None:
                raise ValueError("rng required when sampling components")
            indices = rng.choice(n, size=max_components, replace=False)
        else:
            indices = np.arange(n)
        worst = 0.0
        ag_flat = ag.reshape(-1)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + step
            lp = eval_loss()
            flat[i] = orig - step
            lm = eval_loss()
            flat[i] = orig
            num = (lp - lm) / (2.0 * step)
            a = ag_flat[i]
            rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
            if rel > worst:
                worst = rel
        per_param[pname] = worst
    max_rel = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(name=name, max_rel_err=max_rel, passed=max_rel < tol, per_param=per_param)


def save_checkpoint(store: ParameterStore, path, meta: dict | None = None) -> None:
    """Write the store to a structured-text file with exact float round-trip."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {
            n: {
                "shape": list(store.value(n).shape),
                "frozen": store.is_frozen(n),
                "data": [v.hex() for v in store.value(n).reshape(-1).tolist()],
            }
            for n in store.names()
        },
    }
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path) -> tuple[ParameterStore, dict]:
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint format/version: {doc.get('format')}/{doc.get('version')}"
        )
    store = ParameterStore()
    for name, rec in doc["params"].items():
        arr = np.array([float.fromhex(h) for h in rec["data"]], dtype=np.float64)
        store.add(name, arr.reshape(rec["shape"]), frozen=rec["frozen"])
    return store, doc.get("meta", {})
