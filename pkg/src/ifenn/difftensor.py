"""Dense float64 tensors with reverse-mode automatic differentiation.

Every primitive builds its output eagerly and, when any input requires a
gradient, links the output to its inputs together with a closure that maps
the output cotangent to input cotangents.  ``backward`` orders the reachable
graph topologically (the tape) and replays it in reverse.

Binary elementwise ops accept operands of identical shape, or a 0-d scalar
against any tensor.  The only broadcasting primitives are ``bias_add`` (last
axis) and ``affine`` (constant, non-trainable scale/shift).
"""
from __future__ import annotations

import contextlib
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, TrainingDivergedError

__all__ = [
    "Tensor", "tensor", "parameter", "as_tensor", "no_grad", "backward", "gradients", "build_tape",
    "primitive_forward", "PRIMITIVES",
    "add", "sub", "mul", "div", "neg", "matmul", "linear", "bias_add", "affine",
    "sigmoid", "tanh", "exp", "square", "sqrt", "tsum", "mean", "reshape", "concat",
    "einsum", "group_norm", "gru_sequence",
    "OptimizerState", "Adam", "adam_step", "save_checkpoint", "load_checkpoint",
]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64, copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return _getitem(self, idx)

    def sum(self, axis=None): return tsum(self, axis)
    def mean(self): return mean(self)
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad=False) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


as_tensor = _as_tensor


def _make(data, parents, backward_fn, op) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out.name = None
    needs = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


# ---------------------------------------------------------------- elementwise

def _check_binary(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise InvalidArgumentError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    return np.asarray(g.sum()) if shape == () and g.shape != () else g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_binary(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)), "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    e = np.exp(a.data)
    return _make(e, (a,), lambda g: (g * e,), "exp")


def square(a) -> Tensor:
    a = _as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    s = np.sqrt(a.data)
    return _make(s, (a,), lambda g: (g * 0.5 / s,), "sqrt")


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ------------------------------------------------------------ linear algebra

def matmul(a, b) -> Tensor:
    """``a[..., m, k] @ b[k, n]``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise InvalidArgumentError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        ga = g @ b.data.T
        gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x, w, bias) -> Tensor:
    """``x[..., d] @ w[d, h] + bias[h]``."""
    x, w, bias = _as_tensor(x), _as_tensor(w), _as_tensor(bias)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or bias.shape != (w.shape[1],):
        raise InvalidArgumentError(f"linear: shapes {x.shape}, {w.shape}, {bias.shape}")

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        return g @ w.data.T, x.data.reshape(-1, w.shape[0]).T @ g2, g2.sum(axis=0)

    return _make(x.data @ w.data + bias.data, (x, w, bias), bw, "linear")


def bias_add(x, bias) -> Tensor:
    x, bias = _as_tensor(x), _as_tensor(bias)
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise InvalidArgumentError(f"bias_add: shapes {x.shape}, {bias.shape}")
    return _make(x.data + bias.data, (x, bias),
                 lambda g: (g, g.reshape(-1, bias.shape[0]).sum(axis=0)), "bias_add")


def affine(x, scale, shift) -> Tensor:
    """``x * scale + shift`` with constant arrays broadcastable to ``x``."""
    x = _as_tensor(x)
    scale = np.asarray(scale, dtype=float)
    shift = np.asarray(shift, dtype=float)
    out = x.data * scale + shift
    if out.shape != x.shape:
        raise InvalidArgumentError(f"affine: constants change shape {x.shape} -> {out.shape}")
    return _make(out, (x,), lambda g: (g * scale,), "affine")


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum; every index of an operand must appear in the output or the other operand."""
    a, b = _as_tensor(a), _as_tensor(b)
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if any(c not in out_sub and c not in other for c in s):
            raise InvalidArgumentError(f"einsum: unsupported reduction in {subscripts!r}")
    try:
        out = np.einsum(subscripts, a.data, b.data, optimize=True)
    except ValueError as exc:
        raise InvalidArgumentError(f"einsum: {exc}") from None

    def bw(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, b.data, optimize=True)
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, a.data, optimize=True)
        return ga, gb

    return _make(out, (a, b), bw, "einsum")


# ------------------------------------------------------------ shape / reduce

def tsum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.size
    return _make(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, g / n),), "mean")


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise InvalidArgumentError(f"reshape: {exc}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat(tensors, axis=-1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise InvalidArgumentError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def _getitem(a: Tensor, idx) -> Tensor:
    parts = idx if isinstance(idx, tuple) else (idx,)
    if not all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts):
        raise InvalidArgumentError("only basic slicing is differentiable")
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(np.array(out), (a,), bw, "getitem")


# ------------------------------------------------------------ normalisation

def group_norm(x, n_channels: int, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Split the last axis into ``n_channels`` groups and standardise each group.

    ``gamma``/``beta`` carry one scale/shift per channel.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    h = x.shape[-1]
    if n_channels < 1 or h % n_channels:
        raise InvalidArgumentError(f"group_norm: {n_channels} channels do not divide width {h}")
    if gamma.shape != (n_channels,) or beta.shape != (n_channels,):
        raise InvalidArgumentError("group_norm: gamma/beta need one entry per channel")
    xs = x.data.reshape(-1, n_channels, h // n_channels)
    mu = xs.mean(axis=2, keepdims=True)
    var = xs.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xs - mu) * inv
    out = xhat * gamma.data[None, :, None] + beta.data[None, :, None]

    def bw(g):
        gs = g.reshape(xhat.shape)
        dxhat = gs * gamma.data[None, :, None]
        dx = inv * (dxhat - dxhat.mean(axis=2, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=2, keepdims=True))
        return (dx.reshape(x.shape), (gs * xhat).sum(axis=(0, 2)), gs.sum(axis=(0, 2)))

    return _make(out.reshape(x.shape), (x, gamma, beta), bw, "group_norm")


# ------------------------------------------------------------ recurrent

def gru_sequence(x, w_xr, w_xz, w_xh, w_hr, w_hz, w_hh, b_r, b_z, b_h) -> Tensor:
    """Run a GRU over ``x[B, T, d]`` from a zero hidden state; returns ``h[B, T, h]``.

    Gate equations (row-vector convention)::

        r  = sigmoid(x W_xr + h W_hr + b_r)
        z  = sigmoid(x W_xz + h W_hz + b_z)
        h' = tanh((r * h) W_hh + x W_xh + b_h)
        h  = z * h + (1 - z) * h'

    Fused forward with hand-written backpropagation through time.
    """
    args = [_as_tensor(t) for t in (x, w_xr, w_xz, w_xh, w_hr, w_hz, w_hh, b_r, b_z, b_h)]
    x, w_xr, w_xz, w_xh, w_hr, w_hz, w_hh, b_r, b_z, b_h = args
    if x.ndim != 3:
        raise InvalidArgumentError(f"gru_sequence expects [B, T, d], got {x.shape}")
    B, T, d = x.shape
    hdim = w_hh.shape[0]
    for w, shp in ((w_xr, (d, hdim)), (w_xz, (d, hdim)), (w_xh, (d, hdim)),
                   (w_hr, (hdim, hdim)), (w_hz, (hdim, hdim)), (w_hh, (hdim, hdim)),
                   (b_r, (hdim,)), (b_z, (hdim,)), (b_h, (hdim,))):
        if w.shape != shp:
            raise InvalidArgumentError(f"gru_sequence: parameter shape {w.shape}, expected {shp}")

    wx = np.concatenate([w_xr.data, w_xz.data, w_xh.data], axis=1)
    bx = np.concatenate([b_r.data, b_z.data, b_h.data])
    wrz = np.concatenate([w_hr.data, w_hz.data], axis=1)
    xw = x.data @ wx + bx  # [B, T, 3h]
    hs = np.zeros((B, T + 1, hdim))
    rs = np.empty((B, T, hdim))
    zs = np.empty((B, T, hdim))
    cs = np.empty((B, T, hdim))
    for t in range(T):
        hp = hs[:, t]
        a = xw[:, t, : 2 * hdim] + hp @ wrz
        rz = _sigmoid(a)
        r, z = rz[:, :hdim], rz[:, hdim:]
        c = np.tanh((r * hp) @ w_hh.data + xw[:, t, 2 * hdim:])
        hs[:, t + 1] = z * hp + (1.0 - z) * c
        rs[:, t], zs[:, t], cs[:, t] = r, z, c

    def bw(g):
        dxw = np.empty((B, T, 3 * hdim))
        dwrz = np.zeros_like(wrz)
        dwhh = np.zeros((hdim, hdim))
        dh = np.zeros((B, hdim))
        for t in range(T - 1, -1, -1):
            dh = dh + g[:, t]
            hp, r, z, c = hs[:, t], rs[:, t], zs[:, t], cs[:, t]
            dz = dh * (hp - c)
            da_h = dh * (1.0 - z) * (1.0 - c * c)
            rh = r * hp
            dwhh += rh.T @ da_h
            drh = da_h @ w_hh.data.T
            da_r = drh * hp * r * (1.0 - r)
            da_z = dz * z * (1.0 - z)
            da_rz = np.concatenate([da_r, da_z], axis=1)
            dwrz += hp.T @ da_rz
            dh = dh * z + drh * r + da_rz @ wrz.T
            dxw[:, t, : 2 * hdim] = da_rz
            dxw[:, t, 2 * hdim:] = da_h
        flat = dxw.reshape(-1, 3 * hdim)
        dwx = x.data.reshape(-1, d).T @ flat
        dbx = flat.sum(axis=0)
        dx = dxw @ wx.T
        return (
            dx,
            dwx[:, :hdim], dwx[:, hdim:2 * hdim], dwx[:, 2 * hdim:],
            dwrz[:, :hdim], dwrz[:, hdim:], dwhh,
            dbx[:hdim], dbx[hdim:2 * hdim], dbx[2 * hdim:],
        )

    return _make(hs[:, 1:].copy(), tuple(args), bw, "gru_sequence")


PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg,
    "matmul": matmul, "linear": linear, "bias_add": bias_add, "affine": affine,
    "sigmoid": sigmoid, "tanh": tanh, "exp": exp, "square": square, "sqrt": sqrt,
    "sum": tsum, "mean": mean, "reshape": reshape, "concat": concat, "einsum": einsum,
    "group_norm": group_norm, "gru_sequence": gru_sequence,
}


def primitive_forward(op: str, *inputs, **attrs) -> Tensor:
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise InvalidArgumentError(f"unknown primitive {op!r}") from None
    return fn(*inputs, **attrs)


# ------------------------------------------------------------ backward

def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of nodes reachable from ``root`` (inputs first)."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf requiring grad."""
    if root.size != 1:
        raise InvalidArgumentError(f"backward needs a scalar root, got shape {root.shape}")
    tape = build_tape(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg


def gradients(root: Tensor, params) -> list[np.ndarray]:
    """Fresh gradients of ``root`` w.r.t. ``params``; zeros for unreachable ones."""
    params = list(params)
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    backward(root)
    out = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
    for p, s in zip(params, saved):
        p.grad = s
    return out


# ------------------------------------------------------------ optimiser

@dataclass
class OptimizerState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: OptimizerState):
    """In-place Adam update with bias correction."""
    params = list(params)
    grads = list(grads)
    if len(params) != len(grads):
        raise InvalidArgumentError("params and grads differ in length")
    for p, g in zip(params, grads):
        if g.shape != p.data.shape:
            raise InvalidArgumentError(f"grad shape {g.shape} != param shape {p.data.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for parameter {p.name or ''}".strip())
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, betas=tuple(betas), eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self, lr=None):
        if lr is not None:
            self.state.lr = lr
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        adam_step(self.params, grads, self.state)


# ------------------------------------------------------------ checkpoints

CHECKPOINT_MAGIC = b"IFNC"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray]):
    """Write named float64 arrays: magic, version byte, manifest, then raw LE blocks."""
    buf = bytearray(CHECKPOINT_MAGIC)
    buf += struct.pack("<BI", CHECKPOINT_VERSION, len(arrays))
    blocks = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
        key = name.encode("utf-8")
        buf += struct.pack("<H", len(key)) + key
        buf += struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
        blocks.append(arr.tobytes())
    Path(path).write_bytes(bytes(buf) + b"".join(blocks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise InvalidArgumentError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<BI", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise InvalidArgumentError(f"{path}: unsupported checkpoint version {version}")
    pos = 9
    manifest = []
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
        pos += 8 * ndim
        manifest.append((name, shape))
    out = {}
    for name, shape in manifest:
        n = int(np.prod(shape, dtype=np.int64))
        out[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    return out
