"""Minimal dense-array reverse-mode differentiation engine.

Implements exactly the operator set the two spectrum networks need:
1D cross-correlation and its transpose, average pooling, affine maps,
reLU / softmax / exp activations, inverted dropout, and the elementwise
glue (add, mul, sum, mean, reshape, concat) required to assemble losses.

Everything is float64. Graphs are recorded define-by-run on a ``Tape``
(a Wengert list: nodes appended in execution order, so creation order is
a topological order) and are rebuilt for every training step.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible; message carries both shapes."""


class Tensor:
    """One node of the graph: a float64 array plus its backward record.

    ``parents`` holds the input nodes, ``op`` the operation kind and
    ``_backward`` a closure over the saved activations that accumulates
    gradients into the parents.
    """

    __slots__ = ("value", "grad", "op", "parents", "tape", "index", "name", "track", "_backward")

    def __init__(self, value, op, parents, tape, index, name=None, track=True):
        self.value = value
        self.grad = None
        self.op = op
        self.parents = parents
        self.tape = tape
        self.index = index
        self.name = name
        self.track = track
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.value.shape}, index={self.index})"

    # -- elementwise arithmetic (numpy broadcasting, scalars fused) --------

    def __add__(self, other):
        if isinstance(other, Tensor):
            out = self.tape._record(self.value + other.value, "add", (self, other))

            def bwd(g, a=self, b=other, o=out):
                _accum(a, _unbroadcast(g, a.value.shape))
                _accum(b, _unbroadcast(g, b.value.shape))

            out._backward = bwd
            return out
        out = self.tape._record(self.value + float(other), "add_const", (self,))
        out._backward = lambda g, a=self: _accum(a, g)
        return out

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            out = self.tape._record(self.value - other.value, "sub", (self, other))

            def bwd(g, a=self, b=other):
                _accum(a, _unbroadcast(g, a.value.shape))
                _accum(b, _unbroadcast(-g, b.value.shape))

            out._backward = bwd
            return out
        return self + (-float(other))

    def __rsub__(self, other):
        return (-self) + float(other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            out = self.tape._record(self.value * other.value, "mul", (self, other))

            def bwd(g, a=self, b=other):
                _accum(a, _unbroadcast(g * b.value, a.value.shape))
                _accum(b, _unbroadcast(g * a.value, b.value.shape))

            out._backward = bwd
            return out
        c = float(other)
        out = self.tape._record(self.value * c, "mul_const", (self,))
        out._backward = lambda g, a=self, c=c: _give(a, g * c)
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    # -- reductions and reshapes -------------------------------------------

    def sum(self, axis=None):
        out = self.tape._record(np.asarray(self.value.sum(axis=axis)), "sum", (self,))

        def bwd(g, a=self, axis=axis):
            if axis is None:
                _accum(a, np.broadcast_to(g, a.value.shape))
            else:
                _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.value.shape))

        out._backward = bwd
        return out

    def mean(self, axis=None):
        n = self.value.size if axis is None else self.value.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def reshape(self, shape):
        out = self.tape._record(self.value.reshape(shape), "reshape", (self,))
        out._backward = lambda g, a=self: _accum(a, g.reshape(a.value.shape))
        return out


class Parameter:
    """A trainable array: persistent value plus the gradient of the last step."""

    __slots__ = ("value", "grad", "name")

    def __init__(self, value, name):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class Tape:
    """Ordered record of one forward pass; inputs of a node always precede it."""

    def __init__(self):
        self.nodes = []

    def _record(self, value, op, parents, name=None, track=True):
        t = Tensor(np.asarray(value, dtype=np.float64), op, parents, self, len(self.nodes), name, track)
        self.nodes.append(t)
        return t

    def leaf(self, value, name=None, track=True):
        """Insert an input node (data, parameter value, or constant).

        ``track=False`` marks a leaf whose gradient is never read, letting the
        expensive ops skip computing it.
        """
        return self._record(value, "leaf", (), name=name, track=track)

    def bind(self, params):
        """Mount a dict of Parameters as leaves; returns name -> leaf Tensor."""
        return {name: self.leaf(p.value, name=name) for name, p in params.items()}


def backward(tape, loss):
    """Reverse traversal from ``loss`` populating ``.grad`` on every reached node.

    Multiple uses of a node accumulate additively. ``loss`` must be scalar.
    """
    if loss.value.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.value.shape}")
    loss.grad = np.asarray(1.0)
    for i in range(loss.index, -1, -1):
        node = tape.nodes[i]
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)


def _accum(t, g):
    """Accumulate a gradient that may alias memory the caller still uses."""
    if t.grad is None:
        t.grad = np.array(np.broadcast_to(g, t.value.shape), dtype=np.float64)
    else:
        t.grad += g


def _give(t, g):
    """Accumulate a gradient array the closure hands over (fresh, never reused)."""
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


def _wants_grad(t):
    """Internal nodes always propagate; untracked leaves can be skipped."""
    return t.track or t.parents


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _as_batched(v):
    """View (C, L) input as (1, C, L); returns (array, had_batch_dim)."""
    if v.ndim == 2:
        return v[None, :, :], False
    if v.ndim == 3:
        return v, True
    raise DimensionError(f"expected a (C, L) or (B, C, L) array, got shape {v.shape}")


# -- activations -------------------------------------------------------------


def relu(x):
    mask = x.value > 0
    out = x.tape._record(np.where(mask, x.value, 0.0), "relu", (x,))
    out._backward = lambda g, a=x, m=mask: _give(a, g * m) if _wants_grad(a) else None
    return out


def softmax(x):
    """Numerically stabilized softmax over the last axis; rows sum to 1."""
    if x.value.shape[-1] < 1:
        raise DimensionError(f"softmax needs length >= 1 on the last axis, got {x.value.shape}")
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = x.tape._record(y, "softmax", (x,))

    def bwd(g, a=x, y=y):
        dot = (g * y).sum(axis=-1, keepdims=True)
        _give(a, y * (g - dot))

    out._backward = bwd
    return out


def exp(x):
    y = np.exp(x.value)
    out = x.tape._record(y, "exp", (x,))
    out._backward = lambda g, a=x, y=y: _give(a, g * y)
    return out


def clamped_log(x, floor=1e-12):
    """log(max(x, floor)); gradient is zero in the clamped region."""
    v = np.maximum(x.value, floor)
    out = x.tape._record(np.log(v), "clamped_log", (x,))

    def bwd(g, a=x, v=v, floor=floor):
        _give(a, np.where(a.value > floor, g / v, 0.0))

    out._backward = bwd
    return out


def dropout(x, p, rng, training):
    """Inverted dropout: zero with probability ``p`` and scale survivors by 1/(1-p).

    Identity when ``training`` is false, so evaluation is a pure forward pass.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    mask = (rng.random(x.value.shape) >= p) / (1.0 - p)
    out = x.tape._record(x.value * mask, "dropout", (x,))
    out._backward = lambda g, a=x, m=mask: _give(a, g * m)
    return out


# -- layers ------------------------------------------------------------------


def linear(x, weight, bias=None):
    """Affine map ``weight @ x + bias`` for x of shape (N,) or (B, N)."""
    w = weight.value
    if w.ndim != 2 or x.value.shape[-1] != w.shape[1]:
        raise DimensionError(
            f"linear needs input (.., {w.shape[1] if w.ndim == 2 else '?'}) for weight "
            f"{w.shape}, got input {x.value.shape}"
        )
    y = x.value @ w.T
    parents = (x, weight)
    if bias is not None:
        if bias.value.shape != (w.shape[0],):
            raise DimensionError(f"linear bias must have shape ({w.shape[0]},), got {bias.value.shape}")
        y = y + bias.value
        parents = (x, weight, bias)
    out = x.tape._record(y, "linear", parents)

    def bwd(g, a=x, wt=weight, bt=bias):
        if _wants_grad(a):
            _give(a, g @ wt.value)
        if a.value.ndim == 1:
            if _wants_grad(wt):
                _give(wt, np.outer(g, a.value))
            if bt is not None and _wants_grad(bt):
                _accum(bt, g)
        else:
            if _wants_grad(wt):
                _give(wt, g.T @ a.value)
            if bt is not None and _wants_grad(bt):
                _give(bt, g.sum(axis=0))

    out._backward = bwd
    return out


def conv1d(x, kernels, bias=None, stride=1, padding=0):
    """1D cross-correlation (no kernel flip) with per-output-channel bias.

    x: (C_in, L) or (B, C_in, L); kernels: (C_out, C_in, K).
    Output length floor((L + 2*padding - K) / stride) + 1.
    """
    k = kernels.value
    if k.ndim != 3:
        raise DimensionError(f"conv1d kernels must be (C_out, C_in, K), got {k.shape}")
    v, batched = _as_batched(x.value)
    B, C, L = v.shape
    O, CK, K = k.shape
    if CK != C:
        raise DimensionError(f"conv1d kernels {k.shape} expect {CK} input channels, input has shape {x.value.shape}")
    if stride < 1:
        raise ValueError(f"conv1d stride must be >= 1, got {stride}")
    if K > L + 2 * padding:
        raise DimensionError(f"conv1d kernel size {K} exceeds padded length {L + 2 * padding} (input {x.value.shape})")
    l_out = (L + 2 * padding - K) // stride + 1

    vp = np.pad(v, ((0, 0), (0, 0), (padding, padding))) if padding else v
    win = sliding_window_view(vp, K, axis=2)[:, :, ::stride, :]  # (B, C, l_out, K)
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * l_out, C * K)
    y = (cols @ k.reshape(O, C * K).T).reshape(B, l_out, O).transpose(0, 2, 1)
    parents = (x, kernels)
    if bias is not None:
        if bias.value.shape != (O,):
            raise DimensionError(f"conv1d bias must have shape ({O},), got {bias.value.shape}")
        y = y + bias.value[None, :, None]
        parents = (x, kernels, bias)
    out = x.tape._record(y if batched else y[0], "conv1d", parents)

    def bwd(g, a=x, kt=kernels, bt=bias, cols=cols):
        g3 = g if g.ndim == 3 else g[None]
        gm = np.ascontiguousarray(g3.transpose(0, 2, 1)).reshape(B * l_out, O)
        if _wants_grad(kt):
            _give(kt, (gm.T @ cols).reshape(O, C, K))
        if bt is not None and _wants_grad(bt):
            _give(bt, g3.sum(axis=(0, 2)))
        if _wants_grad(a):
            gwin = (gm @ kt.value.reshape(O, C * K)).reshape(B, l_out, C, K).transpose(0, 2, 1, 3)
            gvp = np.zeros((B, C, L + 2 * padding))
            for kk in range(K):
                gvp[:, :, kk : kk + stride * l_out : stride] += gwin[:, :, :, kk]
            gv = gvp[:, :, padding : padding + L] if padding else gvp
            _give(a, gv if batched else gv[0])

    out._backward = bwd
    return out


def conv1d_transpose(x, kernels, bias=None, stride=1, padding=0):
    """Transposed 1D convolution: the linear adjoint of conv1d.

    x: (C_in, L) or (B, C_in, L); kernels: (C_in, C_out, K), i.e. the same
    array a forward conv1d producing x's channels would use.
    Output length (L - 1)*stride - 2*padding + K.
    """
    k = kernels.value
    if k.ndim != 3:
        raise DimensionError(f"conv1d_transpose kernels must be (C_in, C_out, K), got {k.shape}")
    v, batched = _as_batched(x.value)
    B, C, L = v.shape
    CK, O, K = k.shape
    if CK != C:
        raise DimensionError(
            f"conv1d_transpose kernels {k.shape} expect {CK} input channels, input has shape {x.value.shape}"
        )
    if stride < 1:
        raise ValueError(f"conv1d_transpose stride must be >= 1, got {stride}")
    l_out = (L - 1) * stride - 2 * padding + K
    if l_out < 1:
        raise DimensionError(f"conv1d_transpose output length {l_out} < 1 for input {x.value.shape}, kernel {k.shape}")

    xm = np.ascontiguousarray(v.transpose(0, 2, 1)).reshape(B * L, C)
    t = (xm @ k.reshape(C, O * K)).reshape(B, L, O, K).transpose(0, 2, 1, 3)  # (B, O, L, K)
    full = np.zeros((B, O, (L - 1) * stride + K))
    for kk in range(K):
        full[:, :, kk : kk + stride * L : stride] += t[:, :, :, kk]
    y = full[:, :, padding : padding + l_out]
    parents = (x, kernels)
    if bias is not None:
        if bias.value.shape != (O,):
            raise DimensionError(f"conv1d_transpose bias must have shape ({O},), got {bias.value.shape}")
        y = y + bias.value[None, :, None]
        parents = (x, kernels, bias)
    out = x.tape._record(y if batched else y[0], "conv1d_transpose", parents)

    def bwd(g, a=x, kt=kernels, bt=bias, xm=xm):
        g3 = g if g.ndim == 3 else g[None]
        gfull = np.zeros((B, O, (L - 1) * stride + K))
        gfull[:, :, padding : padding + l_out] = g3
        gt = np.empty((B, O, L, K))
        for kk in range(K):
            gt[:, :, :, kk] = gfull[:, :, kk : kk + stride * L : stride]
        gtm = np.ascontiguousarray(gt.transpose(0, 2, 1, 3)).reshape(B * L, O * K)
        if _wants_grad(kt):
            _give(kt, (xm.T @ gtm).reshape(C, O, K))
        if bt is not None and _wants_grad(bt):
            _give(bt, g3.sum(axis=(0, 2)))
        if _wants_grad(a):
            gv = (gtm @ kt.value.reshape(C, O * K).T).reshape(B, L, C).transpose(0, 2, 1)
            _give(a, np.ascontiguousarray(gv if batched else gv[0]))

    out._backward = bwd
    return out


def avg_pool1d(x, window):
    """Non-overlapping window means; a trailing remainder shorter than the window is dropped."""
    if window < 1:
        raise ValueError(f"avg_pool1d window must be >= 1, got {window}")
    v, batched = _as_batched(x.value)
    B, C, L = v.shape
    n = L // window
    if n == 0:
        raise DimensionError(f"avg_pool1d window {window} exceeds input length {L} (empty output)")
    y = v[:, :, : n * window].reshape(B, C, n, window).mean(axis=3)
    out = x.tape._record(y if batched else y[0], "avg_pool1d", (x,))

    def bwd(g, a=x):
        if not _wants_grad(a):
            return
        g3 = g if g.ndim == 3 else g[None]
        gv = np.zeros((B, C, L))
        gv[:, :, : n * window] = np.repeat(g3 / window, window, axis=2)
        _give(a, gv if batched else gv[0])

    out._backward = bwd
    return out


def concat(tensors, axis):
    """Concatenate along ``axis``; gradient splits back to the inputs."""
    tape = tensors[0].tape
    sizes = [t.value.shape[axis] for t in tensors]
    out = tape._record(np.concatenate([t.value for t in tensors], axis=axis), "concat", tuple(tensors))
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g, ts=tuple(tensors), offsets=offsets, axis=axis):
        for t, piece in zip(ts, np.split(g, offsets, axis=axis)):
            _accum(t, piece)

    out._backward = bwd
    return out
