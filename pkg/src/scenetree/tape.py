"""Dense float64 tensors and reverse-mode differentiation on a flat tape.

Every learnable computation in the package runs through one Tape per
forward/backward pass.  A Tape records primitive operations in creation
order; ``backward`` replays them in exact reverse order, accumulating
gradients per node.  Tensors are immutable once created and a Tape is
single-owner: independent tapes may run concurrently, one tape must not
be shared.

"Convolution" throughout is the usual CNN cross-correlation (no kernel
flip).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ContractError, NumericError, ShapeError


def _as_f64(value):
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """A node on a tape: an immutable float64 array plus its node id."""

    __slots__ = ("data", "tape", "nid")

    def __init__(self, data, tape, nid):
        self.data = data
        self.tape = tape
        self.nid = nid

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, nid={self.nid})"


class Tape:
    """Ordered record of primitive ops with per-node gradient slots."""

    def __init__(self):
        # parallel lists indexed by node id
        self._backward_fns = []  # None for leaves
        self._num_nodes = 0

    def _new_node(self, data, backward_fn=None):
        nid = self._num_nodes
        self._num_nodes += 1
        self._backward_fns.append(backward_fn)
        return Tensor(data, self, nid)

    def leaf(self, value):
        """Register an input (parameter or constant) as a leaf node."""
        return self._new_node(_as_f64(value))

    def _check_same_tape(self, *tensors):
        for t in tensors:
            if t.tape is not self:
                raise ContractError("tensor belongs to a different tape")

    # ---- arithmetic -------------------------------------------------

    def add(self, a, b):
        self._check_same_tape(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"add: shapes {a.shape} vs {b.shape}")
        out_data = a.data + b.data

        def backward(g, acc):
            acc(a.nid, g)
            acc(b.nid, g)

        return self._new_node(out_data, backward)

    def sub(self, a, b):
        self._check_same_tape(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"sub: shapes {a.shape} vs {b.shape}")
        out_data = a.data - b.data

        def backward(g, acc):
            acc(a.nid, g)
            acc(b.nid, -g)

        return self._new_node(out_data, backward)

    def mul(self, a, b):
        self._check_same_tape(a, b)
        if a.shape != b.shape:
            raise ShapeError(f"mul: shapes {a.shape} vs {b.shape}")
        out_data = a.data * b.data
        a_data, b_data = a.data, b.data

        def backward(g, acc):
            acc(a.nid, g * b_data)
            acc(b.nid, g * a_data)

        return self._new_node(out_data, backward)

    def scale(self, a, s):
        """Multiply tensor ``a`` elementwise by scalar tensor ``s``."""
        self._check_same_tape(a, s)
        if s.shape != ():
            raise ShapeError(f"scale: scalar expected, got shape {s.shape}")
        out_data = a.data * s.data
        a_data, s_data = a.data, s.data

        def backward(g, acc):
            acc(a.nid, g * s_data)
            acc(s.nid, np.asarray(np.sum(g * a_data)))

        return self._new_node(out_data, backward)

    def const_mul(self, a, c):
        c = float(c)
        out_data = a.data * c

        def backward(g, acc):
            acc(a.nid, g * c)

        return self._new_node(out_data, backward)

    def const_add(self, a, c):
        c = float(c)

        def backward(g, acc):
            acc(a.nid, g)

        return self._new_node(a.data + c, backward)

    def neg(self, a):
        return self.const_mul(a, -1.0)

    # ---- shape ------------------------------------------------------

    def reshape(self, a, shape):
        in_shape = a.data.shape
        out_data = a.data.reshape(shape)

        def backward(g, acc):
            acc(a.nid, g.reshape(in_shape))

        return self._new_node(out_data, backward)

    def transpose(self, a, axes):
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        out_data = np.ascontiguousarray(a.data.transpose(axes))

        def backward(g, acc):
            acc(a.nid, g.transpose(inv))

        return self._new_node(out_data, backward)

    def concat(self, tensors):
        """Concatenate 1-D tensors."""
        self._check_same_tape(*tensors)
        for t in tensors:
            if t.data.ndim != 1:
                raise ShapeError(f"concat: 1-D tensors only, got {t.shape}")
        out_data = np.concatenate([t.data for t in tensors])
        sizes = [t.data.size for t in tensors]
        nids = [t.nid for t in tensors]

        def backward(g, acc):
            pos = 0
            for nid, size in zip(nids, sizes):
                acc(nid, g[pos:pos + size])
                pos += size

        return self._new_node(out_data, backward)

    def index(self, a, i):
        """Pick element ``i`` from a 1-D tensor as a scalar."""
        if a.data.ndim != 1:
            raise ShapeError(f"index: 1-D tensor expected, got {a.shape}")
        i = int(i)
        size = a.data.size

        def backward(g, acc):
            grad = np.zeros(size)
            grad[i] = g
            acc(a.nid, grad)

        return self._new_node(np.asarray(a.data[i]), backward)

    # ---- reductions -------------------------------------------------

    def sum(self, a):
        shape = a.data.shape

        def backward(g, acc):
            acc(a.nid, np.full(shape, float(g)))

        return self._new_node(np.asarray(np.sum(a.data)), backward)

    def mean(self, a):
        shape = a.data.shape
        n = a.data.size

        def backward(g, acc):
            acc(a.nid, np.full(shape, float(g) / n))

        return self._new_node(np.asarray(np.mean(a.data)), backward)

    def maximum_of(self, scalars):
        """Max over scalar tensors; the gradient routes to the first argmax."""
        self._check_same_tape(*scalars)
        values = [float(s.data) for s in scalars]
        best = int(np.argmax(values))
        best_nid = scalars[best].nid

        def backward(g, acc):
            acc(best_nid, g)

        return self._new_node(np.asarray(values[best]), backward)

    # ---- nonlinearities ---------------------------------------------

    def relu(self, a):
        out_data = np.maximum(a.data, 0.0)
        pos = a.data > 0.0

        def backward(g, acc):
            acc(a.nid, g * pos)

        return self._new_node(out_data, backward)

    def tanh(self, a):
        out_data = np.tanh(a.data)

        def backward(g, acc):
            acc(a.nid, g * (1.0 - out_data * out_data))

        return self._new_node(out_data, backward)

    def sigmoid(self, a):
        out_data = 1.0 / (1.0 + np.exp(-a.data))

        def backward(g, acc):
            acc(a.nid, g * out_data * (1.0 - out_data))

        return self._new_node(out_data, backward)

    def log(self, a):
        # log(0) propagates -inf and is reported by the finiteness checks,
        # not by numpy warnings
        a_data = a.data

        def backward(g, acc):
            with np.errstate(divide="ignore"):
                acc(a.nid, g / a_data)

        with np.errstate(divide="ignore"):
            return self._new_node(np.log(a.data), backward)

    def square(self, a):
        a_data = a.data

        def backward(g, acc):
            acc(a.nid, g * 2.0 * a_data)

        return self._new_node(a.data * a.data, backward)

    def softmax(self, a, axis):
        """Numerically stable softmax along ``axis`` (max-subtraction)."""
        shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / np.sum(e, axis=axis, keepdims=True)

        def backward(g, acc):
            dot = np.sum(g * out_data, axis=axis, keepdims=True)
            acc(a.nid, (g - dot) * out_data)

        return self._new_node(out_data, backward)

    # ---- linear layers ----------------------------------------------

    def affine(self, x, w, b):
        """x (n,) @ w (n,m) + b (m,)."""
        self._check_same_tape(x, w, b)
        if x.data.ndim != 1 or w.data.ndim != 2 or b.data.ndim != 1:
            raise ShapeError(
                f"affine: expected vec/mat/vec, got {x.shape}/{w.shape}/{b.shape}")
        if w.shape[0] != x.data.size or w.shape[1] != b.data.size:
            raise ShapeError(
                f"affine: input {x.shape} vs weight {w.shape} vs bias {b.shape}")
        out_data = x.data @ w.data + b.data
        x_data, w_data = x.data, w.data

        def backward(g, acc):
            acc(x.nid, w_data @ g)
            acc(w.nid, np.outer(x_data, g))
            acc(b.nid, g)

        return self._new_node(out_data, backward)

    def conv2d(self, x, kernel, bias=None, stride=1, padding=0):
        """2-D convolution: x (H,W,Cin), kernel (kh,kw,Cin,Cout) -> (Ho,Wo,Cout).

        Requires odd kernel sides, stride >= 1, padding >= 0; output side is
        floor((H + 2p - k) / stride) + 1.
        """
        self._check_same_tape(x, kernel)
        if x.data.ndim != 3:
            raise ShapeError(f"conv2d: input must be HxWxC, got {x.shape}")
        if kernel.data.ndim != 4:
            raise ShapeError(f"conv2d: kernel must be khxkwxCinxCout, got {kernel.shape}")
        kh, kw, cin, cout = kernel.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ContractError(f"conv2d: kernel sides must be odd, got {kh}x{kw}")
        if stride < 1 or padding < 0:
            raise ContractError(f"conv2d: stride={stride}, padding={padding}")
        h, w, cx = x.shape
        if cx != cin:
            raise ShapeError(f"conv2d: input channels {cx} != kernel channels {cin}")
        ho = (h + 2 * padding - kh) // stride + 1
        wo = (w + 2 * padding - kw) // stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d: output would be {ho}x{wo} for input {h}x{w}")

        padded = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
        sh, sw, sc = padded.strides
        windows = np.lib.stride_tricks.as_strided(
            padded,
            shape=(ho, wo, kh, kw, cin),
            strides=(sh * stride, sw * stride, sh, sw, sc),
            writeable=False,
        )
        cols = windows.reshape(ho * wo, kh * kw * cin)
        wmat = kernel.data.reshape(kh * kw * cin, cout)
        out_data = (cols @ wmat).reshape(ho, wo, cout)
        if bias is not None:
            self._check_same_tape(bias)
            if bias.data.shape != (cout,):
                raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
            out_data = out_data + bias.data
        pad_shape = padded.shape

        def backward(g, acc):
            g2 = g.reshape(ho * wo, cout)
            acc(kernel.nid, (cols.T @ g2).reshape(kh, kw, cin, cout))
            if bias is not None:
                acc(bias.nid, g2.sum(axis=0))
            dcols = (g2 @ wmat.T).reshape(ho, wo, kh, kw, cin)
            dpad = np.zeros(pad_shape)
            for i in range(kh):
                for j in range(kw):
                    dpad[i:i + ho * stride:stride,
                         j:j + wo * stride:stride, :] += dcols[:, :, i, j, :]
            if padding:
                dpad = dpad[padding:-padding, padding:-padding, :]
            acc(x.nid, dpad)

        return self._new_node(out_data, backward)

    def upsample_bilinear(self, x, out_hw):
        """Resize x (H,W,C) to (out_h,out_w,C); endpoints map to endpoints."""
        if x.data.ndim != 3:
            raise ShapeError(f"upsample: input must be HxWxC, got {x.shape}")
        h, w, _ = x.shape
        out_h, out_w = out_hw
        rmat = _interp_matrix(h, out_h)
        cmat = _interp_matrix(w, out_w)
        tmp = np.tensordot(rmat, x.data, axes=(1, 0))          # (out_h, W, C)
        out_data = np.tensordot(cmat, tmp, axes=(1, 1))         # (out_w, out_h, C)
        out_data = np.ascontiguousarray(out_data.transpose(1, 0, 2))

        def backward(g, acc):
            t = np.tensordot(rmat.T, g, axes=(1, 0))            # (H, out_w, C)
            dx = np.tensordot(cmat.T, t, axes=(1, 1))           # (W, H, C)
            acc(x.nid, np.ascontiguousarray(dx.transpose(1, 0, 2)))

        return self._new_node(out_data, backward)

    def gather_channel(self, vol, labels):
        """Pick vol[labels[h,w], h, w] from a (C,H,W) volume -> (H,W)."""
        if vol.data.ndim != 3:
            raise ShapeError(f"gather_channel: volume must be CxHxW, got {vol.shape}")
        c, h, w = vol.shape
        labels = np.asarray(labels)
        if labels.shape != (h, w):
            raise ShapeError(f"gather_channel: labels {labels.shape} != ({h}, {w})")
        if labels.min() < 0 or labels.max() >= c:
            raise ContractError(
                f"gather_channel: label outside [0, {c - 1}]: {int(labels.max())}")
        rows, cols_ix = np.indices((h, w))
        out_data = vol.data[labels, rows, cols_ix]

        def backward(g, acc):
            dv = np.zeros((c, h, w))
            np.add.at(dv, (labels, rows, cols_ix), g)
            acc(vol.nid, dv)

        return self._new_node(out_data, backward)

    def masked_lse(self, feats, mask, pi):
        """Log-sum-exp pool feats (H,W,C) over mask (H,W) -> (C,).

        out_c = (1/pi) * log sum_{mask} exp(pi * feats[..., c]), computed with
        max-subtraction.
        """
        if feats.data.ndim != 3:
            raise ShapeError(f"masked_lse: features must be HxWxC, got {feats.shape}")
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != feats.shape[:2]:
            raise ShapeError(
                f"masked_lse: mask {mask.shape} != spatial {feats.shape[:2]}")
        if not mask.any():
            raise ContractError("masked_lse: empty mask")
        pi = float(pi)
        if pi <= 0:
            raise ContractError(f"masked_lse: pi must be positive, got {pi}")
        sel = feats.data[mask]                       # (n, C)
        top = np.max(sel, axis=0)
        weights = np.exp(pi * (sel - top))           # (n, C), values in (0, 1]
        denom = np.sum(weights, axis=0)
        out_data = top + np.log(denom) / pi
        coef = weights / denom                       # softmax over pooled pixels

        def backward(g, acc):
            df = np.zeros(feats.shape)
            df[mask] = coef * g
            acc(feats.nid, df)

        return self._new_node(out_data, backward)

    # ---- backward ----------------------------------------------------

    def backward(self, loss):
        """Gradients of a scalar loss node for every node on the tape.

        Returns a list indexed by node id; entries are arrays or None for
        nodes the loss does not depend on.
        """
        if loss.tape is not self:
            raise ContractError("loss belongs to a different tape")
        if loss.data.shape != ():
            raise ContractError(f"backward: loss must be scalar, got {loss.data.shape}")
        grads = [None] * self._num_nodes
        grads[loss.nid] = np.asarray(1.0)

        def acc(nid, g):
            if grads[nid] is None:
                grads[nid] = np.array(g, dtype=np.float64, copy=True)
            else:
                grads[nid] += g

        for nid in range(self._num_nodes - 1, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            fn = self._backward_fns[nid]
            if fn is not None:
                fn(g, acc)
        for g in grads:
            if g is not None and not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient in backward pass")
        return grads


@lru_cache(maxsize=None)
def _interp_matrix(n_in, n_out):
    """Row-interpolation matrix (n_out, n_in) for 1-D bilinear resize."""
    mat = np.zeros((n_out, n_in))
    if n_in == 1:
        mat[:, 0] = 1.0
        return mat
    if n_out == 1:
        mat[0, 0] = 1.0
        return mat
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.floor(pos).astype(int)
    lo = np.minimum(lo, n_in - 2)
    frac = pos - lo
    mat[np.arange(n_out), lo] = 1.0 - frac
    mat[np.arange(n_out), lo + 1] = frac
    return mat


def check_finite(array, where):
    """Raise NumericError naming ``where`` if the array has NaN/Inf values."""
    data = array.data if isinstance(array, Tensor) else array
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in {where}")
    return array


def sgd_step(params, grads, velocity, lr, momentum=0.0, weight_decay=0.0,
             decay_filter=None):
    """One SGD-with-momentum update over a name->array parameter dict.

    v <- momentum * v - lr * (g + wd * theta); theta <- theta + v.
    Arrays are replaced, not mutated.  ``decay_filter(name)`` limits which
    parameters receive weight decay (default: all).
    """
    if lr <= 0:
        raise ContractError(f"sgd_step: lr must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ContractError(f"sgd_step: momentum must be in [0, 1), got {momentum}")
    new_params = {}
    for name, theta in params.items():
        g = grads[name]
        if weight_decay and (decay_filter is None or decay_filter(name)):
            g = g + weight_decay * theta
        v = momentum * velocity.get(name, 0.0) - lr * g
        velocity[name] = v
        new_params[name] = theta + v
    return new_params
