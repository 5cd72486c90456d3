"""Feed-forward networks on top of :mod:`bofpinn.autodiff`."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, constant, custom_op

__all__ = ["ParamStore", "MLP", "xavier_init", "mlp_forward", "mlp_forward_jvp", "mlp_fused",
           "value_and_grad"]


class ParamStore:
    """Named parameter arrays with a flat-vector view.

    The flat ordering is the insertion order of the names, each array raveled in
    C order.  Networks insert ``W0, b0, W1, b1, ...`` so the layout is fixed by
    the network description alone.
    """

    def __init__(self, items=None):
        self._arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, arr in (items or {}).items():
            self[name] = arr

    def __setitem__(self, name: str, arr) -> None:
        self._arrays[name] = np.array(arr, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name) -> bool:
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def shapes(self) -> "OrderedDict[str, tuple]":
        return OrderedDict((k, v.shape) for k, v in self._arrays.items())

    @property
    def size(self) -> int:
        return int(sum(v.size for v in self._arrays.values()))

    def flatten(self) -> np.ndarray:
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._arrays.values()])

    def unflatten(self, vec) -> None:
        """Overwrite every array from ``vec`` (in place)."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ValueError(f"flat vector has shape {vec.shape}, expected ({self.size},)")
        pos = 0
        for k, v in self._arrays.items():
            n = v.size
            self._arrays[k] = vec[pos:pos + n].reshape(v.shape).copy()
            pos += n

    def with_flat(self, vec) -> "ParamStore":
        out = self.copy()
        out.unflatten(vec)
        return out

    def copy(self) -> "ParamStore":
        return ParamStore(OrderedDict((k, v.copy()) for k, v in self._arrays.items()))

    def update(self, other: "ParamStore") -> None:
        for k, v in other.items():
            self[k] = v

    def leaves(self) -> "OrderedDict[str, Tensor]":
        """Fresh differentiable leaf tensors, one per parameter array."""
        return OrderedDict((k, Tensor(v, requires_grad=True)) for k, v in self._arrays.items())


@dataclass
class MLP:
    """Dense network ``widths[0] -> ... -> widths[-1]``.

    Hidden layers use tanh, the output layer is affine.  Parameters are looked
    up as ``f"{prefix}W{l}"`` / ``f"{prefix}b{l}"`` in whatever mapping is passed
    to the forward functions, so several networks can share one store.
    """

    widths: Sequence[int]
    prefix: str = ""
    activations: list = field(default=None)

    def __post_init__(self):
        self.widths = [int(w) for w in self.widths]
        if len(self.widths) < 2 or any(w <= 0 for w in self.widths):
            raise ValueError(f"invalid layer widths {self.widths}")
        n_layers = len(self.widths) - 1
        if self.activations is None:
            self.activations = ["tanh"] * (n_layers - 1) + ["identity"]
        if len(self.activations) != n_layers:
            raise ValueError("one activation per layer required")
        for a in self.activations:
            if a not in ("tanh", "identity"):
                raise ValueError(f"unsupported activation {a!r}")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def d_in(self) -> int:
        return self.widths[0]

    @property
    def d_out(self) -> int:
        return self.widths[-1]

    def param_names(self) -> list:
        names = []
        for l in range(self.n_layers):
            names += [f"{self.prefix}W{l}", f"{self.prefix}b{l}"]
        return names

    def init(self, seed: int) -> ParamStore:
        return xavier_init(self.widths, seed, prefix=self.prefix)


def xavier_init(widths: Sequence[int], seed: int, prefix: str = "") -> ParamStore:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise ValueError(f"invalid layer widths {widths}")
    rng = np.random.default_rng(seed)
    store = ParamStore()
    for l, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        store[f"{prefix}W{l}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        store[f"{prefix}b{l}"] = np.zeros(fan_out)
    return store


def _param(params, name):
    p = params[name]
    return p if isinstance(p, Tensor) else constant(p)


def _check_input(net: MLP, x: Tensor):
    if x.ndim != 2 or x.shape[1] != net.d_in:
        raise ValueError(f"input of shape {x.shape} does not match network input width {net.d_in}")


def mlp_forward(net: MLP, params, inputs) -> Tensor:
    """Batched forward pass; ``inputs`` is ``(batch, d_in)``."""
    h = inputs if isinstance(inputs, Tensor) else constant(inputs)
    _check_input(net, h)
    for l in range(net.n_layers):
        h = h @ _param(params, f"{net.prefix}W{l}") + _param(params, f"{net.prefix}b{l}")
        if net.activations[l] == "tanh":
            h = h.tanh()
    return h


def mlp_forward_jvp(net: MLP, params, inputs, direction: int):
    """Forward pass plus the derivative of the outputs along input column ``direction``.

    Both results are graph tensors, so losses built from the derivative remain
    differentiable with respect to the parameters.
    """
    h = inputs if isinstance(inputs, Tensor) else constant(inputs)
    _check_input(net, h)
    dh = None
    for l in range(net.n_layers):
        W = _param(params, f"{net.prefix}W{l}")
        z = h @ W + _param(params, f"{net.prefix}b{l}")
        # first layer: the tangent of a unit input direction is a row of W
        dz = W[direction:direction + 1, :] if dh is None else dh @ W
        if net.activations[l] == "tanh":
            h = z.tanh()
            dh = (1.0 - h.square()) * dz
        else:
            h, dh = z, dz
    if dh.shape != h.shape:
        dh = dh.broadcast_to(h.shape)
    return h, dh


def mlp_fused(net: MLP, params, inputs, direction=None, scale: float = 1.0):
    """Same values as :func:`mlp_forward` / :func:`mlp_forward_jvp` but recorded as
    one graph node with a hand-written reverse pass.

    Returns ``(h, dh)`` (``dh`` is None without a direction, else multiplied by
    ``scale``).  Inputs are treated as constants.
    """
    X = inputs.data if isinstance(inputs, Tensor) else np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.d_in:
        raise ValueError(f"input of shape {X.shape} does not match network input width {net.d_in}")
    Ws = [_param(params, f"{net.prefix}W{l}") for l in range(net.n_layers)]
    bs = [_param(params, f"{net.prefix}b{l}") for l in range(net.n_layers)]
    jvp = direction is not None
    hs, dhs, dzs = [X], [None], []
    h, dh = X, None
    for l in range(net.n_layers):
        W = Ws[l].data
        z = h @ W
        z += bs[l].data
        if jvp:
            dz = np.broadcast_to(W[direction], z.shape) if dh is None else dh @ W
            dzs.append(dz)
        if net.activations[l] == "tanh":
            h = np.tanh(z)
            if jvp:
                dh = (1.0 - h * h) * dz
        else:
            h = z
            if jvp:
                dh = dz
        hs.append(h)
        dhs.append(dh)
    d_out = h.shape[1]
    out = np.concatenate([h, scale * dh], axis=1) if jvp else h

    def bw(g):
        gh = g[:, :d_out]
        gdh = g[:, d_out:] * scale if jvp else None
        gW, gb = [None] * net.n_layers, [None] * net.n_layers
        for l in reversed(range(net.n_layers)):
            hl = hs[l + 1]
            if net.activations[l] == "tanh":
                sl = 1.0 - hl * hl
                if jvp:
                    gdz = gdh * sl
                    gh = gh - 2.0 * hl * dzs[l] * gdh
                gz = gh * sl
            else:
                gz = gh
                gdz = gdh
            W = Ws[l].data
            gWl = hs[l].T @ gz
            gb[l] = gz.sum(axis=0)
            if jvp:
                if l == 0:
                    gWl[direction] += gdz.sum(axis=0)
                else:
                    gWl += dhs[l].T @ gdz
                    gdh = gdz @ W.T
            gW[l] = gWl
            if l > 0:
                gh = gz @ W.T
        return tuple(gW) + tuple(gb)

    node = custom_op(out, tuple(Ws) + tuple(bs), bw, "mlp")
    if not jvp:
        return node, None
    return node[:, :d_out], node[:, d_out:]


def value_and_grad(fn, store: ParamStore):
    """Evaluate scalar ``fn(leaves)`` and its flat gradient in ``store`` order."""
    from .autodiff import grad

    leaves = store.leaves()
    out = fn(leaves)
    gs = grad(out, list(leaves.values()))
    flat = np.concatenate([g.ravel() for g in gs]) if gs else np.zeros(0)
    return float(out.data), flat
