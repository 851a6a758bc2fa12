"""Dense and gated-recurrent layers with hand-derived forward/backward passes.

Layers hold named ParamTensor objects (value + grad + frozen flag) and return
tapes from forward that carry exactly the intermediates backward needs.
Inputs may be (T, in) or batched (B, T, in); gradients accumulate with `+=`
in a fixed order so training is bit-reproducible.

Runtime dtype is float32; gradient-check tests build layers with float64.
"""

from __future__ import annotations

import zlib

import numpy as np


class ParamTensor:
    """One named parameter array with its gradient buffer."""

    def __init__(self, name: str, shape: tuple, fan_in: int, dtype=np.float32):
        self.name = name
        self.fan_in = fan_in
        self.value = np.zeros(shape, dtype=dtype)
        self.grad = np.zeros(shape, dtype=dtype)
        self.frozen = False

    @property
    def size(self) -> int:
        return self.value.size

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"ParamTensor({self.name}, shape={self.value.shape}, frozen={self.frozen})"


def init_tensor(tensor: ParamTensor, seed: int):
    """Fill with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), one stream per (seed, name)."""
    stream = np.random.default_rng([seed & 0xFFFFFFFF, zlib.crc32(tensor.name.encode())])
    bound = 1.0 / np.sqrt(tensor.fan_in)
    tensor.value[...] = stream.uniform(-bound, bound, tensor.value.shape)


def sigmoid(x):
    # tanh form avoids exp overflow and is exact
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def relu(x):
    return np.maximum(x, 0)


_ACTIVATIONS = ("relu", "sigmoid", "linear")


class FcLayer:
    """Fully connected layer y = act(x W^T + b)."""

    def __init__(self, in_dim: int, out_dim: int, activation: str, name: str = "fc",
                 dtype=np.float32):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.name = name
        self.W = ParamTensor(f"{name}.W", (out_dim, in_dim), fan_in=in_dim, dtype=dtype)
        self.b = ParamTensor(f"{name}.b", (out_dim,), fan_in=in_dim, dtype=dtype)

    def params(self) -> list[ParamTensor]:
        return [self.W, self.b]

    def param_count(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim

    def init_params(self, seed: int):
        for t in self.params():
            init_tensor(t, seed)

    def forward(self, x: np.ndarray, want_tape: bool = True):
        """Return (y, tape); the tape holds references only, so it is always kept."""
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"{self.name}: expected input width {self.in_dim}, got {x.shape}")
        z = x @ self.W.value.T + self.b.value
        if self.activation == "relu":
            y = relu(z)
        elif self.activation == "sigmoid":
            y = sigmoid(z)
        else:
            y = z
        return y, {"x": x, "z": z, "y": y}

    def backward(self, tape: dict, dy: np.ndarray, d_preact: np.ndarray | None = None):
        """Accumulate dW, db and return dL/dx.

        `d_preact` is an optional extra gradient added directly to the
        pre-activations (used by exit heads that tap z, not y).
        """
        if tape is None:
            raise ValueError(f"{self.name}: backward without a tape")
        x, z, y = tape["x"], tape["z"], tape["y"]
        if self.activation == "relu":
            dz = dy * (z > 0)
        elif self.activation == "sigmoid":
            dz = dy * y * (1.0 - y)
        else:
            dz = np.array(dy, copy=True)
        if d_preact is not None:
            dz = dz + d_preact
        flat_dz = dz.reshape(-1, self.out_dim)
        flat_x = x.reshape(-1, self.in_dim)
        self.W.grad += flat_dz.T @ flat_x
        self.b.grad += flat_dz.sum(axis=0)
        return dz @ self.W.value


_GATE_ORDER = ("r", "z", "n")


class GruLayer:
    """Gated recurrent layer, two bias sets, reset gate inside the candidate.

    Per step:
        r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
        z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
        n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
        h' = (1 - z) * n + z * h
    """

    def __init__(self, in_dim: int, hidden: int, name: str = "gru", dtype=np.float32):
        self.in_dim = in_dim
        self.hidden = hidden
        self.name = name
        self._input_w = [ParamTensor(f"{name}.W_i{g}", (hidden, in_dim), fan_in=in_dim,
                                     dtype=dtype) for g in _GATE_ORDER]
        self._input_b = [ParamTensor(f"{name}.b_i{g}", (hidden,), fan_in=in_dim,
                                     dtype=dtype) for g in _GATE_ORDER]
        self._hidden_w = [ParamTensor(f"{name}.W_h{g}", (hidden, hidden), fan_in=hidden,
                                      dtype=dtype) for g in _GATE_ORDER]
        self._hidden_b = [ParamTensor(f"{name}.b_h{g}", (hidden,), fan_in=hidden,
                                      dtype=dtype) for g in _GATE_ORDER]

    def params(self) -> list[ParamTensor]:
        return self._input_w + self._input_b + self._hidden_w + self._hidden_b

    def param_count(self) -> int:
        h, i = self.hidden, self.in_dim
        return 3 * (i * h + h * h + 2 * h)

    def init_params(self, seed: int):
        for t in self.params():
            init_tensor(t, seed)

    # fused (3h, in) / (3h, h) views in r,z,n order, rebuilt per call
    def _stacked(self):
        w_i = np.concatenate([t.value for t in self._input_w], axis=0)
        b_i = np.concatenate([t.value for t in self._input_b])
        w_h = np.concatenate([t.value for t in self._hidden_w], axis=0)
        b_h = np.concatenate([t.value for t in self._hidden_b])
        return w_i, b_i, w_h, b_h

    def forward(self, x: np.ndarray, h0: np.ndarray | None = None, want_tape: bool = True):
        """Run all T steps; returns (h_seq, tape), h_seq matching x's leading shape."""
        squeeze = x.ndim == 2
        if squeeze:
            x = x[None]
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"{self.name}: expected input width {self.in_dim}, got {x.shape}")
        batch, steps, _ = x.shape
        hid = self.hidden
        dtype = self._input_w[0].value.dtype
        if h0 is None:
            h = np.zeros((batch, hid), dtype=dtype)
        else:
            h = np.broadcast_to(np.asarray(h0, dtype=dtype), (batch, hid)).copy()
        h0_saved = h.copy()

        w_i, b_i, w_h, b_h = self._stacked()
        gi = x.reshape(-1, self.in_dim) @ w_i.T + b_i
        gi = gi.reshape(batch, steps, 3 * hid)

        h_seq = np.empty((batch, steps, hid), dtype=dtype)
        if want_tape:
            r_all = np.empty_like(h_seq)
            z_all = np.empty_like(h_seq)
            n_all = np.empty_like(h_seq)
            m_all = np.empty_like(h_seq)
        for t in range(steps):
            gh = h @ w_h.T + b_h
            r = sigmoid(gi[:, t, :hid] + gh[:, :hid])
            z = sigmoid(gi[:, t, hid:2 * hid] + gh[:, hid:2 * hid])
            m = gh[:, 2 * hid:]
            n = np.tanh(gi[:, t, 2 * hid:] + r * m)
            if want_tape:
                r_all[:, t], z_all[:, t], n_all[:, t], m_all[:, t] = r, z, n, m
            h = (1.0 - z) * n + z * h
            h_seq[:, t] = h

        tape = None
        if want_tape:
            tape = {"x": x, "h0": h0_saved, "h_seq": h_seq, "r": r_all, "z": z_all,
                    "n": n_all, "m": m_all, "squeeze": squeeze}
        return (h_seq[0] if squeeze else h_seq), tape

    def backward(self, tape: dict, dh: np.ndarray):
        """Full backpropagation through time; accumulates all 12 grads, returns dL/dx."""
        if tape is None:
            raise ValueError(f"{self.name}: backward without a tape")
        x = tape["x"]
        if dh.ndim == 2:
            dh = dh[None]
        if dh.shape != tape["h_seq"].shape:
            raise ValueError(f"{self.name}: dh shape {dh.shape} does not match forward")
        batch, steps, hid = tape["h_seq"].shape
        r_all, z_all, n_all, m_all = tape["r"], tape["z"], tape["n"], tape["m"]
        h_seq, h0 = tape["h_seq"], tape["h0"]
        w_i, _, w_h, _ = self._stacked()

        # per-step pre-activation grads, input side [dar daz dan], hidden side [dar daz dm]
        da_i = np.empty((batch, steps, 3 * hid), dtype=dh.dtype)
        da_h = np.empty_like(da_i)
        carry = np.zeros((batch, hid), dtype=dh.dtype)
        for t in range(steps - 1, -1, -1):
            h_prev = h_seq[:, t - 1] if t > 0 else h0
            r, z, n, m = r_all[:, t], z_all[:, t], n_all[:, t], m_all[:, t]
            dht = dh[:, t] + carry
            dn = dht * (1.0 - z)
            dz = dht * (h_prev - n)
            dan = dn * (1.0 - n * n)
            dar = (dan * m) * r * (1.0 - r)
            daz = dz * z * (1.0 - z)
            da_i[:, t, :hid] = dar
            da_i[:, t, hid:2 * hid] = daz
            da_i[:, t, 2 * hid:] = dan
            da_h[:, t, :2 * hid] = da_i[:, t, :2 * hid]
            da_h[:, t, 2 * hid:] = dan * r
            carry = dht * z + da_h[:, t] @ w_h

        h_prev_all = np.concatenate([h0[:, None], h_seq[:, :-1]], axis=1)
        flat_i = da_i.reshape(-1, 3 * hid)
        flat_h = da_h.reshape(-1, 3 * hid)
        gw_i = flat_i.T @ x.reshape(-1, self.in_dim)
        gw_h = flat_h.T @ h_prev_all.reshape(-1, hid)
        gb_i = flat_i.sum(axis=0)
        gb_h = flat_h.sum(axis=0)
        for k in range(3):
            self._input_w[k].grad += gw_i[k * hid:(k + 1) * hid]
            self._hidden_w[k].grad += gw_h[k * hid:(k + 1) * hid]
            self._input_b[k].grad += gb_i[k * hid:(k + 1) * hid]
            self._hidden_b[k].grad += gb_h[k * hid:(k + 1) * hid]

        dx = (flat_i @ w_i).reshape(x.shape)
        return dx[0] if tape["squeeze"] else dx
