"""History-conditioned velocity network with hand-written reverse mode.

The network maps ``concat[flatten(x_t), flatten(h), embed(t)]`` through
SiLU hidden layers to a ``C x Fh`` output. Everything is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import io
import struct
import zlib

import numpy as np

from .errors import FormatError, InputError, NonFiniteError, ShapeError, VersionError

MAGIC = b"CGFMNET\x00"
FORMAT_VERSION = 1
ACTIVATION = b"silu"


def time_embed(t, K: int) -> np.ndarray:
    """``[t, sin(2 pi k t), cos(2 pi k t) for k = 1..K]``; batched if ``t`` is 1-D."""
    t = np.asarray(t, dtype=np.float64)
    k = np.arange(1, K + 1, dtype=np.float64)
    ang = 2.0 * np.pi * t[..., None] * k
    out = np.empty(t.shape + (2 * K + 1,))
    out[..., 0] = t
    out[..., 1::2] = np.sin(ang)
    out[..., 2::2] = np.cos(ang)
    return out


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def silu(a):
    return a * _sigmoid(a)


def silu_grad(a):
    s = _sigmoid(a)
    return s * (1.0 + a * (1.0 - s))


class VelocityNet:
    """MLP ``u_theta(t, x_t | h)`` with exact gradients.

    Weights are stored ``(out, in)`` so a layer computes ``z @ W.T + b``.
    """

    def __init__(self, channels: int, history: int, horizon: int, hidden=(256, 256), time_freqs: int = 8):
        self.channels = int(channels)
        self.history = int(history)
        self.horizon = int(horizon)
        self.hidden = tuple(int(w) for w in hidden)
        self.time_freqs = int(time_freqs)
        dims = self.dims
        self.weights = [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])]
        self.biases = [np.zeros(o) for o in dims[1:]]

    @classmethod
    def init(cls, channels, history, horizon, hidden=(256, 256), time_freqs=8, rng=None) -> "VelocityNet":
        """Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)), biases zero."""
        net = cls(channels, history, horizon, hidden, time_freqs)
        rng = rng if rng is not None else np.random.default_rng(0)
        for W in net.weights:
            bound = np.sqrt(6.0 / W.shape[1])
            W[...] = rng.uniform(-bound, bound, size=W.shape)
        return net

    @property
    def out_dim(self) -> int:
        return self.channels * self.horizon

    @property
    def dims(self) -> list[int]:
        d_in = self.channels * self.horizon + self.channels * self.history + 2 * self.time_freqs + 1
        return [d_in, *self.hidden, self.out_dim]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = W
            out[f"b{i}"] = b
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params().values())

    def copy(self) -> "VelocityNet":
        net = VelocityNet(self.channels, self.history, self.horizon, self.hidden, self.time_freqs)
        net.weights = [W.copy() for W in self.weights]
        net.biases = [b.copy() for b in self.biases]
        return net

    def load_state(self, params: dict[str, np.ndarray]) -> None:
        for name, p in self.params().items():
            p[...] = params[name]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params().values()])

    # -- forward / backward -------------------------------------------------

    def _inputs(self, t, xt, h):
        xt = np.asarray(xt, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        single = xt.ndim == 2
        if single:
            xt, h = xt[None], h[None]
        C, Fh, L = self.channels, self.horizon, self.history
        if xt.ndim != 3 or xt.shape[1:] != (C, Fh):
            raise ShapeError(f"x_t must have shape (C={C}, Fh={Fh}) or (B, C, Fh), got {xt.shape}")
        if h.ndim != 3 or h.shape[1:] != (C, L) or h.shape[0] != xt.shape[0]:
            raise ShapeError(f"h must have shape (B={xt.shape[0]}, C={C}, L={L}), got {h.shape}")
        B = xt.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
        if not (np.isfinite(xt).all() and np.isfinite(h).all() and np.isfinite(t).all()):
            raise InputError("non-finite value in network input")
        z = np.concatenate([xt.reshape(B, -1), h.reshape(B, -1), time_embed(t, self.time_freqs)], axis=1)
        return z, single

    def forward_cache(self, t, xt, h):
        """Batched forward; returns ``(output (B, C, Fh), cache)``."""
        z, single = self._inputs(t, xt, h)
        zs, pre = [z], []
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = z @ W.T + b
            if i == last:
                z = a
            else:
                pre.append(a)
                z = silu(a)
                zs.append(z)
        out = z.reshape(-1, self.channels, self.horizon)
        return out, (zs, pre, single)

    def forward(self, t, xt, h) -> np.ndarray:
        out, (_, _, single) = self.forward_cache(t, xt, h)
        return out[0] if single else out

    __call__ = forward

    def backward_cache(self, cache, upstream) -> dict[str, np.ndarray]:
        """Gradients of ``<output, upstream>`` from a ``forward_cache`` result."""
        zs, pre, single = cache
        g = np.asarray(upstream, dtype=np.float64)
        if single:
            g = g[None]
        g = g.reshape(zs[0].shape[0], self.out_dim)
        grads = {}
        for i in range(len(self.weights) - 1, -1, -1):
            grads[f"W{i}"] = g.T @ zs[i]
            grads[f"b{i}"] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights[i]) * silu_grad(pre[i - 1])
        return {name: grads[name] for name in self.params()}

    def backward(self, t, xt, h, upstream) -> dict[str, np.ndarray]:
        """Exact reverse-mode gradient of ``<forward(t, xt, h), upstream>``."""
        _, cache = self.forward_cache(t, xt, h)
        return self.backward_cache(cache, upstream)

    # -- serialization ------------------------------------------------------

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<I", FORMAT_VERSION))
        buf.write(ACTIVATION)
        buf.write(struct.pack("<5I", self.channels, self.history, self.horizon, self.time_freqs, len(self.hidden)))
        buf.write(struct.pack(f"<{len(self.hidden)}I", *self.hidden))
        for p in self.params().values():
            buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
        body = buf.getvalue()
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "VelocityNet":
        data = bytes(data)
        head = len(MAGIC) + 4 + len(ACTIVATION) + 20
        if len(data) < head or data[: len(MAGIC)] != MAGIC:
            raise FormatError("not a velocity-net parameter file (bad magic or truncated header)")
        (version,) = struct.unpack_from("<I", data, len(MAGIC))
        if version != FORMAT_VERSION:
            raise VersionError(f"parameter file version {version}, this build reads version {FORMAT_VERSION}")
        off = len(MAGIC) + 4
        if data[off : off + len(ACTIVATION)] != ACTIVATION:
            raise FormatError(f"unsupported activation tag {data[off:off + len(ACTIVATION)]!r}")
        off += len(ACTIVATION)
        C, L, Fh, K, nh = struct.unpack_from("<5I", data, off)
        off += 20
        if len(data) < off + 4 * nh:
            raise FormatError("truncated parameter file header")
        hidden = struct.unpack_from(f"<{nh}I", data, off)
        off += 4 * nh
        net = cls(C, L, Fh, hidden, K)
        expected = off + 8 * net.n_params + 4
        if len(data) != expected:
            raise FormatError(f"parameter file has {len(data)} bytes, expected {expected} (truncated or corrupt)")
        (crc,) = struct.unpack_from("<I", data, expected - 4)
        if crc != zlib.crc32(data[: expected - 4]):
            raise FormatError("parameter file checksum mismatch")
        for p in net.params().values():
            p[...] = np.frombuffer(data, dtype="<f8", count=p.size, offset=off).reshape(p.shape)
            off += 8 * p.size
        return net


def save_params(net: VelocityNet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(net.to_bytes())


def load_params(path) -> VelocityNet:
    with open(path, "rb") as fh:
        return VelocityNet.from_bytes(fh.read())


@dataclass
class AdamState:
    """Adam with bias correction. ``update`` mutates the parameters in place."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
            if not np.isfinite(g).all():
                raise NonFiniteError(f"non-finite gradient for parameter {name}; update rejected")
        self.step += 1
        c1 = 1.0 - self.beta1**self.step
        c2 = 1.0 - self.beta2**self.step
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not np.isfinite(p).all():
                raise NonFiniteError(f"parameter {name} became non-finite after update {self.step}")


def adam_update(state: AdamState, params, grads):
    state.update(params, grads)
    return params, state
