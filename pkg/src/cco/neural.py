"""Residual CNN policy with hand-written reverse-mode gradients.

Layout is NHWC throughout. The architecture is fixed::

    conv3x3(M->C) - BN - ReLU
    R x [conv3x3 - BN - ReLU - conv3x3 - BN - (+skip) - ReLU]
    global average pool - affine -> 11 logits

Convolutions carry no bias (batch norm supplies the shift). Gradients are
accumulated in *ascent* form: a positive scale pushes the log-probability of
the chosen action up once :func:`apply_update` runs.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_ACTIONS = 11
BN_EPS = 1e-5
MAGIC = b"CCOPNET1"


def conv3x3_forward(x: np.ndarray, w: np.ndarray):
    """Same-padded 3x3 convolution; ``w`` is (3, 3, Cin, Cout).

    Computed as nine shifted matmuls, which beats im2col here and needs only
    the padded input (returned as the backward cache).
    """
    n, h, wd, _ = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((n, h, wd, w.shape[3]), dtype=np.result_type(x, w))
    for i in range(3):
        for j in range(3):
            out += xp[:, i:i + h, j:j + wd, :] @ w[i, j]
    return out, xp


def conv3x3_backward(dout: np.ndarray, xp: np.ndarray, w: np.ndarray, need_dx: bool = True):
    """Gradients w.r.t. input and weights, given the padded input ``xp``."""
    n, h, wd, _ = dout.shape
    c = xp.shape[3]
    d2 = dout.reshape(-1, dout.shape[3])
    dw = np.empty(w.shape, dtype=np.result_type(dout, xp))
    for i in range(3):
        for j in range(3):
            dw[i, j] = xp[:, i:i + h, j:j + wd, :].reshape(-1, c).T @ d2
    if not need_dx:
        return None, dw
    # full correlation with the spatially flipped, channel-transposed kernel
    wf = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    dx, _ = conv3x3_forward(dout, wf)
    return dx, dw


def bn_forward(x, gamma, beta, mean=None, var=None):
    """Batch norm over (N, H, W). Uses batch statistics unless mean/var given."""
    if mean is None:
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv
    return gamma * xhat + beta, (xhat, inv, mean, var)


def bn_backward(dy, gamma, cache):
    xhat, inv, _, _ = cache
    m = dy.shape[0] * dy.shape[1] * dy.shape[2]
    dgamma = (dy * xhat).sum(axis=(0, 1, 2))
    dbeta = dy.sum(axis=(0, 1, 2))
    dxhat = dy * gamma
    dx = (inv / m) * (m * dxhat - dxhat.sum(axis=(0, 1, 2))
                      - xhat * (dxhat * xhat).sum(axis=(0, 1, 2)))
    return dx, dgamma, dbeta


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class NetConfig:
    k_fov: int = 32
    channels_in: int = 22  # len(graphdistill.DEFAULT_CHANNELS)
    width: int = 32
    blocks: int = 3
    l2: float = 1e-4
    bn_momentum: float = 0.99


class PolicyNetwork:
    """Parameters and running statistics of the residual policy net."""

    def __init__(self, cfg: NetConfig = NetConfig(), seed: int = 0,
                 dtype=np.float32, zero_head: bool = True):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c_in, c = cfg.channels_in, cfg.width

        def conv(cin, cout):
            return rng.normal(0.0, math.sqrt(2.0 / (9 * cin)), (3, 3, cin, cout))

        params: dict[str, np.ndarray] = {"conv_in": conv(c_in, c),
                                         "bn_in.gamma": np.ones(c), "bn_in.beta": np.zeros(c)}
        for r in range(cfg.blocks):
            for k in (1, 2):
                params[f"b{r}.conv{k}"] = conv(c, c)
                params[f"b{r}.bn{k}.gamma"] = np.ones(c)
                params[f"b{r}.bn{k}.beta"] = np.zeros(c)
        if zero_head:
            params["head.w"] = np.zeros((c, N_ACTIONS))
        else:
            params["head.w"] = rng.normal(0.0, math.sqrt(1.0 / c), (c, N_ACTIONS))
        params["head.b"] = np.zeros(N_ACTIONS)
        self.params = {k: v.astype(self.dtype) for k, v in params.items()}

        stats = {}
        for name in self.bn_names():
            stats[f"{name}.mean"] = np.zeros(c, dtype=self.dtype)
            stats[f"{name}.var"] = np.ones(c, dtype=self.dtype)
        self.stats = stats

    def bn_names(self):
        names = ["bn_in"]
        for r in range(self.cfg.blocks):
            names += [f"b{r}.bn1", f"b{r}.bn2"]
        return names

    def param_names(self):
        return list(self.params)

    @property
    def input_shape(self):
        return (self.cfg.k_fov, self.cfg.k_fov, self.cfg.channels_in)

    def copy(self) -> "PolicyNetwork":
        other = PolicyNetwork.__new__(PolicyNetwork)
        other.cfg = self.cfg
        other.dtype = self.dtype
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.stats = {k: v.copy() for k, v in self.stats.items()}
        return other

    def param_norm(self) -> float:
        return float(math.sqrt(sum(float(np.sum(p.astype(np.float64) ** 2))
                                   for p in self.params.values())))

    # -- forward / backward ----------------------------------------------
    def _as_batch(self, x) -> np.ndarray:
        x = getattr(x, "data", x)
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match network "
                             f"input {self.input_shape}")
        return x

    def _bn(self, name, x, train, caches, update_stats):
        g, b = self.params[f"{name}.gamma"], self.params[f"{name}.beta"]
        if train:
            y, cache = bn_forward(x, g, b)
            if update_stats:
                mom = self.cfg.bn_momentum
                m = x.shape[0] * x.shape[1] * x.shape[2]
                unbiased = cache[3] * (m / max(m - 1, 1))
                self.stats[f"{name}.mean"] = (mom * self.stats[f"{name}.mean"]
                                              + (1 - mom) * cache[2]).astype(self.dtype)
                self.stats[f"{name}.var"] = (mom * self.stats[f"{name}.var"]
                                             + (1 - mom) * unbiased).astype(self.dtype)
        else:
            y, cache = bn_forward(x, g, b, self.stats[f"{name}.mean"], self.stats[f"{name}.var"])
        caches[name] = cache
        return y

    def forward_batch(self, x, train: bool = False, update_stats: bool = False):
        """Logits for a batch; returns (logits, caches).

        Backward caches are only kept in train mode.
        """
        x = self._as_batch(x)
        p = self.params
        caches: dict = {"x_shape": x.shape}

        def conv(name, inp):
            out, xp = conv3x3_forward(inp, p[name])
            if train:
                caches[name] = xp
            return out

        h = conv("conv_in", x)
        h = self._bn("bn_in", h, train, caches, update_stats)
        h = np.maximum(h, 0)
        caches["relu_in"] = h
        for r in range(self.cfg.blocks):
            skip = h
            u = conv(f"b{r}.conv1", h)
            u = self._bn(f"b{r}.bn1", u, train, caches, update_stats)
            u = np.maximum(u, 0)
            caches[f"b{r}.relu1"] = u
            v = conv(f"b{r}.conv2", u)
            v = self._bn(f"b{r}.bn2", v, train, caches, update_stats)
            h = np.maximum(v + skip, 0)
            caches[f"b{r}.out"] = h
        pooled = h.mean(axis=(1, 2))
        caches["pooled"] = pooled
        caches["last"] = h
        logits = pooled @ p["head.w"] + p["head.b"]
        if not train:
            caches = {}
        return logits, caches

    def backward(self, dlogits: np.ndarray, caches) -> dict[str, np.ndarray]:
        """Gradients of sum(dlogits * logits) with respect to every parameter."""
        p = self.params
        dlogits = np.asarray(dlogits, dtype=self.dtype)
        grads: dict[str, np.ndarray] = {}
        grads["head.w"] = caches["pooled"].T @ dlogits
        grads["head.b"] = dlogits.sum(axis=0)
        last = caches["last"]
        n, hh, ww, c = last.shape
        dh = np.broadcast_to((dlogits @ p["head.w"].T)[:, None, None, :] / (hh * ww),
                             last.shape).copy()
        for r in reversed(range(self.cfg.blocks)):
            out = caches[f"b{r}.out"]
            dh = dh * (out > 0)
            dskip = dh
            dv, grads[f"b{r}.bn2.gamma"], grads[f"b{r}.bn2.beta"] = bn_backward(
                dh, p[f"b{r}.bn2.gamma"], caches[f"b{r}.bn2"])
            u = caches[f"b{r}.relu1"]
            du, grads[f"b{r}.conv2"] = conv3x3_backward(dv, caches[f"b{r}.conv2"],
                                                        p[f"b{r}.conv2"])
            du = du * (u > 0)
            du, grads[f"b{r}.bn1.gamma"], grads[f"b{r}.bn1.beta"] = bn_backward(
                du, p[f"b{r}.bn1.gamma"], caches[f"b{r}.bn1"])
            dh_in, grads[f"b{r}.conv1"] = conv3x3_backward(du, caches[f"b{r}.conv1"],
                                                           p[f"b{r}.conv1"])
            dh = dh_in + dskip
        dh = dh * (caches["relu_in"] > 0)
        dh, grads["bn_in.gamma"], grads["bn_in.beta"] = bn_backward(
            dh, p["bn_in.gamma"], caches["bn_in"])
        _, grads["conv_in"] = conv3x3_backward(dh, caches["conv_in"], p["conv_in"],
                                               need_dx=False)
        return grads

    def log_probs(self, x, train: bool = False) -> np.ndarray:
        logits, _ = self.forward_batch(x, train=train)
        return log_softmax(logits.astype(np.float64))


@dataclass
class ActionDistribution:
    logits: np.ndarray
    probs: np.ndarray

    @property
    def greedy(self) -> int:
        return int(np.argmax(self.probs))


def forward(net: PolicyNetwork, tensor, mode: str = "eval") -> ActionDistribution:
    """Action distribution for one tensor (or a batch, with leading axis)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
    single = np.ndim(getattr(tensor, "data", tensor)) == 3
    logits, _ = net.forward_batch(tensor, train=(mode == "train"))
    logits = logits.astype(np.float64)
    probs = np.exp(log_softmax(logits))
    if single:
        return ActionDistribution(logits[0], probs[0])
    return ActionDistribution(logits, probs)


class GradientAccumulator:
    def __init__(self, net: PolicyNetwork):
        self.grads = {k: np.zeros(v.shape, dtype=np.float64) for k, v in net.params.items()}
        self.count = 0

    def reset(self):
        for g in self.grads.values():
            g[...] = 0.0
        self.count = 0

    def merge(self, other: "GradientAccumulator"):
        for k, g in other.grads.items():
            self.grads[k] += g
        self.count += other.count


def accumulate_batch(net: PolicyNetwork, x, actions, scales,
                     acc: GradientAccumulator, update_stats: bool = True) -> np.ndarray:
    """Add sum_n scale_n * grad log pi(a_n | x_n) - n * l2 * theta to ``acc``.

    The batch goes through one train-mode forward, so batch norm uses the
    statistics of exactly these samples. Returns the per-sample log-probs.
    """
    actions = np.asarray(actions, dtype=int).reshape(-1)
    scales = np.asarray(scales, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(scales)):
        raise ValueError("gradient scale must be finite")
    if np.any((actions < 0) | (actions >= N_ACTIONS)):
        raise ValueError(f"action class must lie in 0..{N_ACTIONS - 1}")
    logits, caches = net.forward_batch(x, train=True, update_stats=update_stats)
    n = logits.shape[0]
    if len(actions) != n or len(scales) != n:
        raise ValueError("actions and scales must match the batch size")
    logp = log_softmax(logits.astype(np.float64))
    probs = np.exp(logp)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), actions] = 1.0
    dlogits = (scales[:, None] * (onehot - probs)).astype(net.dtype)
    grads = net.backward(dlogits, caches)
    lam = net.cfg.l2
    for k, g in grads.items():
        acc.grads[k] += g - n * lam * net.params[k]
    acc.count += n
    return logp[np.arange(n), actions]


def accumulate_scaled_logprob_gradient(net: PolicyNetwork, tensor, action: int,
                                       scale: float, acc: GradientAccumulator):
    return accumulate_batch(net, tensor, [action], [scale], acc)[0]


class SGD:
    """SGD with momentum and optional cosine step-size decay (ascent)."""

    def __init__(self, lr: float = 1e-3, momentum: float = 0.9,
                 total_steps: int | None = None, lr_min: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.total_steps = total_steps
        self.lr_min = lr_min
        self.step = 0
        self.velocity: dict[str, np.ndarray] = {}

    def current_lr(self) -> float:
        if not self.total_steps:
            return self.lr
        frac = min(self.step / self.total_steps, 1.0)
        return self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + math.cos(math.pi * frac))


def apply_update(net: PolicyNetwork, acc: GradientAccumulator, opt: SGD) -> None:
    if acc.count < 1:
        raise ValueError("no accumulated samples to apply")
    lr = opt.current_lr()
    for k, g in acc.grads.items():
        mean = g / acc.count
        if opt.momentum:
            v = opt.velocity.get(k)
            v = mean if v is None else opt.momentum * v + mean
            opt.velocity[k] = v
            step = v
        else:
            step = mean
        net.params[k] = (net.params[k] + lr * step).astype(net.dtype)
    opt.step += 1
    acc.reset()


# -- checkpoints -----------------------------------------------------------
_CFG = struct.Struct("<4I")


def checkpoint_save(net: PolicyNetwork, path) -> None:
    """Magic, (K_fov, M, C, R) as uint32, then float32 arrays in layer order.

    Order: every parameter in :meth:`PolicyNetwork.param_names` order, then
    batch-norm running mean and variance for each BN layer in forward order.
    """
    cfg = net.cfg
    parts = [MAGIC, _CFG.pack(cfg.k_fov, cfg.channels_in, cfg.width, cfg.blocks)]
    for k in net.param_names():
        parts.append(np.ascontiguousarray(net.params[k], dtype="<f4").tobytes())
    for name in net.bn_names():
        parts.append(np.ascontiguousarray(net.stats[f"{name}.mean"], dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(net.stats[f"{name}.var"], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def _read_header(blob: bytes, path):
    if len(blob) < len(MAGIC) + _CFG.size or blob[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint (bad magic or truncated header)")
    return _CFG.unpack_from(blob, len(MAGIC))


def checkpoint_load(net: PolicyNetwork, path) -> PolicyNetwork:
    """Load parameters into ``net`` in place; configuration must match."""
    blob = Path(path).read_bytes()
    found = _read_header(blob, path)
    cfg = net.cfg
    expected = (cfg.k_fov, cfg.channels_in, cfg.width, cfg.blocks)
    if found != expected:
        raise ValueError(f"{path}: checkpoint config (K_fov, M, C, R)={found} "
                         f"does not match network {expected}")
    off = len(MAGIC) + _CFG.size
    arrays = [(net.params, k) for k in net.param_names()]
    for name in net.bn_names():
        arrays += [(net.stats, f"{name}.mean"), (net.stats, f"{name}.var")]
    loaded = {}
    for store, key in arrays:
        shape = store[key].shape
        nbytes = 4 * int(np.prod(shape))
        if off + nbytes > len(blob):
            raise ValueError(f"{path}: truncated checkpoint while reading {key} {shape}")
        loaded[(id(store), key)] = (store, key, np.frombuffer(blob, "<f4", int(np.prod(shape)), off)
                                    .reshape(shape))
        off += nbytes
    if off != len(blob):
        raise ValueError(f"{path}: {len(blob) - off} trailing bytes after checkpoint data")
    for store, key, arr in loaded.values():
        store[key] = arr.astype(net.dtype)
    return net


def load_network(path, l2: float = 1e-4) -> PolicyNetwork:
    """Build a float32 network from a checkpoint's own config block."""
    blob = Path(path).read_bytes()
    k, m, c, r = _read_header(blob, path)
    net = PolicyNetwork(NetConfig(k, m, c, r, l2))
    return checkpoint_load(net, path)
