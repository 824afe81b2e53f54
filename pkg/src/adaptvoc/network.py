"""Gated dilated-causal-convolution network (WaveNet) in numpy.

Everything the trainer needs is here: Xavier initialisation, the
teacher-forced forward pass with cached activations, categorical NLL, the
hand-derived backward pass, Adam, and a ring-buffer sampler that advances
one sample at a time in O(layers).

Layout of one forward pass over T steps (R residual, S skip, C condition
channels, Q = 256 classes)::

    x0[t]   = embed[code[t-1]]           (zero vector at t = 0)
    z       = x[t-d] W0 + x[t] W1 + c[t] V + b      per layer, split filter|gate
    h       = tanh(z_f) * sigmoid(z_g)
    skip   += h Ws + bs ;  x_next = x + h Wr + br
    logits  = relu(relu(skip) P1 + p1) P2 + p2
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

N_CLASSES = 256


@dataclass(frozen=True)
class NetConfig:
    blocks: int = 2
    layers_per_block: int = 8
    residual_channels: int = 64
    skip_channels: int = 64
    quantization_channels: int = N_CLASSES
    condition_dim: int = 43
    kernel_size: int = 2

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name in ("blocks", "layers_per_block"):
                if value < 0:
                    raise ValueError(f"{name} must be nonnegative")
            elif value <= 0:
                raise ValueError(f"{name} must be positive")
        if self.kernel_size != 2:
            raise ValueError("only kernel_size=2 dilated convolutions are implemented")

    @classmethod
    def paper(cls, condition_dim: int = 43) -> "NetConfig":
        """3 blocks x 10 layers, 512 residual / 256 skip channels."""
        return cls(3, 10, 512, 256, N_CLASSES, condition_dim)

    @classmethod
    def desk(cls, condition_dim: int = 43) -> "NetConfig":
        return cls(2, 8, 64, 64, N_CLASSES, condition_dim)

    @property
    def n_layers(self) -> int:
        return self.blocks * self.layers_per_block

    @property
    def dilations(self) -> list[int]:
        return [2 ** i for _ in range(self.blocks) for i in range(self.layers_per_block)]

    def to_dict(self) -> dict:
        return asdict(self)


def receptive_field(config: NetConfig) -> int:
    per_block = sum(2 ** i for i in range(config.layers_per_block))
    return 1 + config.blocks * per_block * (config.kernel_size - 1)


# ---------------------------------------------------------------------------
# parameters


def param_shapes(config: NetConfig) -> dict[str, tuple]:
    """Names and shapes of every tensor, in the fixed serialisation order."""
    R, S, C, Q = (config.residual_channels, config.skip_channels, config.condition_dim,
                  config.quantization_channels)
    shapes = {"embed": (Q, R)}
    for i in range(config.n_layers):
        for gate in ("filter", "gate"):
            shapes[f"layer{i}.{gate}_w"] = (2, R, R)     # taps: [x[t-d], x[t]]
            shapes[f"layer{i}.{gate}_cond"] = (C, R)
            shapes[f"layer{i}.{gate}_b"] = (R,)
        shapes[f"layer{i}.skip_w"] = (R, S)
        shapes[f"layer{i}.skip_b"] = (S,)
        if i < config.n_layers - 1:  # the last layer's residual output is never read
            shapes[f"layer{i}.res_w"] = (R, R)
            shapes[f"layer{i}.res_b"] = (R,)
    shapes["post1_w"] = (S, Q)
    shapes["post1_b"] = (Q,)
    shapes["post2_w"] = (Q, Q)
    shapes["post2_b"] = (Q,)
    return shapes


def _fans(name, shape):
    if len(shape) == 3:  # (taps, in, out) convolution
        return shape[0] * shape[1], shape[0] * shape[2]
    return shape[0], shape[1]


def xavier_init(config: NetConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Uniform Xavier/Glorot weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in, fan_out = _fans(name, shape)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


def zero_params(config: NetConfig, dtype=np.float64) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape, dtype=dtype) for name, shape in param_shapes(config).items()}


def check_params(params, config: NetConfig):
    shapes = param_shapes(config)
    if list(params) != list(shapes):
        missing = set(shapes) ^ set(params)
        raise ValueError(f"parameter names do not match the config: {sorted(missing)[:5]}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: shape {params[name].shape} != {shape}")


def _stacked(params, config, layer):
    """Tap-0, tap-1, conditioning and bias weights with filter|gate side by side."""
    p = f"layer{layer}."
    w0 = np.concatenate([params[p + "filter_w"][0], params[p + "gate_w"][0]], axis=1)
    w1 = np.concatenate([params[p + "filter_w"][1], params[p + "gate_w"][1]], axis=1)
    b = np.concatenate([params[p + "filter_b"], params[p + "gate_b"]])
    return w0, w1, b


def _cond_matrix(params, config):
    cols = []
    for i in range(config.n_layers):
        cols += [params[f"layer{i}.filter_cond"], params[f"layer{i}.gate_cond"]]
    return np.concatenate(cols, axis=1)


# ---------------------------------------------------------------------------
# teacher-forced forward / loss / backward


@dataclass
class ForwardCache:
    codes: np.ndarray
    prev_code: int | None
    conditions: np.ndarray
    inputs: list          # x entering each layer
    f: list
    g: list
    skip: np.ndarray      # pre-ReLU skip sum
    z1: np.ndarray        # post1 pre-activation
    a2: np.ndarray        # relu(z1)


def _sigmoid(z):
    # tanh form: overflow-free and much faster than scipy's expit on float32
    return 0.5 + 0.5 * np.tanh(0.5 * z)


def _shift(x, d):
    out = np.zeros_like(x)
    if d < len(x):
        out[d:] = x[:-d]
    return out


def forward_teacher_forced(params, config: NetConfig, codes, conditions, prev_code=None):
    """Logits (T, 256) where row t sees codes[<t] and conditions[<=t].

    ``prev_code`` is the code preceding ``codes[0]`` (None = start of stream,
    an all-zero network input).
    """
    codes = np.asarray(codes)
    T = len(codes)
    dtype = params["embed"].dtype
    conditions = np.asarray(conditions, dtype=dtype)
    if conditions.shape != (T, config.condition_dim):
        raise ValueError(f"conditions must have shape ({T}, {config.condition_dim}), "
                         f"got {conditions.shape}")
    if T and (codes.min() < 0 or codes.max() >= config.quantization_channels):
        raise ValueError("codes out of range")
    R = config.residual_channels
    x = np.zeros((T, R), dtype=dtype)
    if T > 1:
        x[1:] = params["embed"][codes[:-1]]
    if prev_code is not None and T:
        x[0] = params["embed"][prev_code]
    cond_all = conditions @ _cond_matrix(params, config)
    skip = np.zeros((T, config.skip_channels), dtype=dtype)
    inputs, fs, gs = [], [], []
    for i, d in enumerate(config.dilations):
        w0, w1, b = _stacked(params, config, i)
        z = _shift(x, d) @ w0
        z += x @ w1
        z += cond_all[:, 2 * R * i:2 * R * (i + 1)]
        z += b
        f = np.tanh(z[:, :R])
        g = _sigmoid(z[:, R:])
        h = f * g
        skip += h @ params[f"layer{i}.skip_w"]
        skip += params[f"layer{i}.skip_b"]
        inputs.append(x)
        fs.append(f)
        gs.append(g)
        if i < config.n_layers - 1:
            x = x + h @ params[f"layer{i}.res_w"] + params[f"layer{i}.res_b"]
    z1 = np.maximum(skip, 0) @ params["post1_w"] + params["post1_b"]
    a2 = np.maximum(z1, 0)
    logits = a2 @ params["post2_w"] + params["post2_b"]
    cache = ForwardCache(codes, prev_code, conditions, inputs, fs, gs, skip, z1, a2)
    return logits, cache


def nll_loss(logits, targets) -> float:
    """Mean categorical negative log-likelihood in nats per sample."""
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    lse = logsumexp(logits, axis=1)
    return float(np.mean(lse - logits[np.arange(len(targets)), targets]))


def nll_grad(logits, targets, start: int = 0):
    """(loss, dloss/dlogits) for the mean NLL over rows ``start:``."""
    logits = np.asarray(logits)
    n = len(logits) - start
    if n <= 0:
        raise ValueError("no rows left to score")
    sub = logits[start:]
    lse = logsumexp(sub, axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(np.mean(lse[:, 0] - sub[rows, targets[start:]]))
    d = np.zeros_like(logits)
    p = np.exp(sub - lse)
    p[rows, targets[start:]] -= 1.0
    d[start:] = p / n
    return loss, d


def backward(params, config: NetConfig, cache: ForwardCache, dlogits) -> dict[str, np.ndarray]:
    """Exact gradient of a scalar loss given its gradient w.r.t. the logits."""
    R = config.residual_channels
    grads = {}
    dlogits = np.asarray(dlogits, dtype=params["embed"].dtype)
    grads["post2_w"] = cache.a2.T @ dlogits
    grads["post2_b"] = dlogits.sum(axis=0)
    dz1 = (dlogits @ params["post2_w"].T) * (cache.z1 > 0)
    a1 = np.maximum(cache.skip, 0)
    grads["post1_w"] = a1.T @ dz1
    grads["post1_b"] = dz1.sum(axis=0)
    dskip = (dz1 @ params["post1_w"].T) * (cache.skip > 0)
    dskip_b = dskip.sum(axis=0)

    T = len(cache.codes)
    dx = np.zeros((T, R), dtype=dskip.dtype)  # gradient w.r.t. the current layer's output x
    dz_all = np.empty((T, 2 * R * config.n_layers), dtype=dskip.dtype)
    dilations = config.dilations
    for i in range(config.n_layers - 1, -1, -1):
        d = dilations[i]
        x, f, g = cache.inputs[i], cache.f[i], cache.g[i]
        h = f * g
        pre = f"layer{i}."
        grads[pre + "skip_w"] = h.T @ dskip
        grads[pre + "skip_b"] = dskip_b.copy()
        dh = dskip @ params[pre + "skip_w"].T
        if i < config.n_layers - 1:
            grads[pre + "res_w"] = h.T @ dx
            grads[pre + "res_b"] = dx.sum(axis=0)
            dh += dx @ params[pre + "res_w"].T
        dz = np.empty((T, 2 * R), dtype=dh.dtype)
        dz[:, :R] = dh * g * (1.0 - f * f)
        dz[:, R:] = dh * f * g * (1.0 - g)
        dz_all[:, 2 * R * i:2 * R * (i + 1)] = dz
        x_prev = _shift(x, d)
        dw0 = x_prev.T @ dz
        dw1 = x.T @ dz
        grads[pre + "filter_w"] = np.stack([dw0[:, :R], dw1[:, :R]])
        grads[pre + "gate_w"] = np.stack([dw0[:, R:], dw1[:, R:]])
        db = dz.sum(axis=0)
        grads[pre + "filter_b"] = db[:R].copy()
        grads[pre + "gate_b"] = db[R:].copy()
        w0, w1, _ = _stacked(params, config, i)
        # residual path is the identity, so dx passes straight through
        dx = dx + dz @ w1.T
        back = dz @ w0.T
        if d < T:
            dx[:-d] += back[d:]
    dcond = cache.conditions.T @ dz_all
    for i in range(config.n_layers):
        grads[f"layer{i}.filter_cond"] = dcond[:, 2 * R * i:2 * R * i + R].copy()
        grads[f"layer{i}.gate_cond"] = dcond[:, 2 * R * i + R:2 * R * (i + 1)].copy()
    dembed = np.zeros_like(params["embed"])
    if T > 1:
        np.add.at(dembed, cache.codes[:-1], dx[1:])
    if cache.prev_code is not None and T:
        dembed[cache.prev_code] += dx[0]
    grads["embed"] = dembed
    return {name: grads[name] for name in params}


def loss_and_grad(params, config, codes, conditions, targets=None, start=0, prev_code=None):
    """Teacher-forced NLL over rows ``start:`` and its gradient."""
    targets = codes if targets is None else targets
    logits, cache = forward_teacher_forced(params, config, codes, conditions, prev_code)
    loss, dlogits = nll_grad(logits, np.asarray(targets), start)
    return loss, backward(params, config, cache, dlogits)


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, lr: float = 1e-4, **kw) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0, lr, **kw)


def adam_step(params, grads, state: AdamState):
    """Bias-corrected Adam; updates ``params`` and ``state`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)
    return params, state


# ---------------------------------------------------------------------------
# incremental sampling


@dataclass
class SamplerState:
    """Per-layer ring buffers of past layer inputs, shaped (dilation, batch, R)."""

    buffers: list
    t: int = 0

    def reset(self):
        for buf in self.buffers:
            buf.fill(0)
        self.t = 0


class IncrementalSampler:
    """Generates one step at a time for a batch of independent streams."""

    def __init__(self, params, config: NetConfig, batch: int = 1):
        check_params(params, config)
        self.config = config
        self.batch = batch
        dtype = params["embed"].dtype
        self.embed = params["embed"]
        self.stacked = [_stacked(params, config, i) for i in range(config.n_layers)]
        self.cond = _cond_matrix(params, config)
        self.skip_w = [params[f"layer{i}.skip_w"] for i in range(config.n_layers)]
        self.skip_b = sum(params[f"layer{i}.skip_b"] for i in range(config.n_layers)) \
            if config.n_layers else np.zeros(config.skip_channels, dtype=dtype)
        self.res = [(params[f"layer{i}.res_w"], params[f"layer{i}.res_b"])
                    for i in range(config.n_layers - 1)]
        self.post = (params["post1_w"], params["post1_b"], params["post2_w"], params["post2_b"])
        R = config.residual_channels
        self.state = SamplerState([np.zeros((d, batch, R), dtype=dtype) for d in config.dilations])

    def reset(self):
        self.state.reset()

    def logits(self, prev_code, condition_row) -> np.ndarray:
        """Advance one step; ``prev_code`` None means start of stream."""
        cfg, st = self.config, self.state
        R = cfg.residual_channels
        cond = np.asarray(condition_row, dtype=self.embed.dtype).reshape(-1, cfg.condition_dim)
        if cond.shape[0] not in (1, self.batch):
            raise ValueError("condition rows do not match the sampler batch")
        if prev_code is None:
            x = np.zeros((self.batch, R), dtype=self.embed.dtype)
        else:
            x = self.embed[np.broadcast_to(np.asarray(prev_code), (self.batch,))]
        cproj = cond @ self.cond
        skip = np.broadcast_to(self.skip_b, (self.batch, cfg.skip_channels)).copy()
        for i, d in enumerate(cfg.dilations):
            w0, w1, b = self.stacked[i]
            buf = st.buffers[i]
            slot = st.t % d
            z = buf[slot] @ w0 + x @ w1 + cproj[:, 2 * R * i:2 * R * (i + 1)] + b
            buf[slot] = x
            h = np.tanh(z[:, :R]) * _sigmoid(z[:, R:])
            skip += h @ self.skip_w[i]
            if i < cfg.n_layers - 1:
                rw, rb = self.res[i]
                x = x + h @ rw + rb
        p1w, p1b, p2w, p2b = self.post
        a2 = np.maximum(np.maximum(skip, 0) @ p1w + p1b, 0)
        st.t += 1
        return a2 @ p2w + p2b

    def sample(self, prev_code, condition_row, rng, mode: str = "random") -> np.ndarray:
        logits = self.logits(prev_code, condition_row)
        return choose_codes(logits, rng, mode)


def choose_codes(logits, rng, mode="random"):
    if mode == "greedy":
        return np.argmax(logits, axis=1)  # first maximum: lowest index wins ties
    if mode != "random":
        raise ValueError(f"unknown sampling mode {mode!r}")
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z.astype(np.float64))
    cdf = np.cumsum(p, axis=1)
    u = rng.random(len(logits)) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), logits.shape[1] - 1)


def incremental_sample(sampler: IncrementalSampler, condition_row, prev_code, rng,
                       mode: str = "random"):
    """One autoregressive step: next code(s) for the sampler's streams."""
    return sampler.sample(prev_code, condition_row, rng, mode)


def generate(params, config: NetConfig, conditions, rng, mode: str = "random") -> np.ndarray:
    """Autoregressively generate codes for (T, C) or (B, T, C) conditions."""
    conditions = np.asarray(conditions)
    single = conditions.ndim == 2
    cond = conditions[None] if single else conditions
    B, T, _ = cond.shape
    sampler = IncrementalSampler(params, config, batch=B)
    out = np.empty((B, T), dtype=np.int64)
    prev = None
    for t in range(T):
        prev = sampler.sample(prev, cond[:, t], rng, mode)
        out[:, t] = prev
    return out[0] if single else out
