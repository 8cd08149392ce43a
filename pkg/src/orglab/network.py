"""Recurrent network numerics, written from scratch on numpy.

A 2-layer LSTM with an output projection generates character sequences
autoregressively: the softmax over character outputs plus tanh-squashed
auxiliary outputs are fed back as the next step's input, alongside fresh
Gaussian noise inputs.  Training minimizes per-step cross-entropy against
a fixed target string via exact backpropagation through time, including
the gradient path through the continuous feedback, followed by global
gradient clipping and an Adam update.

Everything is float64 and strictly sequential, so identical seeds give
bit-identical rollouts, losses, gradients, and updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

N_LAYERS = 2


@dataclass(frozen=True)
class NetDims:
    """Network dimensions derived from a genome plus the alphabet size."""

    chars: int  # character outputs (= alphabet size)
    aux: int    # auxiliary outputs, fed back but loss-free
    noi: int    # noise inputs, fresh N(0,1) every step
    hid: int    # cells per LSTM layer

    def __post_init__(self) -> None:
        if self.chars < 2 or self.hid < 1 or self.aux < 0 or self.noi < 0:
            raise ValueError(f"illegal dims {self}")

    @property
    def in_dim(self) -> int:
        return self.chars + self.aux + self.noi

    @property
    def out_dim(self) -> int:
        return self.chars + self.aux

    @property
    def feedback_dim(self) -> int:
        return self.chars + self.aux


@dataclass
class LstmLayerParams:
    """One layer's weights: w packs [input block | recurrent block] per gate.

    Rows are the four gates stacked i, f, o, g (hid rows each); columns
    are the layer input followed by the previous hidden state.
    """

    w: np.ndarray  # (4*hid, input_dim + hid)
    b: np.ndarray  # (4*hid,)
    input_dim: int

    @property
    def input_weights(self) -> np.ndarray:
        return self.w[:, : self.input_dim]

    @property
    def recurrent_weights(self) -> np.ndarray:
        return self.w[:, self.input_dim:]


@dataclass
class NetworkParams:
    """All trainable parameters: two LSTM layers plus the output projection."""

    layer1: LstmLayerParams
    layer2: LstmLayerParams
    wy: np.ndarray  # (out_dim, hid)
    by: np.ndarray  # (out_dim,)

    def arrays(self):
        """Named parameter arrays in a fixed traversal order."""
        return (
            ("w1", self.layer1.w),
            ("b1", self.layer1.b),
            ("w2", self.layer2.w),
            ("b2", self.layer2.b),
            ("wy", self.wy),
            ("by", self.by),
        )

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            layer1=LstmLayerParams(self.layer1.w.copy(), self.layer1.b.copy(), self.layer1.input_dim),
            layer2=LstmLayerParams(self.layer2.w.copy(), self.layer2.b.copy(), self.layer2.input_dim),
            wy=self.wy.copy(),
            by=self.by.copy(),
        )

    @classmethod
    def zeros(cls, dims: NetDims) -> "NetworkParams":
        h = dims.hid
        return cls(
            layer1=LstmLayerParams(np.zeros((4 * h, dims.in_dim + h)), np.zeros(4 * h), dims.in_dim),
            layer2=LstmLayerParams(np.zeros((4 * h, h + h)), np.zeros(4 * h), h),
            wy=np.zeros((dims.out_dim, h)),
            by=np.zeros(dims.out_dim),
        )

    def n_params(self) -> int:
        return sum(a.size for _, a in self.arrays())

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.arrays()])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for _, a in self.arrays():
            a.ravel()[:] = flat[offset: offset + a.size]
            offset += a.size

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for _, a in self.arrays())


def count_params(dims: NetDims) -> int:
    h = dims.hid
    return (
        4 * h * (dims.in_dim + h) + 4 * h
        + 4 * h * (h + h) + 4 * h
        + dims.out_dim * h + dims.out_dim
    )


def init_params(dims: NetDims, rng: np.random.Generator) -> NetworkParams:
    """Glorot-uniform weights per matrix block; zero biases except forget = 1."""
    params = NetworkParams.zeros(dims)
    h = dims.hid
    for layer in (params.layer1, params.layer2):
        d = layer.input_dim
        s_in = np.sqrt(6.0 / (4 * h + d))
        s_rec = np.sqrt(6.0 / (4 * h + h))
        layer.w[:, :d] = rng.uniform(-s_in, s_in, (4 * h, d))
        layer.w[:, d:] = rng.uniform(-s_rec, s_rec, (4 * h, h))
        layer.b[h: 2 * h] = 1.0  # forget gate bias
    s_out = np.sqrt(6.0 / (dims.out_dim + h))
    params.wy[:] = rng.uniform(-s_out, s_out, (dims.out_dim, h))
    return params


@dataclass
class LstmState:
    """Recurrent state of both layers; zeroed at sequence start."""

    h1: np.ndarray
    c1: np.ndarray
    h2: np.ndarray
    c2: np.ndarray

    @classmethod
    def zeros(cls, dims: NetDims) -> "LstmState":
        h = dims.hid
        return cls(np.zeros(h), np.zeros(h), np.zeros(h), np.zeros(h))


def _gates(z: np.ndarray, hid: int) -> np.ndarray:
    """Activate stacked gate pre-activations in place: sigmoid i,f,o then tanh g."""
    expit(z[: 3 * hid], out=z[: 3 * hid])
    np.tanh(z[3 * hid:], out=z[3 * hid:])
    return z


def lstm_step(params: NetworkParams, state: LstmState, x: np.ndarray):
    """One forward step through both layers; returns (new state, output vector).

    The first `chars` output entries are raw character logits; the
    remaining aux entries pass through tanh.
    """
    h = params.layer1.b.size // 4
    xa1 = np.concatenate((x, state.h1))
    g1 = _gates(params.layer1.w @ xa1 + params.layer1.b, h)
    c1 = g1[h: 2 * h] * state.c1 + g1[:h] * g1[3 * h:]
    h1 = g1[2 * h: 3 * h] * np.tanh(c1)
    xa2 = np.concatenate((h1, state.h2))
    g2 = _gates(params.layer2.w @ xa2 + params.layer2.b, h)
    c2 = g2[h: 2 * h] * state.c2 + g2[:h] * g2[3 * h:]
    h2 = g2[2 * h: 3 * h] * np.tanh(c2)
    y = params.wy @ h2 + params.by
    return LstmState(h1, c1, h2, c2), y


def apply_aux_activation(y: np.ndarray, chars: int) -> np.ndarray:
    """Tanh-squash the aux slice of a raw output vector, in place."""
    np.tanh(y[chars:], out=y[chars:])
    return y


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


@dataclass
class RolloutCache:
    """Everything a rollout produced, sufficient for exact BPTT."""

    dims: NetDims
    feedback_mode: str
    chars: np.ndarray   # (L,) emitted character indices
    x: np.ndarray       # (L, in_dim) inputs
    xa1: np.ndarray     # (L, in_dim + hid) layer-1 input ++ previous h1
    xa2: np.ndarray     # (L, 2*hid) layer-2 input (h1) ++ previous h2
    g1: np.ndarray      # (L, 4*hid) activated gates, layer 1
    g2: np.ndarray      # (L, 4*hid)
    c1: np.ndarray      # (L, hid) cell states
    c2: np.ndarray
    tc1: np.ndarray     # (L, hid) tanh(cell)
    tc2: np.ndarray
    h2: np.ndarray      # (L, hid) layer-2 hidden states
    logits: np.ndarray  # (L, chars)
    probs: np.ndarray   # (L, chars)
    auxv: np.ndarray    # (L, aux) tanh auxiliary outputs

    def __len__(self) -> int:
        return self.chars.size

    @property
    def h1(self) -> np.ndarray:
        return self.xa2[:, : self.dims.hid]


def generate_sequence(
    params: NetworkParams,
    dims: NetDims,
    length: int,
    rng: np.random.Generator | None,
    mode: str = "sample",
    feedback_mode: str = "continuous",
    noise: np.ndarray | None = None,
    forced_chars: np.ndarray | None = None,
) -> RolloutCache:
    """Autoregressive rollout of `length` characters.

    The first input's feedback slice is all ones; afterwards it is the
    previous step's softmax probabilities and tanh aux values
    ("continuous"), or a one-hot of the emitted character ("onehot").
    Noise inputs are fresh standard-normal draws every step, in both
    training and evaluation rollouts, unless `noise` pins them.  Emitted
    characters are sampled from the softmax in "sample" mode and taken
    greedily (lowest index wins ties) in "argmax" mode; `forced_chars`
    overrides emission entirely, which keeps one-hot feedback rollouts
    reproducible for gradient checking.
    """
    if mode not in ("sample", "argmax"):
        raise ValueError(f"unknown mode {mode!r}")
    if feedback_mode not in ("continuous", "onehot"):
        raise ValueError(f"unknown feedback mode {feedback_mode!r}")
    if length < 1:
        raise ValueError("length must be >= 1")
    L, h, nc, na = length, dims.hid, dims.chars, dims.aux
    fb_dim = dims.feedback_dim
    if noise is None:
        if rng is None:
            raise ValueError("rng required when noise is not pinned")
        noise = rng.standard_normal((L, dims.noi))
    if mode == "sample" and forced_chars is None and rng is None:
        raise ValueError("rng required for sampled emission")

    cache = RolloutCache(
        dims=dims,
        feedback_mode=feedback_mode,
        chars=np.zeros(L, dtype=np.int64),
        x=np.zeros((L, dims.in_dim)),
        xa1=np.zeros((L, dims.in_dim + h)),
        xa2=np.zeros((L, 2 * h)),
        g1=np.zeros((L, 4 * h)),
        g2=np.zeros((L, 4 * h)),
        c1=np.zeros((L, h)),
        c2=np.zeros((L, h)),
        tc1=np.zeros((L, h)),
        tc2=np.zeros((L, h)),
        h2=np.zeros((L, h)),
        logits=np.zeros((L, nc)),
        probs=np.zeros((L, nc)),
        auxv=np.zeros((L, na)),
    )

    w1, b1 = params.layer1.w, params.layer1.b
    w2, b2 = params.layer2.w, params.layer2.b
    wy, by = params.wy, params.by
    in_dim = dims.in_dim
    h1 = np.zeros(h)
    c1 = np.zeros(h)
    h2 = np.zeros(h)
    c2 = np.zeros(h)
    fb = np.ones(fb_dim)

    for t in range(L):
        xt = cache.x[t]
        xt[:fb_dim] = fb
        xt[fb_dim:] = noise[t]

        xa1 = cache.xa1[t]
        xa1[:in_dim] = xt
        xa1[in_dim:] = h1
        g1 = _gates(w1 @ xa1 + b1, h)
        cache.g1[t] = g1
        c1 = g1[h: 2 * h] * c1 + g1[:h] * g1[3 * h:]
        cache.c1[t] = c1
        tc1 = np.tanh(c1)
        cache.tc1[t] = tc1
        h1 = g1[2 * h: 3 * h] * tc1

        xa2 = cache.xa2[t]
        xa2[:h] = h1
        xa2[h:] = h2
        g2 = _gates(w2 @ xa2 + b2, h)
        cache.g2[t] = g2
        c2 = g2[h: 2 * h] * c2 + g2[:h] * g2[3 * h:]
        cache.c2[t] = c2
        tc2 = np.tanh(c2)
        cache.tc2[t] = tc2
        h2 = g2[2 * h: 3 * h] * tc2
        cache.h2[t] = h2

        y = wy @ h2 + by
        logits = y[:nc]
        cache.logits[t] = logits
        probs = softmax(logits)
        cache.probs[t] = probs
        aux = np.tanh(y[nc:])
        cache.auxv[t] = aux

        if forced_chars is not None:
            char = int(forced_chars[t])
        elif mode == "argmax":
            char = int(np.argmax(logits))
        else:
            char = int(np.searchsorted(np.cumsum(probs), rng.random()))
            char = min(char, nc - 1)
        cache.chars[t] = char

        if feedback_mode == "continuous":
            fb = np.concatenate((probs, aux))
        else:
            onehot = np.zeros(nc)
            onehot[char] = 1.0
            fb = np.concatenate((onehot, aux))

    return cache


def sequence_loss(cache: RolloutCache, target: np.ndarray) -> float:
    """Summed per-step cross-entropy of the character softmax against target."""
    L = len(cache)
    target = np.asarray(target)
    if target.shape != (L,):
        raise ValueError(f"target shape {target.shape} != rollout length {L}")
    logits = cache.logits
    m = logits.max(axis=1)
    lse = m + np.log(np.exp(logits - m[:, None]).sum(axis=1))
    return float(np.sum(lse - logits[np.arange(L), target]))


def bptt(cache: RolloutCache, target: np.ndarray, params: NetworkParams) -> NetworkParams:
    """Exact gradient of sequence_loss w.r.t. every parameter.

    The gradient flows through the continuous feedback path (the step-t
    probabilities and aux values feed step t+1); noise inputs are
    constants and the emitted-character choice contributes nothing.  In
    one-hot feedback mode the character slice of the feedback is a
    constant, so only the aux slice carries gradient across steps.
    """
    dims = cache.dims
    L, h, nc, na = len(cache), dims.hid, dims.chars, dims.aux
    in_dim = dims.in_dim
    target = np.asarray(target)
    grads = NetworkParams.zeros(dims)
    w1, w2, wy = params.layer1.w, params.layer2.w, params.wy
    gw1, gb1 = grads.layer1.w, grads.layer1.b
    gw2, gb2 = grads.layer2.w, grads.layer2.b

    dh1_carry = np.zeros(h)
    dc1_carry = np.zeros(h)
    dh2_carry = np.zeros(h)
    dc2_carry = np.zeros(h)
    dfb = None  # gradient w.r.t. [probs_t, aux_t], arriving from step t+1

    for t in range(L - 1, -1, -1):
        probs = cache.probs[t]
        dlogits = probs.copy()
        dlogits[target[t]] -= 1.0
        daux_pre = np.zeros(na)
        if dfb is not None:
            if cache.feedback_mode == "continuous":
                dp = dfb[:nc]
                dlogits += probs * (dp - dp @ probs)
            if na:
                aux = cache.auxv[t]
                daux_pre = dfb[nc:] * (1.0 - aux * aux)
        dy = np.concatenate((dlogits, daux_pre))

        grads.by += dy
        grads.wy += np.outer(dy, cache.h2[t])
        dh2 = wy.T @ dy + dh2_carry

        # layer 2
        g2 = cache.g2[t]
        i2, f2, o2, gg2 = g2[:h], g2[h: 2 * h], g2[2 * h: 3 * h], g2[3 * h:]
        tc2 = cache.tc2[t]
        dc2 = dh2 * o2 * (1.0 - tc2 * tc2) + dc2_carry
        c2_prev = cache.c2[t - 1] if t > 0 else 0.0
        dz2 = np.concatenate((
            dc2 * gg2 * i2 * (1.0 - i2),
            dc2 * c2_prev * f2 * (1.0 - f2),
            dh2 * tc2 * o2 * (1.0 - o2),
            dc2 * i2 * (1.0 - gg2 * gg2),
        ))
        gw2 += np.outer(dz2, cache.xa2[t])
        gb2 += dz2
        dxa2 = w2.T @ dz2
        dc2_carry = dc2 * f2
        dh2_carry = dxa2[h:]
        dh1 = dxa2[:h] + dh1_carry

        # layer 1
        g1 = cache.g1[t]
        i1, f1, o1, gg1 = g1[:h], g1[h: 2 * h], g1[2 * h: 3 * h], g1[3 * h:]
        tc1 = cache.tc1[t]
        dc1 = dh1 * o1 * (1.0 - tc1 * tc1) + dc1_carry
        c1_prev = cache.c1[t - 1] if t > 0 else 0.0
        dz1 = np.concatenate((
            dc1 * gg1 * i1 * (1.0 - i1),
            dc1 * c1_prev * f1 * (1.0 - f1),
            dh1 * tc1 * o1 * (1.0 - o1),
            dc1 * i1 * (1.0 - gg1 * gg1),
        ))
        gw1 += np.outer(dz1, cache.xa1[t])
        gb1 += dz1
        dxa1 = w1.T @ dz1
        dc1_carry = dc1 * f1
        dh1_carry = dxa1[in_dim:]
        dfb = dxa1[: dims.feedback_dim]  # consumed by step t-1

    return grads


def global_norm(grads: NetworkParams) -> float:
    return float(np.sqrt(sum(float(np.dot(a.ravel(), a.ravel())) for _, a in grads.arrays())))


def clip_gradients(grads: NetworkParams, max_norm: float) -> NetworkParams:
    """Scale all entries down so the global L2 norm is at most max_norm."""
    if max_norm <= 0:
        raise ValueError("max_norm must be > 0")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        for _, a in grads.arrays():
            a *= scale
    return grads


@dataclass
class AdamState:
    """First/second moment accumulators and step counter."""

    m: NetworkParams
    v: NetworkParams
    t: int = 0

    @classmethod
    def zeros(cls, dims: NetDims) -> "AdamState":
        return cls(m=NetworkParams.zeros(dims), v=NetworkParams.zeros(dims), t=0)


def adam_step(
    params: NetworkParams,
    grads: NetworkParams,
    state: AdamState,
    lr: float,
) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update; mutates params and state in place."""
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for (_, p), (_, g), (_, m), (_, v) in zip(
        params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()
    ):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params, state


def rollout_loss(
    params: NetworkParams,
    dims: NetDims,
    target: np.ndarray,
    noise: np.ndarray,
    feedback_mode: str = "continuous",
    forced_chars: np.ndarray | None = None,
) -> float:
    """Loss of one rollout with pinned noise (and pinned emissions, if one-hot).

    A pure function of the parameters, used as the forward-only basis of
    finite-difference gradient checking.
    """
    cache = generate_sequence(
        params,
        dims,
        len(target),
        rng=None,
        mode="argmax",
        feedback_mode=feedback_mode,
        noise=noise,
        forced_chars=forced_chars,
    )
    return sequence_loss(cache, target)


def finite_difference_grad(
    params: NetworkParams,
    dims: NetDims,
    target: np.ndarray,
    noise: np.ndarray,
    feedback_mode: str = "continuous",
    forced_chars: np.ndarray | None = None,
    step: float = 1e-5,
) -> np.ndarray:
    """Central-difference gradient of rollout_loss over the flattened parameters.

    Touches only the forward pass, never bptt, so it is an independent
    oracle for the analytic gradient.
    """
    work = params.copy()
    flat = work.flatten()
    grad = np.zeros_like(flat)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        work.set_flat(flat)
        hi = rollout_loss(work, dims, target, noise, feedback_mode, forced_chars)
        flat[k] = orig - step
        work.set_flat(flat)
        lo = rollout_loss(work, dims, target, noise, feedback_mode, forced_chars)
        flat[k] = orig
        grad[k] = (hi - lo) / (2.0 * step)
    work.set_flat(flat)
    return grad
