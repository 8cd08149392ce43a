"""Jitted fast path for the training loop.

The reference implementation in network.py is the contract: readable,
tested against finite differences, and used everywhere correctness is
argued.  This module repeats the same arithmetic as numba-compiled
kernels over a flat parameter vector so that an organism epoch costs
well under a millisecond instead of several.  Population runs spend
essentially all their wall time here.

If numba is unavailable the wrappers fall back to the reference
implementation, which is slower but produces the same trajectories up
to floating-point summation order.

Flat layout (matches NetworkParams.flatten): w1, b1, w2, b2, wy, by.
"""

from __future__ import annotations

import numpy as np

from .network import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    AdamState,
    NetDims,
    NetworkParams,
    adam_step,
    bptt,
    clip_gradients,
    generate_sequence,
    sequence_loss,
)

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _epoch_kernel(theta, grad, chars_out, target, noise, u, nc, na, noi, h, onehot_fb):
    """One training epoch: sampled rollout, loss, and exact BPTT.

    Writes emitted characters to chars_out and the gradient to grad
    (both preallocated); returns the summed cross-entropy loss.
    """
    L = target.shape[0]
    in_dim = nc + na + noi
    d1 = in_dim + h
    out_dim = nc + na
    fb_dim = nc + na

    o = 0
    w1 = theta[o: o + 4 * h * d1].reshape(4 * h, d1)
    gw1 = grad[o: o + 4 * h * d1].reshape(4 * h, d1)
    o += 4 * h * d1
    b1 = theta[o: o + 4 * h]
    gb1 = grad[o: o + 4 * h]
    o += 4 * h
    w2 = theta[o: o + 4 * h * 2 * h].reshape(4 * h, 2 * h)
    gw2 = grad[o: o + 4 * h * 2 * h].reshape(4 * h, 2 * h)
    o += 4 * h * 2 * h
    b2 = theta[o: o + 4 * h]
    gb2 = grad[o: o + 4 * h]
    o += 4 * h
    wy = theta[o: o + out_dim * h].reshape(out_dim, h)
    gwy = grad[o: o + out_dim * h].reshape(out_dim, h)
    o += out_dim * h
    by = theta[o: o + out_dim]
    gby = grad[o: o + out_dim]

    grad[:] = 0.0

    xa1 = np.zeros((L, d1))
    xa2 = np.zeros((L, 2 * h))
    g1s = np.zeros((L, 4 * h))
    g2s = np.zeros((L, 4 * h))
    c1s = np.zeros((L, h))
    c2s = np.zeros((L, h))
    tc1s = np.zeros((L, h))
    tc2s = np.zeros((L, h))
    h2s = np.zeros((L, h))
    probs = np.zeros((L, nc))
    auxv = np.zeros((L, na))

    h1 = np.zeros(h)
    c1 = np.zeros(h)
    h2 = np.zeros(h)
    c2 = np.zeros(h)
    fb = np.ones(fb_dim)
    loss = 0.0

    for t in range(L):
        row1 = xa1[t]
        for j in range(fb_dim):
            row1[j] = fb[j]
        for j in range(noi):
            row1[fb_dim + j] = noise[t, j]
        for j in range(h):
            row1[in_dim + j] = h1[j]

        z1 = np.dot(w1, row1)
        for j in range(3 * h):
            z1[j] = 1.0 / (1.0 + np.exp(-(z1[j] + b1[j])))
        for j in range(3 * h, 4 * h):
            z1[j] = np.tanh(z1[j] + b1[j])
        g1s[t] = z1
        for j in range(h):
            c1[j] = z1[h + j] * c1[j] + z1[j] * z1[3 * h + j]
            c1s[t, j] = c1[j]
            tc1s[t, j] = np.tanh(c1[j])
            h1[j] = z1[2 * h + j] * tc1s[t, j]

        row2 = xa2[t]
        for j in range(h):
            row2[j] = h1[j]
            row2[h + j] = h2[j]
        z2 = np.dot(w2, row2)
        for j in range(3 * h):
            z2[j] = 1.0 / (1.0 + np.exp(-(z2[j] + b2[j])))
        for j in range(3 * h, 4 * h):
            z2[j] = np.tanh(z2[j] + b2[j])
        g2s[t] = z2
        for j in range(h):
            c2[j] = z2[h + j] * c2[j] + z2[j] * z2[3 * h + j]
            c2s[t, j] = c2[j]
            tc2s[t, j] = np.tanh(c2[j])
            h2[j] = z2[2 * h + j] * tc2s[t, j]
        h2s[t] = h2

        y = np.dot(wy, h2)
        mx = y[0] + by[0]
        for j in range(nc):
            y[j] += by[j]
            if y[j] > mx:
                mx = y[j]
        s = 0.0
        for j in range(nc):
            probs[t, j] = np.exp(y[j] - mx)
            s += probs[t, j]
        for j in range(nc):
            probs[t, j] /= s
        loss += mx + np.log(s) - y[target[t]]
        for j in range(na):
            auxv[t, j] = np.tanh(y[nc + j] + by[nc + j])

        char = nc - 1
        acc = 0.0
        for j in range(nc):
            acc += probs[t, j]
            if acc >= u[t]:
                char = j
                break
        chars_out[t] = char

        if onehot_fb:
            for j in range(nc):
                fb[j] = 0.0
            fb[char] = 1.0
        else:
            for j in range(nc):
                fb[j] = probs[t, j]
        for j in range(na):
            fb[nc + j] = auxv[t, j]

    w1t = np.ascontiguousarray(w1.T)
    w2t = np.ascontiguousarray(w2.T)
    wyt = np.ascontiguousarray(wy.T)

    dh1c = np.zeros(h)
    dc1c = np.zeros(h)
    dh2c = np.zeros(h)
    dc2c = np.zeros(h)
    dfb = np.zeros(fb_dim)
    dy = np.zeros(out_dim)
    dz1 = np.zeros(4 * h)
    dz2 = np.zeros(4 * h)

    for t in range(L - 1, -1, -1):
        for j in range(nc):
            dy[j] = probs[t, j]
        dy[target[t]] -= 1.0
        for j in range(na):
            dy[nc + j] = 0.0
        if t < L - 1:
            if not onehot_fb:
                dps = 0.0
                for j in range(nc):
                    dps += dfb[j] * probs[t, j]
                for j in range(nc):
                    dy[j] += probs[t, j] * (dfb[j] - dps)
            for j in range(na):
                a = auxv[t, j]
                dy[nc + j] = dfb[nc + j] * (1.0 - a * a)

        for r in range(out_dim):
            gby[r] += dy[r]
            d = dy[r]
            for col in range(h):
                gwy[r, col] += d * h2s[t, col]
        dh2 = np.dot(wyt, dy)
        for j in range(h):
            dh2[j] += dh2c[j]

        for j in range(h):
            i2 = g2s[t, j]
            f2 = g2s[t, h + j]
            o2 = g2s[t, 2 * h + j]
            gg2 = g2s[t, 3 * h + j]
            tc = tc2s[t, j]
            dc2 = dh2[j] * o2 * (1.0 - tc * tc) + dc2c[j]
            cprev = c2s[t - 1, j] if t > 0 else 0.0
            dz2[j] = dc2 * gg2 * i2 * (1.0 - i2)
            dz2[h + j] = dc2 * cprev * f2 * (1.0 - f2)
            dz2[2 * h + j] = dh2[j] * tc * o2 * (1.0 - o2)
            dz2[3 * h + j] = dc2 * i2 * (1.0 - gg2 * gg2)
            dc2c[j] = dc2 * f2
        for r in range(4 * h):
            d = dz2[r]
            gb2[r] += d
            for col in range(2 * h):
                gw2[r, col] += d * xa2[t, col]
        dxa2 = np.dot(w2t, dz2)
        for j in range(h):
            dh2c[j] = dxa2[h + j]

        for j in range(h):
            i1 = g1s[t, j]
            f1 = g1s[t, h + j]
            o1 = g1s[t, 2 * h + j]
            gg1 = g1s[t, 3 * h + j]
            tc = tc1s[t, j]
            dh1 = dxa2[j] + dh1c[j]
            dc1 = dh1 * o1 * (1.0 - tc * tc) + dc1c[j]
            cprev = c1s[t - 1, j] if t > 0 else 0.0
            dz1[j] = dc1 * gg1 * i1 * (1.0 - i1)
            dz1[h + j] = dc1 * cprev * f1 * (1.0 - f1)
            dz1[2 * h + j] = dh1 * tc * o1 * (1.0 - o1)
            dz1[3 * h + j] = dc1 * i1 * (1.0 - gg1 * gg1)
            dc1c[j] = dc1 * f1
        for r in range(4 * h):
            d = dz1[r]
            gb1[r] += d
            for col in range(d1):
                gw1[r, col] += d * xa1[t, col]
        dxa1 = np.dot(w1t, dz1)
        for j in range(h):
            dh1c[j] = dxa1[in_dim + j]
        for j in range(fb_dim):
            dfb[j] = dxa1[j]

    return loss


@njit(cache=True)
def _eval_kernel(theta, chars_out, noise, nc, na, noi, h, onehot_fb):
    """Greedy (argmax) rollout writing emitted characters to chars_out."""
    L = chars_out.shape[0]
    in_dim = nc + na + noi
    d1 = in_dim + h
    out_dim = nc + na
    fb_dim = nc + na

    o = 0
    w1 = theta[o: o + 4 * h * d1].reshape(4 * h, d1)
    o += 4 * h * d1
    b1 = theta[o: o + 4 * h]
    o += 4 * h
    w2 = theta[o: o + 4 * h * 2 * h].reshape(4 * h, 2 * h)
    o += 4 * h * 2 * h
    b2 = theta[o: o + 4 * h]
    o += 4 * h
    wy = theta[o: o + out_dim * h].reshape(out_dim, h)
    o += out_dim * h
    by = theta[o: o + out_dim]

    h1 = np.zeros(h)
    c1 = np.zeros(h)
    h2 = np.zeros(h)
    c2 = np.zeros(h)
    fb = np.ones(fb_dim)
    xa1 = np.zeros(d1)
    xa2 = np.zeros(2 * h)

    for t in range(L):
        for j in range(fb_dim):
            xa1[j] = fb[j]
        for j in range(noi):
            xa1[fb_dim + j] = noise[t, j]
        for j in range(h):
            xa1[in_dim + j] = h1[j]
        z1 = np.dot(w1, xa1)
        for j in range(3 * h):
            z1[j] = 1.0 / (1.0 + np.exp(-(z1[j] + b1[j])))
        for j in range(3 * h, 4 * h):
            z1[j] = np.tanh(z1[j] + b1[j])
        for j in range(h):
            c1[j] = z1[h + j] * c1[j] + z1[j] * z1[3 * h + j]
            h1[j] = z1[2 * h + j] * np.tanh(c1[j])

        for j in range(h):
            xa2[j] = h1[j]
            xa2[h + j] = h2[j]
        z2 = np.dot(w2, xa2)
        for j in range(3 * h):
            z2[j] = 1.0 / (1.0 + np.exp(-(z2[j] + b2[j])))
        for j in range(3 * h, 4 * h):
            z2[j] = np.tanh(z2[j] + b2[j])
        for j in range(h):
            c2[j] = z2[h + j] * c2[j] + z2[j] * z2[3 * h + j]
            h2[j] = z2[2 * h + j] * np.tanh(c2[j])

        y = np.dot(wy, h2)
        char = 0
        mx = y[0] + by[0]
        for j in range(nc):
            y[j] += by[j]
            if y[j] > mx:
                mx = y[j]
                char = j
        chars_out[t] = char

        s = 0.0
        for j in range(nc):
            fb[j] = np.exp(y[j] - mx)
            s += fb[j]
        if onehot_fb:
            for j in range(nc):
                fb[j] = 0.0
            fb[char] = 1.0
        else:
            for j in range(nc):
                fb[j] /= s
        for j in range(na):
            fb[nc + j] = np.tanh(y[nc + j] + by[nc + j])


@njit(cache=True)
def _clip_adam_kernel(theta, grad, m, v, t, lr, max_norm):
    """Global-norm clip followed by one bias-corrected Adam step, in place."""
    n = theta.shape[0]
    sq = 0.0
    for k in range(n):
        sq += grad[k] * grad[k]
    norm = np.sqrt(sq)
    if norm > max_norm:
        scale = max_norm / norm
        for k in range(n):
            grad[k] *= scale
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for k in range(n):
        g = grad[k]
        m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g
        v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g * g
        theta[k] -= lr * (m[k] / bc1) / (np.sqrt(v[k] / bc2) + ADAM_EPS)
    return norm


class TrainSession:
    """Mutable training state for one organism's network.

    Wraps the jitted kernels behind the same semantics as the reference
    loop: train_epoch does a sampled rollout + BPTT + clip + Adam, and
    eval_chars does a greedy rollout with fresh noise.  RNG consumption
    matches generate_sequence exactly (noise block first, then one
    uniform per step in training rollouts), so seeds mean the same thing
    on both paths.
    """

    def __init__(self, params: NetworkParams, dims: NetDims,
                 feedback_mode: str = "continuous") -> None:
        if feedback_mode not in ("continuous", "onehot"):
            raise ValueError(f"unknown feedback mode {feedback_mode!r}")
        self.dims = dims
        self.feedback_mode = feedback_mode
        self.onehot = feedback_mode == "onehot"
        self.theta = params.flatten()
        self.grad = np.zeros_like(self.theta)
        self.m = np.zeros_like(self.theta)
        self.v = np.zeros_like(self.theta)
        self.t = 0
        self._params = params  # reference-path fallback state
        self._adam = AdamState.zeros(dims)

    def params(self) -> NetworkParams:
        """Current parameters as a structured NetworkParams copy."""
        p = NetworkParams.zeros(self.dims)
        p.set_flat(self.theta)
        return p

    def train_epoch(self, rng: np.random.Generator, length: int,
                    target: np.ndarray, lr: float, max_norm: float) -> tuple[float, np.ndarray]:
        """One epoch; returns (loss, emitted character indices)."""
        d = self.dims
        noise = rng.standard_normal((length, d.noi))
        if HAVE_NUMBA:
            u = rng.random(length)
            chars = np.zeros(length, dtype=np.int64)
            loss = _epoch_kernel(self.theta, self.grad, chars, target, noise, u,
                                 d.chars, d.aux, d.noi, d.hid, self.onehot)
            if np.isfinite(loss):
                self.t += 1
                _clip_adam_kernel(self.theta, self.grad, self.m, self.v,
                                  self.t, lr, max_norm)
            return float(loss), chars
        cache = generate_sequence(self._params, d, length, rng, mode="sample",
                                  feedback_mode=self.feedback_mode, noise=noise)
        loss = sequence_loss(cache, target)
        if np.isfinite(loss):
            grads = bptt(cache, target, self._params)
            clip_gradients(grads, max_norm)
            adam_step(self._params, grads, self._adam, lr)
            self.theta = self._params.flatten()
        return loss, cache.chars

    def eval_chars(self, rng: np.random.Generator, length: int) -> np.ndarray:
        """Greedy rollout under fresh noise; returns character indices."""
        d = self.dims
        noise = rng.standard_normal((length, d.noi))
        if HAVE_NUMBA:
            chars = np.zeros(length, dtype=np.int64)
            _eval_kernel(self.theta, chars, noise, d.chars, d.aux, d.noi,
                         d.hid, self.onehot)
            return chars
        cache = generate_sequence(self._params, d, length, rng=None, mode="argmax",
                                  feedback_mode=self.feedback_mode, noise=noise)
        return cache.chars
