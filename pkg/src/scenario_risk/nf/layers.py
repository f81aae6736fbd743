"""Flow layers with hand-written reverse-mode gradients.

Every layer maps data towards the base distribution (``forward``) and returns
the per-sample log|det| of that map. ``backward`` takes the gradient of the
loss w.r.t. the layer output and the per-sample coefficient of the layer's
log|det| in the loss, and returns the input gradient plus parameter gradients
in ``params()`` order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ALPHA_CLAMP = 7.0


def hidden_degrees(width: int, d: int) -> np.ndarray:
    """Round-robin degrees for hidden units, as in MADE."""
    hi = max(1, d - 1)
    lo = min(1, d - 1)
    return np.arange(width) % hi + lo


@dataclass
class MaskedDenseLayer:
    weight: np.ndarray
    bias: np.ndarray
    mask: np.ndarray
    input_degrees: np.ndarray
    output_degrees: np.ndarray

    @classmethod
    def create(cls, in_deg, out_deg, rng, *, strict=False, init_scale=None):
        in_deg = np.asarray(in_deg)
        out_deg = np.asarray(out_deg)
        if strict:
            mask = (out_deg[:, None] > in_deg[None, :]).astype(float)
        else:
            mask = (out_deg[:, None] >= in_deg[None, :]).astype(float)
        bound = init_scale if init_scale is not None else 1.0 / np.sqrt(in_deg.size)
        w = rng.uniform(-bound, bound, size=mask.shape)
        b = rng.uniform(-bound, bound, size=out_deg.size)
        return cls(w, b, mask, in_deg, out_deg)

    @property
    def effective_weight(self) -> np.ndarray:
        return self.weight * self.mask

    def params(self):
        return [self.weight, self.bias]

    def forward(self, x):
        return x @ self.effective_weight.T + self.bias

    def backward(self, x, g):
        gw = (g.T @ x) * self.mask
        return g @ self.effective_weight, gw, g.sum(axis=0)


class MafTransform:
    """Masked affine autoregressive map ``z = (x - mu(x)) * exp(-alpha(x))``.

    The conditioner is a MADE-style residual net: a masked input layer, two
    pre-activation residual blocks of two masked layers each, and a strictly
    masked output layer producing ``(mu, alpha)``.
    """

    def __init__(self, d: int, rng: np.random.Generator, hidden: int | None = None,
                 dropout: float = 0.2, num_blocks: int = 2):
        self.d = d
        self.hidden = hidden if hidden is not None else 2 * d
        self.dropout = dropout
        in_deg = np.arange(1, d + 1)
        hid_deg = hidden_degrees(self.hidden, d)
        self.inp = MaskedDenseLayer.create(in_deg, hid_deg, rng)
        self.blocks = []
        for _ in range(num_blocks):
            first = MaskedDenseLayer.create(hid_deg, hid_deg, rng)
            # Near-zero second layer: every block starts close to the identity.
            second = MaskedDenseLayer.create(hid_deg, hid_deg, rng, init_scale=1e-3)
            self.blocks.append((first, second))
        out_deg = np.concatenate([in_deg, in_deg])
        self.out = MaskedDenseLayer.create(hid_deg, out_deg, rng, strict=True)

    def dense_layers(self):
        yield self.inp
        for first, second in self.blocks:
            yield first
            yield second
        yield self.out

    def params(self):
        return [p for layer in self.dense_layers() for p in layer.params()]

    def draw_dropout_masks(self, rng, batch: int):
        if self.dropout <= 0:
            return None
        keep = 1.0 - self.dropout
        return [(rng.random((batch, self.hidden)) < keep) / keep for _ in self.blocks]

    def conditioner(self, x, drop_masks=None):
        h = self.inp.forward(x)
        trace = []
        for k, (first, second) in enumerate(self.blocks):
            a1 = np.maximum(h, 0.0)
            t1 = first.forward(a1)
            a2 = np.maximum(t1, 0.0)
            if drop_masks is not None:
                a2 = a2 * drop_masks[k]
            t2 = second.forward(a2)
            trace.append((h, a1, t1, a2))
            h = h + t2
        out = self.out.forward(h)
        return out[:, :self.d], out[:, self.d:], (trace, h)

    def forward(self, x, drop_masks=None):
        mu, raw, (trace, h) = self.conditioner(x, drop_masks)
        alpha = np.clip(raw, -ALPHA_CLAMP, ALPHA_CLAMP)
        z = (x - mu) * np.exp(-alpha)
        cache = (x, raw, alpha, z, trace, h, drop_masks)
        return z, -alpha.sum(axis=1), cache

    def backward(self, cache, gz, gld):
        x, raw, alpha, z, trace, h, drop_masks = cache
        e = np.exp(-alpha)
        gx = gz * e
        galpha = -gz * z - gld[:, None]
        graw = galpha * ((raw > -ALPHA_CLAMP) & (raw < ALPHA_CLAMP))
        gout = np.concatenate([-gz * e, graw], axis=1)
        gh, gwo, gbo = self.out.backward(h, gout)
        block_grads = []
        for k in reversed(range(len(self.blocks))):
            first, second = self.blocks[k]
            h_in, a1, t1, a2 = trace[k]
            ga2, gw2, gb2 = second.backward(a2, gh)
            if drop_masks is not None:
                ga2 = ga2 * drop_masks[k]
            gt1 = ga2 * (t1 > 0)
            ga1, gw1, gb1 = first.backward(a1, gt1)
            gh = gh + ga1 * (h_in > 0)
            block_grads.append([gw1, gb1, gw2, gb2])
        gxi, gwi, gbi = self.inp.backward(x, gh)
        grads = [gwi, gbi]
        for g in reversed(block_grads):
            grads.extend(g)
        grads.extend([gwo, gbo])
        return gx + gxi, grads

    def inverse(self, z):
        """Sequential inversion, one coordinate per conditioner pass."""
        x = np.zeros_like(z)
        for i in range(self.d):
            mu, raw, _ = self.conditioner(x)
            alpha = np.clip(raw[:, i], -ALPHA_CLAMP, ALPHA_CLAMP)
            x[:, i] = z[:, i] * np.exp(alpha) + mu[:, i]
        return x


class FlowBatchNorm:
    """Batch normalization used as an invertible flow layer.

    The scale is stored as ``log_gamma`` so it can never reach zero.
    """

    def __init__(self, d: int, momentum: float = 0.1, eps: float = 1e-5):
        self.d = d
        self.momentum = momentum
        self.eps = eps
        self.log_gamma = np.zeros(d)
        self.beta = np.zeros(d)
        self.running_mean = np.zeros(d)
        self.running_var = np.ones(d)

    def params(self):
        return [self.log_gamma, self.beta]

    def buffers(self):
        return [self.running_mean, self.running_var]

    def forward(self, u, training=False):
        if training:
            mean = u.mean(axis=0)
            var = u.var(axis=0)
        else:
            mean, var = self.running_mean, self.running_var
        std = np.sqrt(var + self.eps)
        xhat = (u - mean) / std
        gamma = np.exp(self.log_gamma)
        y = gamma * xhat + self.beta
        ld = np.sum(self.log_gamma - 0.5 * np.log(var + self.eps))
        return y, np.full(u.shape[0], ld), (u, mean, var, std, xhat, training)

    def backward(self, cache, gy, gld):
        u, mean, var, std, xhat, training = cache
        gamma = np.exp(self.log_gamma)
        gbeta = gy.sum(axis=0)
        glog_gamma = (gy * xhat).sum(axis=0) * gamma + gld.sum()
        gxhat = gy * gamma
        if not training:
            return gxhat / std, [glog_gamma, gbeta]
        n = u.shape[0]
        centered = u - mean
        gvar = (-0.5 * np.sum(gxhat * centered, axis=0) / std**3
                - 0.5 * gld.sum() / (var + self.eps))
        gmean = -np.sum(gxhat, axis=0) / std - 2.0 * gvar * centered.mean(axis=0)
        gu = gxhat / std + gvar * 2.0 * centered / n + gmean / n
        return gu, [glog_gamma, gbeta]

    def update_running(self, cache):
        _, mean, var, *_ = cache
        m = self.momentum
        self.running_mean[:] = (1.0 - m) * self.running_mean + m * mean
        self.running_var[:] = (1.0 - m) * self.running_var + m * var

    def inverse(self, y):
        gamma = np.exp(self.log_gamma)
        return (y - self.beta) / gamma * np.sqrt(self.running_var + self.eps) + self.running_mean


class PermutationLayer:
    def __init__(self, permutation):
        self.permutation = np.asarray(permutation, dtype=int)
        self.inverse_permutation = np.argsort(self.permutation)

    @classmethod
    def random(cls, d: int, rng) -> "PermutationLayer":
        return cls(rng.permutation(d))

    def params(self):
        return []

    def forward(self, u):
        return u[:, self.permutation], np.zeros(u.shape[0])

    def backward(self, gz):
        return gz[:, self.inverse_permutation]

    def inverse(self, z):
        return z[:, self.inverse_permutation]
