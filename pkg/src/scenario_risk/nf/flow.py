"""Masked autoregressive flow density model."""

from __future__ import annotations

import hashlib
import json

import numpy as np

from ..core import LOG_2PI, NumericalError, Standardization, ValidationError, as_points
from .layers import FlowBatchNorm, MafTransform, MaskedDenseLayer, PermutationLayer

NUM_COUPLINGS = 4


class FlowModel:
    """Composition of coupling layers (MAF, batch norm, permutation) over N(0, I).

    ``forward`` runs data -> base in standardized space. ``log_density`` and
    ``sample`` work in original units.
    """

    def __init__(self, couplings, standardization: Standardization, meta=None):
        self.couplings = list(couplings)
        self.standardization = standardization
        self.meta = dict(meta or {})
        self.d = standardization.d

    @classmethod
    def initialize(cls, d: int, rng: np.random.Generator, standardization=None,
                   num_couplings: int = NUM_COUPLINGS, dropout: float = 0.2,
                   momentum: float = 0.1, eps: float = 1e-5, meta=None) -> "FlowModel":
        couplings = [
            (MafTransform(d, rng, dropout=dropout),
             FlowBatchNorm(d, momentum=momentum, eps=eps),
             PermutationLayer.random(d, rng))
            for _ in range(num_couplings)
        ]
        return cls(couplings, standardization or Standardization.identity(d), meta)

    # parameters -----------------------------------------------------------

    def params(self):
        out = []
        for maf, bn, _ in self.couplings:
            out.extend(maf.params())
            out.extend(bn.params())
        return out

    def buffers(self):
        return [b for _, bn, _ in self.couplings for b in bn.buffers()]

    def get_theta(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_theta(self, theta) -> None:
        theta = np.asarray(theta, dtype=float)
        pos = 0
        for p in self.params():
            p[...] = theta[pos:pos + p.size].reshape(p.shape)
            pos += p.size
        if pos != theta.size:
            raise ValidationError("parameter vector has the wrong length")

    def state(self):
        return [a.copy() for a in self.params() + self.buffers()]

    def load_state(self, state) -> None:
        for dst, src in zip(self.params() + self.buffers(), state):
            dst[...] = src

    # evaluation -------------------------------------------------------------

    def draw_dropout_masks(self, rng, batch: int):
        return [maf.draw_dropout_masks(rng, batch) for maf, _, _ in self.couplings]

    def forward(self, x, training=False, drop_masks=None):
        """Map standardized data to base space; returns ``(z, logdet, caches)``."""
        logdet = np.zeros(x.shape[0])
        caches = []
        h = x
        for k, (maf, bn, perm) in enumerate(self.couplings):
            masks = drop_masks[k] if (training and drop_masks is not None) else None
            h, ld1, c1 = maf.forward(h, masks)
            h, ld2, c2 = bn.forward(h, training)
            h, _ = perm.forward(h)
            logdet = logdet + ld1 + ld2
            caches.append((c1, c2))
            if not training and not np.all(np.isfinite(h)):
                raise NumericalError(f"non-finite values after coupling layer {k}")
        return h, logdet, caches

    def inverse(self, z):
        x = z
        for maf, bn, perm in reversed(self.couplings):
            x = perm.inverse(x)
            x = bn.inverse(x)
            x = maf.inverse(x)
        return x

    @staticmethod
    def base_log_density(z):
        return -0.5 * np.sum(z * z, axis=1) - 0.5 * z.shape[1] * LOG_2PI

    def log_density_standardized(self, z):
        u, logdet, _ = self.forward(as_points(z, self.d))
        out = self.base_log_density(u) + logdet
        if not np.all(np.isfinite(out)):
            raise NumericalError("non-finite flow log-density")
        return out

    def log_density(self, x) -> np.ndarray:
        x = as_points(x, self.d)
        z = self.standardization.apply(x)
        return self.log_density_standardized(z) - self.standardization.log_scale_sum

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if n < 1:
            raise ValidationError("sample size must be positive")
        z = rng.standard_normal((n, self.d))
        x = self.inverse(z)
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite flow samples")
        return self.standardization.invert(x)

    # training ---------------------------------------------------------------

    def loss_and_grad(self, x, drop_masks=None):
        """Mean negative log-likelihood of a standardized batch and its gradient.

        Batch norm uses the batch statistics, and gradients flow through them.
        """
        n = x.shape[0]
        z, logdet, caches = self.forward(x, training=True, drop_masks=drop_masks)
        loss = -np.mean(self.base_log_density(z) + logdet)
        g = z / n
        gld = np.full(n, -1.0 / n)
        grads_rev = []
        for (maf, bn, perm), (c1, c2) in zip(reversed(self.couplings), reversed(caches)):
            g = perm.backward(g)
            g, gbn = bn.backward(c2, g, gld)
            g, gmaf = maf.backward(c1, g, gld)
            grads_rev.append(gmaf + gbn)
        grads = [g for layer in reversed(grads_rev) for g in layer]
        return float(loss), grads, caches

    def update_running_stats(self, caches) -> None:
        for (_, bn, _), (_, c2) in zip(self.couplings, caches):
            bn.update_running(c2)

    # persistence ------------------------------------------------------------

    def _arrays(self):
        arrays = {"std_mean": self.standardization.mean, "std_scale": self.standardization.scale}
        for k, (maf, bn, perm) in enumerate(self.couplings):
            for j, layer in enumerate(maf.dense_layers()):
                for name in ("weight", "bias", "mask", "input_degrees", "output_degrees"):
                    arrays[f"c{k}_maf{j}_{name}"] = getattr(layer, name)
            arrays[f"c{k}_bn_log_gamma"] = bn.log_gamma
            arrays[f"c{k}_bn_beta"] = bn.beta
            arrays[f"c{k}_bn_running_mean"] = bn.running_mean
            arrays[f"c{k}_bn_running_var"] = bn.running_var
            arrays[f"c{k}_perm"] = perm.permutation
        return arrays

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, arr in sorted(self._arrays().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return "nf-" + h.hexdigest()[:16]

    def save(self, path) -> None:
        maf0, bn0, _ = self.couplings[0]
        header = {
            "kind": "nf",
            "d": self.d,
            "num_couplings": len(self.couplings),
            "hidden": maf0.hidden,
            "num_blocks": len(maf0.blocks),
            "dropout": maf0.dropout,
            "momentum": bn0.momentum,
            "eps": bn0.eps,
            "meta": self.meta,
        }
        np.savez(path, kind=np.array("nf"), header=np.array(json.dumps(header, sort_keys=True)),
                 **self._arrays())

    @classmethod
    def from_npz(cls, f) -> "FlowModel":
        header = json.loads(str(f["header"]))
        d = header["d"]
        rng = np.random.default_rng(0)
        model = cls.initialize(d, rng, Standardization(f["std_mean"], f["std_scale"]),
                               num_couplings=header["num_couplings"], dropout=header["dropout"],
                               momentum=header["momentum"], eps=header["eps"],
                               meta=header["meta"])
        for k, (maf, bn, _) in enumerate(model.couplings):
            layers = list(maf.dense_layers())
            for j, layer in enumerate(layers):
                for name in ("weight", "bias", "mask", "input_degrees", "output_degrees"):
                    setattr(layer, name, np.array(f[f"c{k}_maf{j}_{name}"]))
            bn.log_gamma[...] = f[f"c{k}_bn_log_gamma"]
            bn.beta[...] = f[f"c{k}_bn_beta"]
            bn.running_mean[...] = f[f"c{k}_bn_running_mean"]
            bn.running_var[...] = f[f"c{k}_bn_running_var"]
            perm = PermutationLayer(f[f"c{k}_perm"])
            model.couplings[k] = (maf, bn, perm)
        return model


def flow_log_density(model: FlowModel, x) -> np.ndarray:
    return model.log_density(x)


def flow_sample(model: FlowModel, rng: np.random.Generator, n: int) -> np.ndarray:
    return model.sample(rng, n)


def flow_gradient(model: FlowModel, batch, drop_masks=None):
    """Gradient of the mean NLL of a standardized batch, in ``params()`` order."""
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    if batch.shape[0] == 0:
        raise ValidationError("batch must be non-empty")
    _, grads, _ = model.loss_and_grad(batch, drop_masks)
    return grads


__all__ = ["FlowModel", "MaskedDenseLayer", "flow_gradient", "flow_log_density", "flow_sample"]
