"""Loading and fitting of either density estimator by name."""

from __future__ import annotations

import numpy as np

from .core import Dataset, ValidationError
from .kde import KdeModel, default_grid, fit_kde
from .nf import FlowModel, TrainConfig, train_flow


def fit_estimator(name: str, data: Dataset, seed: int = 0, grid_size: int = 40,
                  train: TrainConfig | None = None):
    if name == "kde":
        return fit_kde(data, default_grid(grid_size))
    if name == "nf":
        cfg = train if train is not None else TrainConfig(seed=seed)
        return train_flow(data, cfg)
    raise ValidationError(f"unknown estimator {name!r}")


def load_model(path):
    try:
        f = np.load(path, allow_pickle=False)
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as exc:
        raise ValidationError(f"{path}: not a saved model ({exc})") from exc
    if not hasattr(f, "files") or "kind" not in f.files:
        raise ValidationError(f"{path}: not a saved model")
    with f:
        kind = str(f["kind"])
        if kind == "kde":
            return KdeModel.from_npz(f)
        if kind == "nf":
            return FlowModel.from_npz(f)
    raise ValidationError(f"{path}: unknown model kind {kind!r}")
