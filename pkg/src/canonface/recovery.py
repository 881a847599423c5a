"""Canonical-view recovery: the image-to-image regression network.

The architecture is fixed: a 64x64 grayscale input passes through three
locally-connected 5x5/32-channel stages (2x2 max pools after the first
two), dropout, and a linear fully-connected head producing the 64x64
reconstruction. Training pairs every image of an identity with that
identity's selected canonical image and runs minibatch SGD with momentum
on summed-per-sample squared error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint, dataio, frontality, net
from ._kernels import sgd_momentum
from .errors import DataError, NumericalError, TrainingDivergedError

SIDE = 64

LOSS_LOG_HEADER = ("epoch", "mean_loss")


def recovery_spec(dropout_rate: float = 0.5) -> net.NetworkSpec:
    """The fixed recovery architecture; only the dropout rate varies."""
    return net.NetworkSpec(
        (1, SIDE, SIDE),
        (
            net.LocalConv(k=5, out_channels=32, padding=net.PADDING_SAME),
            net.Relu(),
            net.MaxPool(2),
            net.LocalConv(k=5, out_channels=32, padding=net.PADDING_SAME),
            net.Relu(),
            net.MaxPool(2),
            net.LocalConv(k=5, out_channels=32, padding=net.PADDING_SAME),
            net.Relu(),
            net.Dropout(dropout_rate),
            net.Dense(SIDE * SIDE),
        ),
    )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    minibatch_size: int = 16
    epochs: int = 300
    rng_seed: int = 0
    dropout_rate: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise DataError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise DataError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.minibatch_size < 1:
            raise DataError(f"minibatch_size must be >= 1, got {self.minibatch_size}")
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise DataError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


class TrainingSet:
    """(input, target, identity_id) triples, stored as stacked arrays."""

    def __init__(self, inputs: np.ndarray, targets: np.ndarray,
                 identity_ids: Sequence[str]):
        inputs = np.asarray(inputs, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        if inputs.shape != targets.shape or inputs.ndim != 3 \
                or inputs.shape[1:] != (SIDE, SIDE):
            raise DataError(
                f"training set needs matching (N, {SIDE}, {SIDE}) stacks, "
                f"got {inputs.shape} and {targets.shape}"
            )
        if len(identity_ids) != inputs.shape[0]:
            raise DataError("one identity_id per pair required")
        if inputs.shape[0] == 0:
            raise DataError("training set is empty")
        self.inputs = inputs
        self.targets = targets
        self.identity_ids = tuple(identity_ids)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def __iter__(self) -> Iterator[Tuple[np.ndarray, np.ndarray, str]]:
        for i in range(len(self)):
            yield self.inputs[i], self.targets[i], self.identity_ids[i]


def build_training_set(manifest: dataio.Manifest,
                       cfg: frontality.FrontalityConfig) -> TrainingSet:
    """Pair every image with its identity's selected canonical image."""
    if len(manifest) == 0:
        raise DataError("empty manifest")
    by_identity: Dict[str, List[Tuple[str, np.ndarray]]] = {}
    for entry in manifest.entries:
        img = dataio.normalize(dataio.load_image(entry.image_path))
        if img.shape != (SIDE, SIDE):
            raise DataError(
                f"{entry.image_path}: expected {SIDE}x{SIDE}, got "
                f"{img.shape[0]}x{img.shape[1]}"
            )
        by_identity.setdefault(entry.identity_id, []).append(
            (entry.image_path, img)
        )
    inputs, targets, ids = [], [], []
    for identity_id, images in by_identity.items():
        canonical_id = frontality.select_canonical(images, cfg)
        canonical = dict(images)[canonical_id]
        for _, img in images:
            inputs.append(img)
            targets.append(canonical)
            ids.append(identity_id)
    return TrainingSet(np.stack(inputs), np.stack(targets), ids)


def _minibatches(n: int, size: int, perm: np.ndarray) -> Iterator[np.ndarray]:
    for start in range(0, n, size):
        yield perm[start : start + size]


def train_recovery(
    tset: TrainingSet,
    tcfg: TrainConfig,
    checkpoint_path=None,
    checkpoint_every: Optional[int] = None,
) -> Tuple[net.Network, List[Tuple[int, float]]]:
    """SGD with momentum; returns the trained network and loss log.

    The log holds (epoch, mean per-sample summed squared error) rows,
    epochs 1-based. The per-sample loss is summed over pixels and the
    SGD step averages it over the minibatch. One seeded generator drives
    the per-epoch shuffle and dropout, so runs are reproducible.

    The output bias starts at the mean target image. With the loss summed
    over 4096 pixels, fitting that mean through the weights floods the
    early steps with large one-signed gradients that drive the conv
    biases far negative and stall the ReLUs; starting from the mean makes
    the first residuals zero-centered and keeps the stack alive.
    """
    network = net.Network(recovery_spec(tcfg.dropout_rate),
                          seed=tcfg.rng_seed, dtype=np.float32)
    rng = np.random.default_rng(tcfg.rng_seed)
    x_all = tset.inputs[:, None, :, :].astype(np.float32)
    t_all = tset.targets.reshape(len(tset), -1).astype(np.float32)
    network.layers[-1].b[...] = t_all.mean(axis=0)
    velocities = [np.zeros_like(w) for _, w, _ in network.param_items()]
    n = len(tset)
    log: List[Tuple[int, float]] = []
    for epoch in range(1, tcfg.epochs + 1):
        perm = rng.permutation(n)
        loss_sum = 0.0
        for idx in _minibatches(n, tcfg.minibatch_size, perm):
            out = network.forward(x_all[idx], mode=net.TRAIN, rng=rng)
            diff = out - t_all[idx]
            d64 = diff.astype(np.float64)
            loss_sum += float(np.sum(d64 * d64))
            network.backward(diff * (2.0 / len(idx)))
            for (_, w, g), vel in zip(network.param_items(), velocities):
                sgd_momentum(w.ravel(), vel.ravel(), g.ravel(),
                             tcfg.momentum, tcfg.learning_rate)
        mean_loss = loss_sum / n
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(
                f"training loss became non-finite at epoch {epoch}"
            )
        log.append((epoch, mean_loss))
        if checkpoint_path is not None and checkpoint_every \
                and epoch % checkpoint_every == 0:
            checkpoint.save_network(checkpoint_path, network)
    if checkpoint_path is not None:
        checkpoint.save_network(checkpoint_path, network)
    return network, log


def recover(network: net.Network, img: np.ndarray) -> np.ndarray:
    """Eval-mode reconstruction of one 64x64 image, clamped to [0, 1]."""
    img = dataio.as_image(img)
    if img.shape != (SIDE, SIDE):
        raise DataError(f"expected {SIDE}x{SIDE} input, got {img.shape}")
    out = network.forward_one(img[None, :, :].astype(network.dtype))
    if not np.all(np.isfinite(out)):
        raise NumericalError("recovered image contains non-finite values")
    return np.clip(out.astype(np.float64).reshape(SIDE, SIDE), 0.0, 1.0)


def evaluate_rmse(network: net.Network, tset: TrainingSet,
                  minibatch_size: int = 16) -> float:
    """Root mean squared pixel error of eval-mode outputs over a set."""
    x_all = tset.inputs[:, None, :, :].astype(network.dtype)
    t_all = tset.targets.reshape(len(tset), -1)
    sq_sum = 0.0
    for start in range(0, len(tset), minibatch_size):
        out = network.forward(x_all[start : start + minibatch_size])
        diff = out.astype(np.float64) - t_all[start : start + minibatch_size]
        sq_sum += float(np.sum(diff * diff))
    return float(np.sqrt(sq_sum / t_all.size))
