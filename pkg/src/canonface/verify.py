"""Pair verification: five component sub-networks, features, PCA + SVM.

A verification pair is two 64x64 faces. Fixed-size crops (whole face,
forehead, eye band, nose, mouth) are taken around landmark-derived
anchors; each component's two crops enter a small shared-weight conv
network as a 2-channel stack; the five flattened outputs concatenate
into a feature vector feeding a logistic head trained with binary
cross-entropy. For the downstream classifier the same features go
through PCA and a linear SVM trained by subgradient descent on the
L2-regularized hinge loss.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint, dataio, linalg, net
from ._kernels import sgd_momentum
from .dataio import LEFT_EYE, MOUTH_LEFT, MOUTH_RIGHT, NOSE_TIP, RIGHT_EYE
from .errors import DataError, TrainingDivergedError
from .recovery import TrainConfig

SIDE = 64

# component name -> (height, width), cropped around landmark anchors
COMPONENT_SIZES: Dict[str, Tuple[int, int]] = {
    "whole": (64, 64),
    "forehead": (22, 64),
    "eye": (24, 64),
    "nose": (28, 30),
    "mouth": (20, 56),
}
COMPONENT_ORDER = tuple(COMPONENT_SIZES)

SAME = "same"
DIFFERENT = "different"


@dataclass(frozen=True)
class ComponentCrops:
    whole: np.ndarray
    forehead: np.ndarray
    eye: np.ndarray
    nose: np.ndarray
    mouth: np.ndarray

    def __post_init__(self):
        for name, (h, w) in COMPONENT_SIZES.items():
            crop = np.asarray(getattr(self, name), dtype=np.float64)
            if crop.shape != (h, w):
                raise DataError(
                    f"{name} crop must be {h}x{w}, got {crop.shape}"
                )
            object.__setattr__(self, name, crop)


@dataclass(frozen=True)
class VerificationPair:
    crops_a: ComponentCrops
    crops_b: ComponentCrops
    label: int  # 1 same identity, 0 different

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")


def _window(img: np.ndarray, cy: float, cx: float, h: int, w: int) -> np.ndarray:
    """h x w crop centered near (cy, cx), shifted inward at the borders."""
    top = min(max(int(round(cy - h / 2.0)), 0), img.shape[0] - h)
    left = min(max(int(round(cx - w / 2.0)), 0), img.shape[1] - w)
    return img[top : top + h, left : left + w]


def crop_components(img: np.ndarray, landmarks: np.ndarray) -> ComponentCrops:
    """Fixed-size component crops around landmark-derived anchors."""
    img = dataio.as_image(img)
    if img.shape != (SIDE, SIDE):
        raise DataError(f"expected {SIDE}x{SIDE} image, got {img.shape}")
    if landmarks is None:
        raise DataError("landmarks required for component crops")
    lms = np.asarray(landmarks, dtype=np.float64)
    if lms.shape != (5, 2):
        raise DataError(f"landmarks must be (5, 2), got {lms.shape}")
    if not np.all(np.isfinite(lms)):
        raise DataError("landmarks contain non-finite coordinates")
    if np.any(lms < 0) or np.any(lms[:, 0] > SIDE - 1) or np.any(lms[:, 1] > SIDE - 1):
        raise DataError("landmarks out of image bounds")

    eye_mid = 0.5 * (lms[LEFT_EYE] + lms[RIGHT_EYE])
    mouth_mid = 0.5 * (lms[MOUTH_LEFT] + lms[MOUTH_RIGHT])
    fh, fw = COMPONENT_SIZES["forehead"]
    return ComponentCrops(
        whole=img,
        # forehead band sits immediately above the eye line
        forehead=_window(img, eye_mid[1] - fh / 2.0, eye_mid[0], fh, fw),
        eye=_window(img, eye_mid[1], eye_mid[0], *COMPONENT_SIZES["eye"]),
        nose=_window(img, lms[NOSE_TIP][1], lms[NOSE_TIP][0],
                     *COMPONENT_SIZES["nose"]),
        mouth=_window(img, mouth_mid[1], mouth_mid[0],
                      *COMPONENT_SIZES["mouth"]),
    )


# ---------------------------------------------------------------------------
# the five-branch pair network

@dataclass(frozen=True)
class FcnSpec:
    """Per-component sub-network specs plus the derived feature layout."""

    subnets: Tuple[Tuple[str, net.NetworkSpec], ...]

    @property
    def feature_dim(self) -> int:
        return sum(int(np.prod(net.infer_shapes(s)[-1]))
                   for _, s in self.subnets)

    def head_spec(self) -> net.NetworkSpec:
        return net.NetworkSpec((self.feature_dim, 1, 1), (net.Dense(1),))


def _subnet_spec(h: int, w: int, channels: int, k: int) -> net.NetworkSpec:
    """Two conv+pool blocks on a 2-channel input, padding odd dims to even."""
    layers: List[net.LayerSpec] = []
    cur_h, cur_w = h, w
    for _ in range(2):
        layers.append(net.Conv(k=k, out_channels=channels,
                               padding=net.PADDING_SAME))
        layers.append(net.Relu())
        if cur_h % 2 or cur_w % 2:
            layers.append(net.ZeroPad(cur_h % 2, cur_w % 2))
            cur_h, cur_w = cur_h + cur_h % 2, cur_w + cur_w % 2
        layers.append(net.MaxPool(2))
        cur_h, cur_w = cur_h // 2, cur_w // 2
    return net.NetworkSpec((2, h, w), tuple(layers))


def fcn_spec(conv_channels: int = 16, filter_size: int = 3,
             component_sizes: Mapping[str, Tuple[int, int]] = COMPONENT_SIZES,
             ) -> FcnSpec:
    if set(component_sizes) != set(COMPONENT_SIZES):
        raise DataError(
            f"component sizes must cover exactly {sorted(COMPONENT_SIZES)}"
        )
    return FcnSpec(tuple(
        (name, _subnet_spec(*component_sizes[name], conv_channels, filter_size))
        for name in COMPONENT_ORDER
    ))


class FcnModel:
    """Five component sub-networks plus the sigmoid logistic head."""

    def __init__(self, spec: FcnSpec, seed: int = 0, dtype=np.float32,
                 _networks: Optional[Tuple[List, net.Network]] = None):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        if _networks is None:
            seeds = np.random.SeedSequence(seed).generate_state(
                len(spec.subnets) + 1
            )
            self.subnets = [
                (name, net.Network(s, seed=int(seeds[i]), dtype=dtype))
                for i, (name, s) in enumerate(spec.subnets)
            ]
            self.head = net.Network(spec.head_spec(), seed=int(seeds[-1]),
                                    dtype=dtype)
        else:
            self.subnets, self.head = _networks
        bounds = np.cumsum(
            [0] + [int(np.prod(nw.out_shape)) for _, nw in self.subnets]
        )
        self._slices = [slice(int(a), int(b))
                        for a, b in zip(bounds[:-1], bounds[1:])]
        self.feature_dim = int(bounds[-1])

    def forward_features(self, batches: Mapping[str, np.ndarray],
                         mode: str = net.EVAL,
                         rng: Optional[np.random.Generator] = None) -> np.ndarray:
        outs = []
        n = None
        for name, nw in self.subnets:
            out = nw.forward(batches[name], mode, rng)
            n = out.shape[0]
            outs.append(out.reshape(n, -1))
        return np.concatenate(outs, axis=1)

    def forward(self, batches: Mapping[str, np.ndarray],
                mode: str = net.EVAL,
                rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Logits for a batch of pairs, shape (N,)."""
        feats = self.forward_features(batches, mode, rng)
        logits = self.head.forward(feats[:, :, None, None], mode, rng)
        return logits[:, 0]

    def forward_probs(self, batches, mode: str = net.EVAL,
                      rng=None) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.forward(batches, mode, rng)
                                   .astype(np.float64)))

    def backward(self, grad_logit: np.ndarray) -> None:
        """Backpropagate d loss / d logit through head and all branches."""
        gfeat = self.head.backward(grad_logit[:, None].astype(self.dtype),
                                   need_input_grad=True)
        gfeat = gfeat.reshape(gfeat.shape[0], -1)
        for (name, nw), sl in zip(self.subnets, self._slices):
            nw.backward(np.ascontiguousarray(gfeat[:, sl])
                        .reshape((-1,) + nw.out_shape))

    def param_items(self) -> List[Tuple[str, np.ndarray, np.ndarray]]:
        items = []
        for name, nw in self.subnets:
            items.extend((f"{name}.{n}", w, g) for n, w, g in nw.param_items())
        items.extend((f"head.{n}", w, g) for n, w, g in self.head.param_items())
        return items

    def zero_grads(self) -> None:
        for _, w, g in self.param_items():
            g[...] = 0


def fcn_forward(model: FcnModel, pair: VerificationPair) -> float:
    """Eval-mode same-identity probability for one pair."""
    return float(model.forward_probs(pair_batches([pair], model))[0])


def pair_batches(pairs: Sequence[VerificationPair],
                 model: FcnModel) -> Dict[str, np.ndarray]:
    """Stack each component's (a, b) crops as (N, 2, h, w) arrays."""
    out = {}
    for name, nw in model.subnets:
        _, h, w = nw.spec.input_shape
        batch = np.empty((len(pairs), 2, h, w), dtype=model.dtype)
        for i, pair in enumerate(pairs):
            batch[i, 0] = getattr(pair.crops_a, name)
            batch[i, 1] = getattr(pair.crops_b, name)
        out[name] = batch
    return out


def extract_features(model: FcnModel, pair: VerificationPair) -> np.ndarray:
    """The concatenated pre-head representation of one pair, eval mode."""
    feats = model.forward_features(pair_batches([pair], model))
    return feats[0].astype(np.float64)


def train_fcn(
    pairs: Sequence[VerificationPair],
    tcfg: TrainConfig,
    checkpoint_path=None,
    conv_channels: int = 16,
) -> Tuple[FcnModel, List[Tuple[int, float]]]:
    """Minibatch SGD with momentum on binary cross-entropy.

    Returns the model and the (epoch, mean_loss) log, epochs 1-based.
    """
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    if len(pairs) == 0:
        raise DataError("no verification pairs")
    if labels.min() == labels.max():
        raise DataError("training pairs must include both labels")
    model = FcnModel(fcn_spec(conv_channels=conv_channels),
                     seed=tcfg.rng_seed, dtype=np.float32)
    batches_all = pair_batches(pairs, model)
    rng = np.random.default_rng(tcfg.rng_seed)
    velocities = [np.zeros_like(w) for _, w, _ in model.param_items()]
    n = len(pairs)
    log: List[Tuple[int, float]] = []
    for epoch in range(1, tcfg.epochs + 1):
        perm = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, tcfg.minibatch_size):
            idx = perm[start : start + tcfg.minibatch_size]
            sub = {name: b[idx] for name, b in batches_all.items()}
            logits = model.forward(sub, net.TRAIN, rng).astype(np.float64)
            probs = 1.0 / (1.0 + np.exp(-logits))
            y = labels[idx]
            p = np.clip(probs, net.PROB_CLAMP, 1.0 - net.PROB_CLAMP)
            loss_sum += float(-np.sum(y * np.log(p) + (1 - y) * np.log(1 - p)))
            model.backward((probs - y) / len(idx))
            for (_, w, g), vel in zip(model.param_items(), velocities):
                sgd_momentum(w.ravel(), vel.ravel(), g.ravel(),
                             tcfg.momentum, tcfg.learning_rate)
        mean_loss = loss_sum / n
        if not np.isfinite(mean_loss):
            raise TrainingDivergedError(
                f"training loss became non-finite at epoch {epoch}"
            )
        log.append((epoch, mean_loss))
    if checkpoint_path is not None:
        save_fcn(checkpoint_path, model)
    return model, log


def fcn_accuracy(model: FcnModel, pairs: Sequence[VerificationPair],
                 minibatch_size: int = 64) -> float:
    """Fraction of pairs classified correctly at threshold 0.5."""
    batches = pair_batches(pairs, model)
    correct = 0
    for start in range(0, len(pairs), minibatch_size):
        sub = {n: b[start : start + minibatch_size] for n, b in batches.items()}
        logits = model.forward(sub)
        for logit, pair in zip(
                logits, pairs[start : start + minibatch_size]):
            correct += int((logit >= 0.0) == (pair.label == 1))
    return correct / len(pairs)


def fcn_grad_check(model: FcnModel, batches: Mapping[str, np.ndarray],
                   label: int, h: float = 1e-5, tol: float = 1e-5,
                   max_checks: int = 2000, seed: int = 0) -> net.GradCheckReport:
    """Finite-difference check of the full pair network on one pair."""
    if label not in (0, 1):
        raise DataError(f"label must be 0 or 1, got {label!r}")

    def loss_fn() -> float:
        logit = float(model.forward(batches)[0])
        p = min(max(1.0 / (1.0 + math.exp(-logit)), net.PROB_CLAMP),
                1.0 - net.PROB_CLAMP)
        return -(label * math.log(p) + (1 - label) * math.log(1.0 - p))

    logit = float(model.forward(batches)[0])
    p = 1.0 / (1.0 + math.exp(-logit))
    model.backward(np.array([p - label]))
    return net.finite_diff_report(model.param_items(), loss_fn, h=h, tol=tol,
                                  max_checks=max_checks,
                                  rng=np.random.default_rng(seed))


def random_pair_batches(model: FcnModel,
                        rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """One random pair in the model's component shapes (for checks)."""
    return {
        name: rng.random((1, 2) + tuple(nw.spec.input_shape[1:]))
        .astype(model.dtype)
        for name, nw in model.subnets
    }


# ---------------------------------------------------------------------------
# PCA + SVM classifier over extracted features

@dataclass(frozen=True)
class SvmConfig:
    C: float = 1.0
    epochs: int = 500
    learning_rate: float = 1e-4

    def __post_init__(self):
        if not (np.isfinite(self.C) and self.C > 0):
            raise DataError(f"C must be positive, got {self.C}")
        if self.epochs < 1:
            raise DataError(f"epochs must be >= 1, got {self.epochs}")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise DataError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )


@dataclass(frozen=True)
class Verifier:
    pca: linalg.PcaBasis
    weight: np.ndarray  # (pca_dim,)
    bias: float


def svm_hinge_loss(weight, bias, z, y, C: float) -> float:
    """0.5 ||w||^2 + C * sum max(0, 1 - y (w.z + b)), y in {-1, +1}."""
    margins = y * (z @ weight + bias)
    return float(0.5 * np.dot(weight, weight)
                 + C * np.sum(np.maximum(0.0, 1.0 - margins)))


def train_svm(features, labels, pca_dim: int, cfg: SvmConfig) -> Verifier:
    """PCA then full-batch subgradient descent on the hinge objective."""
    x = np.asarray(features, dtype=np.float64)
    y01 = np.asarray(labels)
    if x.ndim != 2 or x.shape[0] != y01.shape[0]:
        raise DataError("features must be (N, dim) with one label per row")
    if set(np.unique(y01)) != {0, 1}:
        raise DataError("labels must contain both classes 0 and 1")
    basis = linalg.pca_fit(x, pca_dim)
    z = np.stack([linalg.pca_project(basis, row) for row in x])
    y = 2.0 * y01.astype(np.float64) - 1.0

    w = np.zeros(pca_dim)
    b = 0.0
    for _ in range(cfg.epochs):
        margins = y * (z @ w + b)
        viol = margins < 1.0
        gw = w - cfg.C * (y[viol] @ z[viol])
        gb = -cfg.C * float(np.sum(y[viol]))
        w = w - cfg.learning_rate * gw
        b = b - cfg.learning_rate * gb
    return Verifier(pca=basis, weight=w, bias=float(b))


def verify(model: FcnModel, verifier: Verifier,
           pair: VerificationPair) -> Tuple[str, float]:
    """(label, score): same iff the SVM affine score is non-negative."""
    z = linalg.pca_project(verifier.pca, extract_features(model, pair))
    score = float(verifier.weight @ z + verifier.bias)
    return (SAME if score >= 0.0 else DIFFERENT), score


def roc_curve(scored: Sequence[Tuple[float, int]]) -> List[Tuple[float, float, float]]:
    """(threshold, fpr, tpr) triples sweeping thresholds from high to low.

    A pair is called same when score >= threshold; the first row uses an
    unattainable threshold so the curve starts at (0, 0), and it ends at
    (1, 1) once every pair is called same.
    """
    if not scored:
        raise DataError("no scores")
    scores = np.array([s for s, _ in scored], dtype=np.float64)
    labels = np.array([l for _, l in scored])
    if not np.all(np.isfinite(scores)):
        raise DataError("scores contain non-finite values")
    if set(np.unique(labels)) != {0, 1}:
        raise DataError("scores must cover both labels")
    pos = float(np.sum(labels == 1))
    neg = float(np.sum(labels == 0))
    points = [(math.inf, 0.0, 0.0)]
    for th in np.unique(scores)[::-1]:
        called = scores >= th
        fpr = float(np.sum(called & (labels == 0))) / neg
        tpr = float(np.sum(called & (labels == 1))) / pos
        points.append((float(th), fpr, tpr))
    return points


# ---------------------------------------------------------------------------
# serialization: FCNW (networks) and VRFY (PCA + SVM) sections

def fcn_chunks(model: FcnModel) -> List[bytes]:
    header = json.dumps(
        {"components": [name for name, _ in model.subnets]}
    ).encode("utf-8")
    chunks = [struct.pack("<I", len(header)), header]
    for _, nw in model.subnets:
        blob = b"".join(checkpoint.network_chunks(nw))
        chunks.append(struct.pack("<Q", len(blob)))
        chunks.append(blob)
    blob = b"".join(checkpoint.network_chunks(model.head))
    chunks.append(struct.pack("<Q", len(blob)))
    chunks.append(blob)
    return chunks


def _take_blob(payload: bytes, off: int) -> Tuple[bytes, int]:
    if off + 8 > len(payload):
        raise DataError("pair-network section truncated")
    (length,) = struct.unpack("<Q", payload[off : off + 8])
    off += 8
    if off + length > len(payload):
        raise DataError("pair-network section truncated")
    return payload[off : off + length], off + length


def fcn_from_payload(payload: bytes, dtype=np.float32) -> FcnModel:
    if len(payload) < 4:
        raise DataError("pair-network section too short")
    (hlen,) = struct.unpack("<I", payload[:4])
    try:
        header = json.loads(payload[4 : 4 + hlen].decode("utf-8"))
        names = list(header["components"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"malformed pair-network header: {exc}") from None
    off = 4 + hlen
    subnets = []
    for name in names:
        blob, off = _take_blob(payload, off)
        subnets.append((name, checkpoint.network_from_payload(blob, dtype)))
    blob, off = _take_blob(payload, off)
    head = checkpoint.network_from_payload(blob, dtype)
    if off != len(payload):
        raise DataError("pair-network section has trailing bytes")
    spec = FcnSpec(tuple((name, nw.spec) for name, nw in subnets))
    return FcnModel(spec, dtype=dtype, _networks=(subnets, head))


def save_fcn(path, model: FcnModel, verifier: Optional[Verifier] = None) -> None:
    sections = [(checkpoint.TAG_FCN, fcn_chunks(model))]
    if verifier is not None:
        sections.append((checkpoint.TAG_VERIFIER, verifier_chunks(verifier)))
    checkpoint.save_checkpoint(path, sections)


def load_fcn(path, dtype=np.float32) -> FcnModel:
    for tag, payload in checkpoint.load_checkpoint(path):
        if tag == checkpoint.TAG_FCN:
            return fcn_from_payload(payload, dtype)
    raise DataError(f"{path}: no pair-network section in checkpoint")


def verifier_chunks(verifier: Verifier) -> List[bytes]:
    basis = verifier.pca
    header = json.dumps(
        {"pca_dim": basis.out_dim, "dim": basis.dim}
    ).encode("utf-8")
    return [
        struct.pack("<I", len(header)),
        header,
        np.ascontiguousarray(basis.mean, dtype="<f8").tobytes(),
        np.ascontiguousarray(basis.components, dtype="<f8").tobytes(),
        np.ascontiguousarray(basis.eigenvalues, dtype="<f8").tobytes(),
        np.ascontiguousarray(verifier.weight, dtype="<f8").tobytes(),
        struct.pack("<d", verifier.bias),
    ]


def verifier_from_payload(payload: bytes) -> Verifier:
    if len(payload) < 4:
        raise DataError("verifier section too short")
    (hlen,) = struct.unpack("<I", payload[:4])
    try:
        header = json.loads(payload[4 : 4 + hlen].decode("utf-8"))
        out_dim, dim = int(header["pca_dim"]), int(header["dim"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError,
            TypeError, ValueError) as exc:
        raise DataError(f"malformed verifier header: {exc}") from None
    need = 8 * (dim + out_dim * dim + out_dim + out_dim + 1)
    if len(payload) != 4 + hlen + need:
        raise DataError("verifier section has wrong length")
    off = 4 + hlen

    def take(count, shape):
        nonlocal off
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=off)
        off += 8 * count
        return arr.reshape(shape)

    mean = take(dim, (dim,))
    components = take(out_dim * dim, (out_dim, dim))
    eigenvalues = take(out_dim, (out_dim,))
    weight = take(out_dim, (out_dim,))
    (bias,) = struct.unpack_from("<d", payload, off)
    basis = linalg.PcaBasis(mean=mean.copy(), components=components.copy(),
                            eigenvalues=eigenvalues.copy())
    return Verifier(pca=basis, weight=weight.copy(), bias=float(bias))


def load_verifier(path, dtype=np.float32) -> Tuple[FcnModel, Verifier]:
    model = load_fcn(path, dtype)
    for tag, payload in checkpoint.load_checkpoint(path):
        if tag == checkpoint.TAG_VERIFIER:
            return model, verifier_from_payload(payload)
    raise DataError(f"{path}: no verifier section in checkpoint")


# ---------------------------------------------------------------------------
# pairs file: CSV path_a, 10 landmark numbers, path_b, 10 numbers, label

@dataclass(frozen=True)
class PairEntry:
    path_a: str
    landmarks_a: np.ndarray
    path_b: str
    landmarks_b: np.ndarray
    label: int


def parse_pairs_file(path) -> Tuple[PairEntry, ...]:
    """Parse the 23-column pairs CSV; relative paths resolve beside it."""
    try:
        with open(path, "r") as f:
            lines = f.readlines()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    base = os.path.dirname(os.fspath(path))
    entries = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cols = [c.strip() for c in line.split(",")]
        if len(cols) != 23:
            raise DataError(f"{path}:{lineno}: expected 23 columns, got {len(cols)}")

        def lms(fields):
            try:
                nums = [float(c) for c in fields]
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: non-numeric landmark coordinate"
                ) from None
            if not all(np.isfinite(nums)):
                raise DataError(f"{path}:{lineno}: non-finite landmark coordinate")
            return np.array(nums, dtype=np.float64).reshape(5, 2)

        if cols[22] not in ("0", "1"):
            raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {cols[22]!r}")
        path_a, path_b = cols[0], cols[11]
        if not path_a or not path_b:
            raise DataError(f"{path}:{lineno}: empty image path")
        if base:
            if not os.path.isabs(path_a):
                path_a = os.path.join(base, path_a)
            if not os.path.isabs(path_b):
                path_b = os.path.join(base, path_b)
        entries.append(PairEntry(path_a, lms(cols[1:11]), path_b,
                                 lms(cols[12:22]), int(cols[22])))
    return tuple(entries)


def load_pairs(entries: Sequence[PairEntry],
               transform=None) -> List[VerificationPair]:
    """Load and crop the images behind parsed pair entries.

    transform, if given, maps each normalized image before cropping;
    passing a canonical-view reconstruction here runs verification on
    recovered images instead of raw ones.
    """
    out = []
    for e in entries:
        img_a = dataio.normalize(dataio.load_image(e.path_a))
        img_b = dataio.normalize(dataio.load_image(e.path_b))
        if transform is not None:
            img_a = transform(img_a)
            img_b = transform(img_b)
        out.append(VerificationPair(
            crop_components(img_a, e.landmarks_a),
            crop_components(img_b, e.landmarks_b),
            e.label,
        ))
    return out
