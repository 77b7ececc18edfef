"""Datasets, the AdamW optimizer and the per-view training loop."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ContractError
from .imaging import (Image, LandmarkSet, SkeletonStyle, composite, images_to_array,
                      parse_landmarks, read_ppm, render_skeleton, resize_bilinear, write_ppm)
from .rng import Rng
from .vit import ModelParams, ViTConfig, as_tensors, check_params, forward_batch

VIEWS = ("dashboard", "rearview", "rightside")
MANIFEST = "manifest.tsv"


@dataclass(frozen=True)
class LabeledSample:
    image: Image
    class_index: int
    view_id: str
    sample_id: str = ""
    landmarks: LandmarkSet | None = None

    def __post_init__(self):
        if self.view_id not in VIEWS:
            raise ContractError(f"unknown view {self.view_id!r}")
        if self.class_index < 0:
            raise ContractError("class_index must be nonnegative")


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list

    def part(self, name: str) -> list:
        return {"train": self.train, "val": self.validation, "validation": self.validation,
                "test": self.test}[name]


def one_hot(class_index: int, k: int) -> np.ndarray:
    if not 0 <= class_index < k:
        raise ContractError(f"class index {class_index} outside 0..{k - 1}")
    out = np.zeros(k)
    out[class_index] = 1.0
    return out


def split_sizes(n: int) -> tuple[int, int, int]:
    """(train, validation, test) under the 70/15/15 rule."""
    n_val = n_test = 15 * n // 100
    return n - n_val - n_test, n_val, n_test


def split_dataset(samples: Sequence, seed: int) -> DatasetSplit:
    """Seeded shuffle, then validation and test take floor(0.15 n) each."""
    n = len(samples)
    if n < 3:
        raise ContractError(f"need at least 3 samples to split, got {n}")
    order = Rng(seed).permutation(n)
    n_train, n_val, _ = split_sizes(n)
    shuffled = [samples[i] for i in order]
    return DatasetSplit(shuffled[:n_train], shuffled[n_train:n_train + n_val],
                        shuffled[n_train + n_val:])


def balance_classes(samples: Sequence[LabeledSample], seed: int) -> list[LabeledSample]:
    """Randomly truncate every class to the size of the smallest one."""
    by_class: dict[int, list] = {}
    for s in samples:
        by_class.setdefault(s.class_index, []).append(s)
    n = min(len(v) for v in by_class.values())
    rng = Rng(seed)
    out = []
    for c in sorted(by_class):
        group = by_class[c]
        out.extend(group[i] for i in sorted(rng.permutation(len(group))[:n]))
    return out


# -- optimizer ----------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adamw_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
               state: OptimizerState) -> None:
    """One in-place AdamW update.

    Weight decay scales the pre-step value directly and never enters the
    moment estimates.
    """
    for name, g in grads.items():
        if np.shape(g) != np.shape(params[name]):
            raise ContractError(f"gradient for {name} has shape {np.shape(g)}, "
                                f"parameter has {np.shape(params[name])}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, g in grads.items():
        theta = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        theta *= 1.0 - state.lr * state.weight_decay
        theta -= update


# -- training loop ------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0
    shuffle: bool = True
    lr: float = 1e-3
    weight_decay: float = 1e-4
    view: str | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ContractError("batch_size and epochs must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainingReport:
    history: list[EpochRecord]
    best_epoch: int
    best_params: ModelParams
    final_params: ModelParams

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for r in self.history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.train_acc),
                        repr(r.val_loss), repr(r.val_acc)])
        return buf.getvalue()


def _batch_arrays(samples: Sequence[LabeledSample], k: int) -> tuple[np.ndarray, np.ndarray]:
    images = images_to_array(s.image for s in samples)
    targets = np.stack([one_hot(s.class_index, k) for s in samples])
    return images, targets


def predict_proba(params: Mapping[str, np.ndarray], images: np.ndarray, config: ViTConfig,
                  chunk: int = 64) -> np.ndarray:
    """Inference-mode probabilities for a float image batch, in chunks."""
    tensors = as_tensors(params)
    parts = [forward_batch(images[i:i + chunk], tensors, config).data
             for i in range(0, len(images), chunk)]
    return np.concatenate(parts)


def evaluate(params: Mapping[str, np.ndarray], samples: Sequence[LabeledSample],
             config: ViTConfig) -> tuple[float, float, np.ndarray]:
    """(mean cross-entropy, accuracy, predicted classes) without dropout."""
    if not samples:
        return math.nan, math.nan, np.zeros(0, dtype=np.int64)
    images, targets = _batch_arrays(samples, config.num_classes)
    probs = predict_proba(params, images, config)
    p_true = np.maximum((probs * targets).sum(axis=1), ad.PROB_FLOOR)
    preds = probs.argmax(axis=1)
    acc = float((preds == targets.argmax(axis=1)).mean())
    return float(-np.log(p_true).mean()), acc, preds


def _check_view(samples: Iterable[LabeledSample], view: str | None) -> None:
    if view is None:
        return
    for s in samples:
        if s.view_id != view:
            raise ContractError(
                f"sample {s.sample_id or '?'} belongs to view {s.view_id!r}, training {view!r}")


def train(params: ModelParams, data: DatasetSplit, config: TrainConfig,
          vit_config: ViTConfig, stop_at_train_acc: float | None = None) -> TrainingReport:
    """Mini-batch AdamW training; ``params`` is updated in place.

    The best checkpoint maximizes validation accuracy (training accuracy
    when there is no validation set); ties keep the earlier epoch.
    ``stop_at_train_acc`` ends training early once that accuracy is reached.
    """
    if not data.train:
        raise ContractError("training set is empty")
    check_params(params, vit_config)
    for part in (data.train, data.validation, data.test):
        _check_view(part, config.view)
        for s in part:
            if s.class_index >= vit_config.num_classes:
                raise ContractError(f"class {s.class_index} >= k={vit_config.num_classes}")
    images, targets = _batch_arrays(data.train, vit_config.num_classes)
    rng = Rng(config.seed)
    shuffle_rng, dropout_rng = rng.split(), rng.split()
    state = OptimizerState(lr=config.lr, weight_decay=config.weight_decay)
    n = len(images)

    history = []
    best_epoch, best_score, best_params = 0, -math.inf, None
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n) if config.shuffle else np.arange(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            tensors = as_tensors(params, requires_grad=True)
            with ad.Tape() as tape:
                probs = forward_batch(images[idx], tensors, vit_config, dropout_rng, training=True)
                loss = ad.cross_entropy(probs, targets[idx])
            tape.backward(loss)
            grads = {name: t.grad if t.grad is not None else np.zeros_like(t.data)
                     for name, t in tensors.items()}
            adamw_step(params, grads, state)

        train_loss, train_acc, _ = evaluate(params, data.train, vit_config)
        val_loss, val_acc, _ = evaluate(params, data.validation, vit_config)
        history.append(EpochRecord(epoch, train_loss, train_acc, val_loss, val_acc))
        score = val_acc if data.validation else train_acc
        if score > best_score:
            best_epoch, best_score = epoch, score
            best_params = {k: v.copy() for k, v in params.items()}
        if stop_at_train_acc is not None and train_acc >= stop_at_train_acc:
            break
    return TrainingReport(history, best_epoch, best_params,
                          {k: v.copy() for k, v in params.items()})


# -- synthetic skeleton dataset ------------------------------------------------

# (upper-arm angle, forearm angle) in degrees from straight down, positive = outward.
ARM_POSES = ((25.0, -70.0), (35.0, 160.0), (80.0, 60.0), (-25.0, -115.0))
HEAD_TILTS = (0.0, 0.06, -0.06, 0.12)

VIEW_TRANSFORMS = {
    # (scale x, scale y, rotation degrees, shift x, shift y)
    "dashboard": (1.0, 1.0, 0.0, 0.0, 0.0),
    "rearview": (0.85, 0.85, 10.0, 0.05, 0.03),
    "rightside": (0.7, 0.9, -8.0, -0.06, 0.0),
}

MAX_SYNTHETIC_CLASSES = len(ARM_POSES) ** 2 * len(HEAD_TILTS)


def _limb(start, upper_deg, fore_deg, side, upper_len=0.15, fore_len=0.13):
    def direction(deg):
        rad = math.radians(deg)
        return np.array([side * math.sin(rad), math.cos(rad)])

    elbow = start + upper_len * direction(upper_deg)
    fore = direction(fore_deg)
    wrist = elbow + fore_len * fore
    normal = np.array([-fore[1], fore[0]])
    fingers = (wrist + 0.05 * fore + 0.025 * normal,   # pinky
               wrist + 0.06 * fore,                      # index
               wrist + 0.03 * fore - 0.03 * normal)      # thumb
    return elbow, wrist, fingers


def pose_template(class_index: int) -> np.ndarray:
    """Canonical (25, 2) dashboard-view landmarks for a class."""
    if not 0 <= class_index < MAX_SYNTHETIC_CLASSES:
        raise ContractError(f"synthetic classes are limited to {MAX_SYNTHETIC_CLASSES}")
    left_arm = ARM_POSES[class_index % 4]
    right_arm = ARM_POSES[(class_index // 4) % 4]
    tilt = HEAD_TILTS[class_index // 16]

    pts = np.zeros((25, 2))
    nose = np.array([0.5 + tilt, 0.2])
    pts[0] = nose
    for i, dx in zip((1, 2, 3), (0.02, 0.035, 0.05)):
        pts[i] = nose + (dx, -0.025)          # subject's left eye, image right
        pts[i + 3] = nose + (-dx, -0.025)
    pts[7], pts[8] = nose + (0.075, -0.005), nose + (-0.075, -0.005)
    pts[9], pts[10] = nose + (0.025, 0.04), nose + (-0.025, 0.04)
    pts[11], pts[12] = (0.62, 0.4), (0.38, 0.4)
    pts[23], pts[24] = (0.58, 0.85), (0.42, 0.85)
    for side, shoulder, ids in ((1, 11, (13, 15, 17, 19, 21)), (-1, 12, (14, 16, 18, 20, 22))):
        arm = left_arm if side == 1 else right_arm
        elbow, wrist, fingers = _limb(pts[shoulder], *arm, side=side)
        pts[ids[0]], pts[ids[1]] = elbow, wrist
        pts[ids[2]], pts[ids[3]], pts[ids[4]] = fingers
    return pts


def view_transform(points: np.ndarray, view: str) -> np.ndarray:
    sx, sy, deg, tx, ty = VIEW_TRANSFORMS[view]
    rad = math.radians(deg)
    rot = np.array([[math.cos(rad), -math.sin(rad)], [math.sin(rad), math.cos(rad)]])
    centered = (points - 0.5) * (sx, sy)
    return centered @ rot.T + 0.5 + (tx, ty)


def textured_background(height: int, width: int, rng: Rng) -> Image:
    """Smooth random gradient plus pixel noise, kept away from saturated colors."""
    base = 60.0 + 80.0 * rng.random(3)
    gy, gx = np.meshgrid(np.linspace(-1, 1, height), np.linspace(-1, 1, width), indexing="ij")
    slope = 30.0 * (rng.random((2, 3)) - 0.5)
    smooth = base + gy[..., None] * slope[0] + gx[..., None] * slope[1]
    noise = 20.0 * (rng.random((height, width, 3)) - 0.5)
    return Image(np.clip(np.round(smooth + noise), 1, 220).astype(np.uint8))


def default_style(canvas: int) -> SkeletonStyle:
    return SkeletonStyle(line_thickness=max(2, canvas // 112), joint_radius=max(2, canvas // 56))


def gen_synthetic_dataset(k: int, per_class: int, seed: int, image_size: int = 224,
                          views: Sequence[str] = VIEWS, style: SkeletonStyle | None = None,
                          jitter: float = 0.01, canvas_size: int | None = None
                          ) -> dict[str, list[LabeledSample]]:
    """Jittered class templates rendered onto textured backgrounds.

    ``per_class`` samples are drawn for every (view, class) pair. Each
    sample is rendered on a ``canvas_size`` canvas (default twice the image
    size), composited and resized to ``image_size``.
    """
    if per_class < 1:
        raise ContractError("per_class must be >= 1")
    canvas = canvas_size or 2 * image_size
    style = style or default_style(canvas)
    templates = [pose_template(c) for c in range(k)]
    rng = Rng(seed)
    out = {}
    for view in views:
        if view not in VIEWS:
            raise ContractError(f"unknown view {view!r}")
        samples = []
        for c in range(k):
            base = view_transform(templates[c], view)
            for i in range(per_class):
                srng = rng.split()
                xy = base + srng.normal(base.shape, std=jitter)
                landmarks = LandmarkSet.from_array(np.clip(xy, 0.0, 1.0))
                skeleton = render_skeleton(landmarks, canvas, canvas, style)
                scene = composite(textured_background(canvas, canvas, srng), skeleton)
                image = resize_bilinear(scene, image_size, image_size)
                samples.append(LabeledSample(image, c, view, f"{view}-{c:02d}-{i:04d}", landmarks))
        out[view] = samples
    return out


# -- on-disk dataset ------------------------------------------------------------

def write_dataset(samples: Iterable[LabeledSample], root: str | Path) -> Path:
    """Write root/{view}/{class}/{id}.ppm (+ .landmarks.json) and the manifest."""
    root = Path(root)
    lines = []
    for s in samples:
        rel = Path(s.view_id) / str(s.class_index) / f"{s.sample_id}.ppm"
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(write_ppm(s.image))
        if s.landmarks is not None:
            path.with_name(f"{s.sample_id}.landmarks.json").write_text(
                s.landmarks.to_json(s.image.width, s.image.height), encoding="utf-8")
        lines.append(f"{rel.as_posix()}\t{s.view_id}\t{s.class_index}\n")
    manifest = root / MANIFEST
    manifest.write_text("".join(lines), encoding="utf-8")
    return manifest


def load_dataset(root: str | Path, view: str | None = None) -> list[LabeledSample]:
    """Read the manifest, keeping only ``view`` when given."""
    root = Path(root)
    out = []
    for lineno, line in enumerate((root / MANIFEST).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rel, v, cls = line.split("\t")
            cls = int(cls)
        except ValueError as exc:
            raise ContractError(f"{MANIFEST}:{lineno}: expected 'path<TAB>view<TAB>class'") from exc
        if view is not None and v != view:
            continue
        path = root / rel
        image = read_ppm(path.read_bytes())
        lm_path = path.with_name(path.stem + ".landmarks.json")
        landmarks = parse_landmarks(lm_path.read_text(encoding="utf-8"))[0] if lm_path.exists() else None
        out.append(LabeledSample(image, cls, v, path.stem, landmarks))
    return out


def dataset_info(root: str | Path) -> dict:
    """Class count and image size recorded by ``gen-data``, if present."""
    path = Path(root) / "dataset.json"
    return json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
