"""Training loop: batch assembly, loss, backward, Adam with poly decay.

Targets are static per record, so matching and encoding run once up
front. Augmentation draws from the trainer RNG in a fixed order (batch
indices, then per-image jitters), which makes runs reproducible from a
seed and resumable from a saved RNG state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..datagen import AugmentationConfig, Dataset, augment_batch
from ..errors import NumericError
from ..nn.optim import AdamState, LrSchedule, adam_step, poly_decay_lr
from .anchors import AnchorSet
from .loss import LossBreakdown, LossConfig, total_loss
from .matching import match_anchors
from .model import ShaftDetector, preprocess_images
from .targets import TargetMaps, build_targets


@dataclass
class TrainSettings:
    batch_size: int = 32
    total_steps: int = 6000
    base_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    match_iou: float = 0.5


@dataclass
class TrainingRecord:
    image: np.ndarray
    targets: TargetMaps


def prepare_training_records(
    dataset: Dataset, anchors: AnchorSet, match_iou: float = 0.5
) -> list[TrainingRecord]:
    """Load images and precompute per-record target maps."""
    records = []
    for record in dataset.records:
        image = dataset.load_image(record)
        boxes = [a.bbox for a in record.annotations]
        poses = [a.pose for a in record.annotations]
        match = match_anchors(anchors, boxes, match_iou)
        targets = build_targets(anchors, match, boxes, poses, dataset.ranges)
        records.append(TrainingRecord(image=image, targets=targets))
    return records


@dataclass
class StepStats:
    step: int
    lr: float
    loss: LossBreakdown

    def to_dict(self) -> dict:
        d = {"step": self.step, "lr": self.lr}
        d.update(self.loss.to_dict())
        return d


@dataclass
class Trainer:
    model: ShaftDetector
    records: list[TrainingRecord]
    loss_cfg: LossConfig
    aug_cfg: AugmentationConfig
    settings: TrainSettings
    seed: int = 0
    rng: np.random.Generator = field(init=False)
    adam: AdamState = field(init=False)
    schedule: LrSchedule = field(init=False)

    def __post_init__(self) -> None:
        self.rng = np.random.default_rng(np.random.SeedSequence((self.seed, 0x7261696E)))
        self.adam = AdamState(
            beta1=self.settings.adam_beta1,
            beta2=self.settings.adam_beta2,
            eps=self.settings.adam_eps,
        )
        self.schedule = LrSchedule(
            base_lr=self.settings.base_lr, total_steps=self.settings.total_steps
        )

    @property
    def step_count(self) -> int:
        return self.adam.step

    def step(self) -> StepStats:
        lr = poly_decay_lr(self.adam.step, self.schedule)
        idx = self.rng.integers(0, len(self.records), size=self.settings.batch_size)
        images = augment_batch(
            np.stack([self.records[i].image for i in idx]), self.rng, self.aug_cfg
        )
        x = preprocess_images(images, dtype=self.model.dtype)
        targets = [self.records[i].targets for i in idx]

        outputs = self.model.forward(x, train=True)
        cls, box, pose = self.model.flatten_outputs(outputs)
        try:
            breakdown, (d_cls, d_box, d_pose) = total_loss(cls, box, pose, targets, self.loss_cfg)
        except NumericError as e:
            raise NumericError(
                f"training aborted at step {self.adam.step} (lr={lr:.3e}): {e}"
            ) from e
        self.model.zero_grads()
        self.model.backward(self.model.unflatten_grads(d_cls, d_box, d_pose))
        adam_step(self.model.params(), self.adam, lr)
        return StepStats(step=self.adam.step, lr=lr, loss=breakdown)

    # ------------------------------------------------------------------
    # resumable state

    def capture_state(self) -> dict:
        arrays = {}
        for name, arr in self.adam.m.items():
            arrays[f"adam.m.{name}"] = arr
        for name, arr in self.adam.v.items():
            arrays[f"adam.v.{name}"] = arr
        return {
            "step": self.adam.step,
            "seed": self.seed,
            "rng_state": self.rng.bit_generator.state,
            "schedule": {"base_lr": self.schedule.base_lr,
                         "total_steps": self.schedule.total_steps},
            "arrays": arrays,
        }

    def restore_state(self, state: dict) -> None:
        self.adam.step = int(state["step"])
        self.seed = int(state["seed"])
        self.rng.bit_generator.state = state["rng_state"]
        self.schedule = LrSchedule(
            base_lr=float(state["schedule"]["base_lr"]),
            total_steps=int(state["schedule"]["total_steps"]),
        )
        self.adam.m = {}
        self.adam.v = {}
        for name, arr in state["arrays"].items():
            kind, pname = name.split(".", 2)[1], name.split(".", 2)[2]
            target = self.adam.m if kind == "m" else self.adam.v
            target[pname] = arr.astype(self.model.dtype)
