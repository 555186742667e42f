"""Backbone pyramid and detection heads (variants C and D).

The backbone is a small conv pyramid: a stem downsamples the input to
the first level size, then one stride-2 conv stage per further level.
Every level feeds three 3x3 conv branches producing class logits, box
offsets, and the pose map. Variant C regresses the pose straight from
backbone features; variant D feeds the concatenation of features,
class logits, and box offsets through conv-batchnorm-ReLU-conv. Pose
maps pass through tanh so outputs live in (-1, 1) (configurable off).

All activations are channels-last; per-level head outputs with K boxes
per cell have shape (N, g, g, C*K) and flatten to per-anchor rows in
the anchor set's index order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..nn.ops import BatchNorm, ConcatChannels, Conv2d, MaxPool2, Param, ReLU, Tanh
from .anchors import BOXES_PER_CELL, BackboneConfig

N_CLASSES = 2
N_BOX = 4
N_POSE = 5


@dataclass
class DetectorConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    variant: str = "d"
    pose_tanh: bool = True
    pose_head_channels: int = 16

    def __post_init__(self) -> None:
        self.variant = self.variant.lower()
        if self.variant not in ("c", "d"):
            raise ConfigError(f"variant must be 'c' or 'd', got {self.variant!r}")
        if self.pose_head_channels < 1:
            raise ConfigError("pose_head_channels must be positive")

    def describe(self) -> dict:
        return {
            "variant": self.variant,
            "input_size": self.backbone.input_size,
            "level_sizes": list(self.backbone.level_sizes),
            "channels": self.backbone.channels,
            "pose_tanh": self.pose_tanh,
            "pose_head_channels": self.pose_head_channels,
            "boxes_per_cell": BOXES_PER_CELL,
        }


@dataclass
class LevelOutputs:
    cls: np.ndarray   # (N, g, g, N_CLASSES * K)
    box: np.ndarray   # (N, g, g, N_BOX * K)
    pose: np.ndarray  # (N, g, g, N_POSE * K)


class _ConvBnRelu:
    def __init__(self, name, in_ch, out_ch, stride, rng, dtype, input_grad=True):
        self.conv = Conv2d(name, in_ch, out_ch, 3, stride, rng, dtype, bias=False,
                           input_grad=input_grad)
        self.bn = BatchNorm(f"{name}_bn", out_ch, dtype=dtype)
        self.relu = ReLU()

    def forward(self, x, train):
        return self.relu.forward(self.bn.forward(self.conv.forward(x, train), train), train)

    def backward(self, gy):
        return self.conv.backward(self.bn.backward(self.relu.backward(gy)))

    def params(self):
        return self.conv.params() + self.bn.params()

    def buffers(self):
        return self.bn.buffers()


class _PoseHeadC:
    def __init__(self, name, channels, use_tanh, rng, dtype):
        self.conv = Conv2d(f"{name}.pose.out", channels, N_POSE * BOXES_PER_CELL, 3, 1, rng, dtype)
        self.tanh = Tanh() if use_tanh else None

    def forward(self, feat, det_out, train):
        y = self.conv.forward(feat, train)
        return self.tanh.forward(y, train) if self.tanh else y

    def backward(self, gy):
        if self.tanh:
            gy = self.tanh.backward(gy)
        return self.conv.backward(gy), None

    def params(self):
        return self.conv.params()


class _PoseHeadD:
    """Fused pose path: concat(features, class logits, box offsets)."""

    def __init__(self, name, channels, hidden, use_tanh, rng, dtype):
        in_ch = channels + (N_CLASSES + N_BOX) * BOXES_PER_CELL
        self.concat = ConcatChannels()
        self.fuse = Conv2d(f"{name}.pose.fuse", in_ch, hidden, 3, 1, rng, dtype, bias=False)
        self.bn = BatchNorm(f"{name}.pose.fuse_bn", hidden, dtype=dtype)
        self.relu = ReLU()
        self.out = Conv2d(f"{name}.pose.out", hidden, N_POSE * BOXES_PER_CELL, 3, 1, rng, dtype)
        self.tanh = Tanh() if use_tanh else None

    def forward(self, feat, det_out, train):
        x = self.concat.forward([feat, det_out], train)
        x = self.relu.forward(self.bn.forward(self.fuse.forward(x, train), train), train)
        y = self.out.forward(x, train)
        return self.tanh.forward(y, train) if self.tanh else y

    def backward(self, gy):
        if self.tanh:
            gy = self.tanh.backward(gy)
        gx = self.fuse.backward(self.bn.backward(self.relu.backward(self.out.backward(gy))))
        gfeat, gdet = self.concat.backward(gx)
        return gfeat, gdet

    def params(self):
        return self.fuse.params() + self.bn.params() + self.out.params()


class _Head:
    """Shared detection conv (class + box channels) plus the pose path.

    Class and box predictions come from one convolution whose output
    reshapes to (..., K, 6) per cell: two class logits then four box
    offsets per anchor. That is algebraically identical to two separate
    3x3 branches (independent output channels) but builds the column
    matrix once.
    """

    def __init__(self, name, channels, config: DetectorConfig, rng, dtype):
        k = BOXES_PER_CELL
        self.det = Conv2d(f"{name}.det", channels, (N_CLASSES + N_BOX) * k, 3, 1, rng, dtype)
        if config.variant == "c":
            self.pose = _PoseHeadC(name, channels, config.pose_tanh, rng, dtype)
        else:
            self.pose = _PoseHeadD(
                name, channels, config.pose_head_channels, config.pose_tanh, rng, dtype
            )

    def forward(self, feat, train) -> LevelOutputs:
        k = BOXES_PER_CELL
        det_out = self.det.forward(feat, train)
        n, g = det_out.shape[0], det_out.shape[1]
        det_r = det_out.reshape(n, g, g, k, N_CLASSES + N_BOX)
        cls_out = det_r[..., :N_CLASSES].reshape(n, g, g, k * N_CLASSES)
        box_out = det_r[..., N_CLASSES:].reshape(n, g, g, k * N_BOX)
        pose_out = self.pose.forward(feat, det_out, train)
        return LevelOutputs(cls=cls_out, box=box_out, pose=pose_out)

    def backward(self, gcls, gbox, gpose):
        k = BOXES_PER_CELL
        gfeat_pose, gdet_extra = self.pose.backward(gpose)
        n, g = gcls.shape[0], gcls.shape[1]
        gdet = np.concatenate(
            [gcls.reshape(n, g, g, k, N_CLASSES), gbox.reshape(n, g, g, k, N_BOX)], axis=-1
        ).reshape(n, g, g, k * (N_CLASSES + N_BOX))
        if gdet_extra is not None:
            gdet = gdet + gdet_extra
        gfeat = self.det.backward(gdet)
        if gfeat_pose is not None:
            gfeat = gfeat + gfeat_pose
        return gfeat

    def params(self):
        return self.det.params() + self.pose.params()


class ShaftDetector:
    """The full detector: backbone pyramid plus per-level heads."""

    def __init__(self, config: DetectorConfig, rng: np.random.Generator, dtype=np.float32,
                 input_grad: bool = False):
        self.config = config
        bb = config.backbone
        ch = bb.channels
        self.dtype = dtype

        sizes = []
        size = bb.input_size
        while size > bb.level_sizes[0]:
            size = (size + 1) // 2
            sizes.append(size)

        self.stem: list = []
        self.stem.append(_ConvBnRelu("stem.conv0", 3, ch // 2, 2, rng, dtype,
                                      input_grad=input_grad))
        for i, s in enumerate(sizes[1:]):
            if s * 2 == sizes[i]:
                self.stem.append(MaxPool2())
            else:
                self.stem.append(_ConvBnRelu(f"stem.down{i + 1}", ch // 2, ch // 2, 2, rng, dtype))
        self.stem.append(_ConvBnRelu("stem.conv1", ch // 2, ch, 1, rng, dtype))

        self.stages = [
            _ConvBnRelu(f"level{i}.conv", ch, ch, 2, rng, dtype)
            for i in range(1, len(bb.level_sizes))
        ]
        self.heads = [
            _Head(f"head{i}", ch, config, rng, dtype) for i in range(len(bb.level_sizes))
        ]
        self._feat_count = len(bb.level_sizes)

    # ------------------------------------------------------------------
    # forward / backward

    def forward(self, images: np.ndarray, train: bool = True) -> list[LevelOutputs]:
        bb = self.config.backbone
        if images.ndim != 4 or images.shape[1:3] != (bb.input_size, bb.input_size):
            raise ConfigError(
                f"expected (N, {bb.input_size}, {bb.input_size}, 3) input, got {images.shape}"
            )
        x = images.astype(self.dtype, copy=False)
        for layer in self.stem:
            x = layer.forward(x, train)
        feats = [x]
        for stage in self.stages:
            feats.append(stage.forward(feats[-1], train))
        return [head.forward(f, train) for head, f in zip(self.heads, feats)]

    def backward(self, grads: list[dict]) -> np.ndarray:
        """Backpropagate per-level head gradients; returns the input gradient."""
        gfeats = [
            head.backward(g["cls"], g["box"], g["pose"])
            for head, g in zip(self.heads, grads)
        ]
        g = gfeats[-1]
        for i in range(len(self.stages) - 1, -1, -1):
            g = self.stages[i].backward(g) + gfeats[i]
        for layer in reversed(self.stem):
            g = layer.backward(g)
        return g

    # ------------------------------------------------------------------
    # flat per-anchor views

    def flatten_outputs(self, outputs: list[LevelOutputs]):
        """Per-anchor rows: (N, A, 2), (N, A, 4), (N, A, 5)."""
        k = BOXES_PER_CELL
        n = outputs[0].cls.shape[0]

        def flat(arr, c):
            return arr.reshape(n, -1, k, c).reshape(n, -1, c)

        cls = np.concatenate([flat(o.cls, N_CLASSES) for o in outputs], axis=1)
        box = np.concatenate([flat(o.box, N_BOX) for o in outputs], axis=1)
        pose = np.concatenate([flat(o.pose, N_POSE) for o in outputs], axis=1)
        return cls, box, pose

    def unflatten_grads(self, d_cls, d_box, d_pose) -> list[dict]:
        """Split flat per-anchor gradients back into per-level maps."""
        k = BOXES_PER_CELL
        n = d_cls.shape[0]
        grads = []
        start = 0
        for g in self.config.backbone.level_sizes:
            count = g * g * k
            sl = slice(start, start + count)
            grads.append(
                {
                    "cls": d_cls[:, sl].reshape(n, g, g, N_CLASSES * k).astype(self.dtype),
                    "box": d_box[:, sl].reshape(n, g, g, N_BOX * k).astype(self.dtype),
                    "pose": d_pose[:, sl].reshape(n, g, g, N_POSE * k).astype(self.dtype),
                }
            )
            start += count
        return grads

    # ------------------------------------------------------------------
    # parameters and state

    def _layers(self):
        layers = list(self.stem) + list(self.stages) + list(self.heads)
        return layers

    def params(self) -> list[Param]:
        out = []
        for layer in self._layers():
            out.extend(layer.params())
        return out

    def named_params(self) -> dict[str, Param]:
        return {p.name: p for p in self.params()}

    def _batchnorms(self) -> list[BatchNorm]:
        bns = [layer.bn for layer in self.stem if isinstance(layer, _ConvBnRelu)]
        bns.extend(stage.bn for stage in self.stages)
        bns.extend(head.pose.bn for head in self.heads if isinstance(head.pose, _PoseHeadD))
        return bns

    def buffers(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for bn in self._batchnorms():
            out.update(bn.buffers())
        return out

    def set_buffers(self, values: dict[str, np.ndarray]) -> None:
        for bn in self._batchnorms():
            stem = bn.gamma.name.rsplit(".", 1)[0]
            for suffix in ("running_mean", "running_var"):
                key = f"{stem}.{suffix}"
                if key not in values:
                    raise ConfigError(f"missing buffer {key}")
                setattr(bn, suffix, values[key].copy())

    def pose_branch_param_names(self) -> set[str]:
        return {p.name for p in self.params() if ".pose." in p.name}

    def zero_grads(self) -> None:
        for p in self.params():
            p.zero_grad()


def preprocess_images(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 RGB batch -> float in [-1, 1]."""
    return (images.astype(dtype) / 127.5) - 1.0
