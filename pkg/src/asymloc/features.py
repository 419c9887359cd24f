"""Model family, dense detector/descriptor heads, and keypoint extraction.

The backbone is a plain stack of 3x3 convolutions (ReLU between layers, the
first layers strided) followed by two 1x1 heads: detector logits (1 channel,
sigmoid -> confidence in (0,1)) and descriptors (D channels, L2-normalized at
read-out).  Keypoints live on the strided score-map grid; cell (r, c) maps to
input pixel (c * stride, r * stride).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import formats
from .backend import nms_mask
from .diffcore import Tensor
from .errors import ConfigError, CorruptionError, ShapeError


@dataclass(frozen=True)
class ConvSpec:
    c_in: int
    c_out: int
    kernel: int = 3
    stride: int = 1


@dataclass(frozen=True)
class ModelSpec:
    """Architecture description; parameter counts derive from it exactly."""

    name: str
    layers: tuple[ConvSpec, ...]
    descriptor_dim: int = 64
    nominal_params: int | None = None

    @property
    def last_width(self) -> int:
        return self.layers[-1].c_out

    @property
    def total_stride(self) -> int:
        s = 1
        for layer in self.layers:
            s *= layer.stride
        return s

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for layer in self.layers:
            rf += (layer.kernel - 1) * jump
            jump *= layer.stride
        return rf


def _chain(name: str, widths: list[int], strides: list[int], nominal: int) -> ModelSpec:
    layers = []
    c_in = 1
    for w, s in zip(widths, strides):
        layers.append(ConvSpec(c_in, w, 3, s))
        c_in = w
    return ModelSpec(name, tuple(layers), descriptor_dim=64, nominal_params=nominal)


# Widths chosen to land each variant within +-10% of its nominal count.
VARIANTS: dict[str, ModelSpec] = {
    "v13": _chain("v13", [16, 16, 32, 32, 64, 64, 72], [2, 2, 1, 1, 1, 1, 1], 130_000),
    "v08": _chain("v08", [16, 16, 32, 32, 48, 48, 48], [2, 2, 1, 1, 1, 1, 1], 80_000),
    "v06": _chain("v06", [16, 16, 32, 32, 48, 52], [2, 2, 1, 1, 1, 1], 60_000),
    "v04": _chain("v04", [12, 16, 24, 24, 40, 40], [2, 2, 1, 1, 1, 1], 40_000),
    "teacher": _chain("teacher", [32, 48, 64, 64, 96, 96, 96, 96], [2, 2, 1, 1, 1, 1, 1, 1], 400_000),
}


def conv_params(c_in: int, c_out: int, k: int) -> int:
    return k * k * c_in * c_out + c_out


def conv_flops(c_in: int, c_out: int, k: int, out_h: int, out_w: int) -> float:
    return 2.0 * k * k * c_in * c_out * out_h * out_w


def count_params(spec: ModelSpec) -> int:
    """Exact trainable-scalar count: backbone convs plus both 1x1 heads."""
    total = sum(conv_params(l.c_in, l.c_out, l.kernel) for l in spec.layers)
    total += conv_params(spec.last_width, 1, 1)  # detector head
    total += conv_params(spec.last_width, spec.descriptor_dim, 1)  # descriptor head
    return total


def count_flops(spec: ModelSpec, image_size: tuple[int, int]) -> float:
    """Inference cost in GFLOPs for one image of (width, height)."""
    w, h = image_size
    total = 0.0
    for layer in spec.layers:
        pad = layer.kernel // 2
        h = (h + 2 * pad - layer.kernel) // layer.stride + 1
        w = (w + 2 * pad - layer.kernel) // layer.stride + 1
        total += conv_flops(layer.c_in, layer.c_out, layer.kernel, h, w)
    total += conv_flops(spec.last_width, 1, 1, h, w)
    total += conv_flops(spec.last_width, spec.descriptor_dim, 1, h, w)
    return total / 1e9


class Model:
    """A backbone plus heads with named trainable parameters."""

    def __init__(self, spec: ModelSpec, params: dict[str, Tensor]):
        self.spec = spec
        self.params = params

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return sorted(self.params.items())

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def astype(self, dtype) -> "Model":
        return Model(self.spec, {k: dc.parameter(v.data, dtype) for k, v in self.params.items()})

    def frozen(self) -> "Model":
        """Copy whose parameters never receive gradients."""
        return Model(self.spec, {k: Tensor(v.data.copy()) for k, v in self.params.items()})

    def dense_maps(self, image: np.ndarray) -> "DenseMaps":
        image = np.asarray(image)
        if image.ndim != 2:
            raise ShapeError("expected a single-channel H x W image")
        if min(image.shape) < self.spec.receptive_field:
            raise ShapeError(
                f"image {image.shape} smaller than receptive field {self.spec.receptive_field}")
        x = Tensor(np.ascontiguousarray(image[None], dtype=self.dtype))
        for i, layer in enumerate(self.spec.layers):
            x = dc.conv2d(x, self.params[f"layer{i}.weight"], self.params[f"layer{i}.bias"],
                          stride=layer.stride, padding=layer.kernel // 2)
            x = dc.relu(x)
        logits = dc.conv2d(x, self.params["det.weight"], self.params["det.bias"])
        desc = dc.conv2d(x, self.params["desc.weight"], self.params["desc.bias"])
        _, h, w = logits.shape
        return DenseMaps(
            conf_flat=dc.flatten_spatial(dc.sigmoid(logits)),
            desc_flat=dc.flatten_spatial(desc),
            height=h, width=w, stride=self.spec.total_stride,
        )


def build_model(spec: ModelSpec, rng: np.random.Generator, dtype=np.float32) -> Model:
    """He-initialized model; deterministic given the rng seed.

    The detector-head bias starts at +1 so initial confidences sit above the
    training-time confidence gate instead of exactly at sigmoid(0) = 0.5.
    """
    actual = count_params(spec)
    if spec.nominal_params is not None:
        lo, hi = 0.9 * spec.nominal_params, 1.1 * spec.nominal_params
        if not (lo <= actual <= hi):
            raise ConfigError(
                f"spec {spec.name!r}: computed count {actual} outside +-10% of nominal {spec.nominal_params}")
    params: dict[str, Tensor] = {}

    def he(c_out, c_in, k):
        fan_in = c_in * k * k
        return rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / fan_in)

    for i, layer in enumerate(spec.layers):
        params[f"layer{i}.weight"] = dc.parameter(he(layer.c_out, layer.c_in, layer.kernel), dtype)
        params[f"layer{i}.bias"] = dc.parameter(np.zeros(layer.c_out), dtype)
    params["det.weight"] = dc.parameter(he(1, spec.last_width, 1), dtype)
    params["det.bias"] = dc.parameter(np.ones(1), dtype)
    params["desc.weight"] = dc.parameter(he(spec.descriptor_dim, spec.last_width, 1), dtype)
    params["desc.bias"] = dc.parameter(np.zeros(spec.descriptor_dim), dtype)
    return Model(spec, params)


@dataclass
class KeypointSet:
    """N keypoints: pixel positions, confidences in (0,1), unit descriptors.

    ``confidences`` (N x 1) and ``descriptors`` (N x D) stay graph tensors on
    the training path; positions are always detached numpy.
    """

    positions: np.ndarray
    confidences: Tensor
    descriptors: Tensor
    cells: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return self.positions.shape[0]

    @property
    def conf(self) -> np.ndarray:
        return self.confidences.data.reshape(-1)

    @property
    def desc(self) -> np.ndarray:
        return self.descriptors.data

    def detached(self) -> "KeypointSet":
        return KeypointSet(self.positions.copy(), self.confidences.detach(),
                           self.descriptors.detach(), self.cells.copy())

    @staticmethod
    def from_arrays(positions, confidences, descriptors) -> "KeypointSet":
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        conf = np.asarray(confidences).reshape(-1, 1)
        return KeypointSet(positions, Tensor(conf), Tensor(np.asarray(descriptors)))


@dataclass
class DenseMaps:
    """Per-pixel confidence/descriptor read-outs on the strided score grid."""

    conf_flat: Tensor  # (h*w) x 1
    desc_flat: Tensor  # (h*w) x D, unnormalized
    height: int
    width: int
    stride: int

    def positions_of(self, cells: np.ndarray) -> np.ndarray:
        ys = (cells // self.width) * self.stride
        xs = (cells % self.width) * self.stride
        return np.stack([xs, ys], axis=1).astype(np.float64)

    def cells_of_positions(self, positions: np.ndarray) -> np.ndarray:
        """Flat cell index of each (x, y) position; positions must lie on the grid."""
        xs = np.asarray(positions)[:, 0] / self.stride
        ys = np.asarray(positions)[:, 1] / self.stride
        cells = np.rint(ys).astype(np.int64) * self.width + np.rint(xs).astype(np.int64)
        if cells.size and (cells.min() < 0 or cells.max() >= self.height * self.width):
            raise ShapeError("position outside the score-map grid")
        return cells

    def keypoint_set(self, cells: np.ndarray) -> KeypointSet:
        cells = np.asarray(cells, dtype=np.int64)
        conf = dc.gather_rows(self.conf_flat, cells)
        desc = dc.l2_normalize_rows(dc.gather_rows(self.desc_flat, cells))
        return KeypointSet(self.positions_of(cells), conf, desc, cells)


def select_keypoint_cells(scores: np.ndarray, n: int, nms_radius: int) -> np.ndarray:
    """NMS survivors, then top-n by confidence (ties in row-major order)."""
    mask = nms_mask(scores, nms_radius)
    flat = np.flatnonzero(mask.ravel())
    if flat.size == 0:
        return flat.astype(np.int64)
    order = np.argsort(-scores.ravel()[flat], kind="stable")
    return flat[order[:n]].astype(np.int64)


def extract_features(model: Model, image: np.ndarray, n: int = 512,
                     nms_radius: int = 2, train: bool = False) -> KeypointSet:
    """Top-n NMS keypoints with confidences and unit-norm descriptors.

    With ``train=True`` confidences and descriptors remain graph nodes so the
    losses can backpropagate into the dense heads; positions are detached.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    if train:
        maps = model.dense_maps(image)
    else:
        with dc.no_grad():
            maps = model.dense_maps(image)
    scores = maps.conf_flat.data.reshape(maps.height, maps.width)
    cells = select_keypoint_cells(scores, n, nms_radius)
    return maps.keypoint_set(cells)


# ---------------------------------------------------------------------------
# checkpoint glue

def _spec_to_metadata(spec: ModelSpec) -> dict[str, str]:
    layers = ",".join(f"{l.c_in}:{l.c_out}:{l.kernel}:{l.stride}" for l in spec.layers)
    meta = {
        "spec.name": spec.name,
        "spec.layers": layers,
        "spec.descriptor_dim": str(spec.descriptor_dim),
    }
    if spec.nominal_params is not None:
        meta["spec.nominal_params"] = str(spec.nominal_params)
    return meta


def _spec_from_metadata(meta: dict[str, str]) -> ModelSpec:
    try:
        layers = tuple(
            ConvSpec(*(int(v) for v in part.split(":")))
            for part in meta["spec.layers"].split(",")
        )
        nominal = int(meta["spec.nominal_params"]) if "spec.nominal_params" in meta else None
        return ModelSpec(meta["spec.name"], layers, int(meta["spec.descriptor_dim"]), nominal)
    except (KeyError, ValueError) as exc:
        raise CorruptionError(f"checkpoint metadata does not describe a model: {exc}") from exc


def save_checkpoint(model: Model, path, metadata: dict[str, str] | None = None,
                    extra_tensors: dict[str, np.ndarray] | None = None):
    meta = _spec_to_metadata(model.spec)
    meta.update(metadata or {})
    tensors = dict(model.param_arrays())
    for name, arr in (extra_tensors or {}).items():
        tensors[f"extra.{name}"] = arr
    formats.write_checkpoint(path, tensors, meta)


def load_checkpoint(path) -> tuple[Model, dict[str, str], dict[str, np.ndarray]]:
    """Load a model; returns (model, metadata, extra tensors e.g. optimizer state)."""
    tensors, meta = formats.read_checkpoint(path)
    spec = _spec_from_metadata(meta)
    reference = build_model(spec, np.random.default_rng(0))
    params: dict[str, Tensor] = {}
    extra: dict[str, np.ndarray] = {}
    for name, arr in tensors.items():
        if name.startswith("extra."):
            extra[name[len("extra."):]] = arr
            continue
        if name not in reference.params:
            raise CorruptionError(f"unexpected tensor {name!r} in checkpoint")
        if reference.params[name].data.shape != arr.shape:
            raise CorruptionError(
                f"tensor {name!r} shape {arr.shape} does not match spec "
                f"{reference.params[name].data.shape}")
        params[name] = dc.parameter(arr, np.float32)
    missing = set(reference.params) - set(params)
    if missing:
        raise CorruptionError(f"checkpoint missing tensors: {sorted(missing)}")
    return Model(spec, params), meta, extra
