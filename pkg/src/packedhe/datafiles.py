"""Dataset and model-parameter ingestion.

IDX image/label files (big-endian, bit-exact magic validation) and the
fixed weights-directory CSV schema:

    conv_k0.csv .. conv_k3.csv   3x3 kernel each
    conv_bias.csv                4 values
    fc1_weight.csv               64 x 2704
    fc1_bias.csv                 64 values
    fc2_weight.csv               10 x 64
    fc2_bias.csv                 10 values
    act1.csv, act2.csv           4 coefficients, constant term first

All CSVs are row-major plain decimal.  Pixels are scaled to [0, 1].
"""

import struct
from pathlib import Path

import numpy as np

from .conv import Kernel
from .pipeline import (
    FC1_IN,
    FC1_OUT,
    FC2_IN,
    FC2_OUT,
    KERNEL_COUNT,
    KERNEL_SIZE,
    ModelWeights,
)

__all__ = [
    "IdxFormatError",
    "load_idx_images",
    "load_idx_labels",
    "load_mnist_idx",
    "load_weights_csv",
    "save_weights_csv",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file; carries the file name and byte offset."""

    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: offset {offset}: {message}")
        self.path = str(path)
        self.offset = offset


def _read_u32(data: bytes, path, offset: int) -> int:
    if len(data) < offset + 4:
        raise IdxFormatError(path, len(data), "truncated header")
    return struct.unpack_from(">I", data, offset)[0]


def load_idx_images(path) -> np.ndarray:
    """Read an IDX image file into a float array in [0, 1], shape (n, h, w)."""
    data = Path(path).read_bytes()
    magic = _read_u32(data, path, 0)
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(path, 0, f"bad image magic 0x{magic:08x}, want 0x{IMAGE_MAGIC:08x}")
    count = _read_u32(data, path, 4)
    rows = _read_u32(data, path, 8)
    cols = _read_u32(data, path, 12)
    need = 16 + count * rows * cols
    if len(data) < need:
        raise IdxFormatError(path, len(data), f"truncated pixel data, need {need} bytes")
    pixels = np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.astype(np.float64).reshape(count, rows, cols) / 255.0


def load_idx_labels(path) -> np.ndarray:
    """Read an IDX label file into a uint8 vector."""
    data = Path(path).read_bytes()
    magic = _read_u32(data, path, 0)
    if magic != LABEL_MAGIC:
        raise IdxFormatError(path, 0, f"bad label magic 0x{magic:08x}, want 0x{LABEL_MAGIC:08x}")
    count = _read_u32(data, path, 4)
    if len(data) < 8 + count:
        raise IdxFormatError(path, len(data), f"truncated labels, need {8 + count} bytes")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).copy()


def load_mnist_idx(images_path, labels_path=None):
    """Load images (and optionally labels, cross-checking the counts)."""
    images = load_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = load_idx_labels(labels_path)
        if labels.shape[0] != images.shape[0]:
            raise IdxFormatError(
                labels_path, 4, f"{labels.shape[0]} labels for {images.shape[0]} images"
            )
    return images, labels


def _load_csv(directory: Path, name: str, shape: tuple) -> np.ndarray:
    path = directory / name
    if not path.exists():
        raise FileNotFoundError(f"missing weight file: {path}")
    arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    if shape is not None:
        flat_want = int(np.prod(shape))
        if arr.size != flat_want:
            raise ValueError(f"{path}: expected shape {shape}, got {arr.shape}")
        arr = arr.reshape(shape)
    return arr


def load_weights_csv(directory) -> ModelWeights:
    """Load the full model from the fixed CSV schema."""
    directory = Path(directory)
    conv_bias = _load_csv(directory, "conv_bias.csv", (KERNEL_COUNT,)).reshape(-1)
    kernels = [
        Kernel(
            _load_csv(directory, f"conv_k{i}.csv", (KERNEL_SIZE, KERNEL_SIZE)),
            bias=float(conv_bias[i]),
        )
        for i in range(KERNEL_COUNT)
    ]
    weights = ModelWeights(
        conv_kernels=kernels,
        fc1_weight=_load_csv(directory, "fc1_weight.csv", (FC1_OUT, FC1_IN)),
        fc1_bias=_load_csv(directory, "fc1_bias.csv", (FC1_OUT,)).reshape(-1),
        fc2_weight=_load_csv(directory, "fc2_weight.csv", (FC2_OUT, FC2_IN)),
        fc2_bias=_load_csv(directory, "fc2_bias.csv", (FC2_OUT,)).reshape(-1),
        act1=tuple(_load_csv(directory, "act1.csv", (4,)).reshape(-1)),
        act2=tuple(_load_csv(directory, "act2.csv", (4,)).reshape(-1)),
    )
    weights.validate()
    return weights


def save_weights_csv(directory, weights: ModelWeights) -> None:
    """Write a model back out in the CSV schema (testing/tooling aid)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, kern in enumerate(weights.conv_kernels):
        np.savetxt(directory / f"conv_k{i}.csv", kern.weights, delimiter=",")
    np.savetxt(
        directory / "conv_bias.csv",
        np.asarray([k.bias for k in weights.conv_kernels])[None, :],
        delimiter=",",
    )
    np.savetxt(directory / "fc1_weight.csv", weights.fc1_weight, delimiter=",")
    np.savetxt(directory / "fc1_bias.csv", np.asarray(weights.fc1_bias)[None, :], delimiter=",")
    np.savetxt(directory / "fc2_weight.csv", weights.fc2_weight, delimiter=",")
    np.savetxt(directory / "fc2_bias.csv", np.asarray(weights.fc2_bias)[None, :], delimiter=",")
    np.savetxt(directory / "act1.csv", np.asarray(weights.act1)[None, :], delimiter=",")
    np.savetxt(directory / "act2.csv", np.asarray(weights.act2)[None, :], delimiter=",")
