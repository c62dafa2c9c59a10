"""Adding-task generator, MNIST IDX reader/writer and the pMNIST permutation."""

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .core import make_rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
MNIST_LEN = 784


class IdxFormatError(ValueError):
    pass


class DatasetMismatchError(ValueError):
    pass


# --- adding task --------------------------------------------------------------

@dataclass
class AddingSample:
    x: np.ndarray
    m: np.ndarray
    y: float


@dataclass
class AddingBatch:
    """``count`` adding-task sequences stored as arrays.

    x: (count, N) values in [0, 1); m: (count, N) markers with two ones per
    row; y: (count,) sum of the two marked values.
    """

    x: np.ndarray
    m: np.ndarray
    y: np.ndarray

    def __len__(self):
        return self.x.shape[0]

    def __getitem__(self, i):
        return AddingSample(self.x[i], self.m[i], float(self.y[i]))

    def samples(self):
        return [self[i] for i in range(len(self))]

    def inputs(self):
        """Network input: the pair (x_n, m_n) at every step, shape (count, N, 2)."""
        return np.stack([self.x, self.m], axis=-1)

    def targets(self):
        return self.y.reshape(-1, 1)


def gen_adding_batch(rng, n, count):
    if n < 2:
        raise ValueError(f"adding task needs N >= 2, got {n}")
    x = rng.random((count, n))
    # two distinct marker positions, uniform over all ordered pairs
    first = rng.integers(0, n, size=count)
    second = rng.integers(0, n - 1, size=count)
    second += second >= first
    m = np.zeros((count, n))
    rows = np.arange(count)
    m[rows, first] = 1.0
    m[rows, second] = 1.0
    y = (x * m).sum(axis=1)
    return AddingBatch(x, m, y)


def write_adding_csv(fh, batch):
    n = batch.x.shape[1]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([f"x_{i}" for i in range(1, n + 1)]
               + [f"m_{i}" for i in range(1, n + 1)] + ["y"])
    for xs, ms, y in zip(batch.x, batch.m, batch.y):
        w.writerow([format(v, ".17g") for v in xs] + [str(int(v)) for v in ms]
                   + [format(y, ".17g")])


def read_adding_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    n = (len(rows[0]) - 1) // 2
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return AddingBatch(data[:, :n], data[:, n:2 * n], data[:, 2 * n])


# --- MNIST IDX ------------------------------------------------------------------

def read_idx(path, magic):
    """Parse a big-endian IDX file of unsigned bytes; returns a uint8 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8:
        raise OSError(f"{path}: truncated IDX header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise IdxFormatError(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise OSError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise OSError(f"{path}: truncated, expected {size} data bytes, found {len(raw) - header}")
    if len(raw) - header > size:
        raise IdxFormatError(f"{path}: {len(raw) - header - size} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def idx_bytes(array):
    array = np.asarray(array)
    if array.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX data is supported")
    magic = 0x00000800 | array.ndim
    return struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes()


def write_idx(path, array):
    with open(path, "wb") as fh:
        fh.write(idx_bytes(array))


@dataclass
class SequenceDataset:
    """Labelled scalar sequences: features (count, N, 1) in [0, 1], labels (count,)."""

    features: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, start, stop):
        return SequenceDataset(self.features[start:stop], self.labels[start:stop])


def load_mnist_idx(images_path, labels_path, limit=None):
    images = read_idx(images_path, IDX_IMAGE_MAGIC)
    labels = read_idx(labels_path, IDX_LABEL_MAGIC)
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected 3 dimensions, got {images.ndim}")
    if images.shape[0] != labels.shape[0]:
        raise DatasetMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    feats = images.reshape(images.shape[0], -1, 1).astype(np.float64) / 255.0
    return SequenceDataset(feats, labels.astype(np.int64))


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class PermutationSpec:
    seed: int
    perm: np.ndarray = None

    def __post_init__(self):
        if self.perm is None:
            self.perm = make_rng(self.seed).permutation(MNIST_LEN)
        self.perm = np.asarray(self.perm)

    def inverse(self):
        return PermutationSpec(self.seed, np.argsort(self.perm))


def permute_dataset(data, spec):
    if data.features.shape[1] != spec.perm.shape[0]:
        raise ValueError(
            f"sequence length {data.features.shape[1]} does not match permutation "
            f"of length {spec.perm.shape[0]}")
    return SequenceDataset(data.features[:, spec.perm], data.labels.copy())
