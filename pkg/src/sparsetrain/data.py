"""Datasets: synthetic blobs, a procedural 10-class small-image corpus, and
IDX-format binary readers/writers.

The image corpus is rendered on the fly (distinct 16x16 glyph patterns with
random shifts, intensity jitter and pixel noise), written to disk in IDX
format, and always loaded back through the IDX reader, so the binary path is
exercised end to end even when no external files are involved.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataFormatError, DimensionError, ParameterError
from .structure import derive_seed

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


@dataclass
class DatasetHandle:
    """In-memory dataset with explicit train/eval index splits."""

    features: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    eval_idx: np.ndarray
    classes: int
    provenance: str = ""

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise DimensionError(
                f"labels shape {self.labels.shape} does not match "
                f"{self.features.shape[0]} feature rows"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ParameterError(f"labels outside [0, {self.classes})")
        self.train_idx = np.asarray(self.train_idx, dtype=np.intp)
        self.eval_idx = np.asarray(self.eval_idx, dtype=np.intp)

    @property
    def input_shape(self):
        return self.features.shape[1:]

    @property
    def n_train(self):
        return self.train_idx.size

    @property
    def n_eval(self):
        return self.eval_idx.size

    def train_arrays(self):
        return self.features[self.train_idx], self.labels[self.train_idx]

    def eval_arrays(self):
        idx = self.eval_idx if self.eval_idx.size else self.train_idx
        return self.features[idx], self.labels[idx]


def batches(handle, batch_size, shuffle_seed):
    """Yield (X, y) minibatches over the train split in a seeded random order.

    The order is a pure function of ``shuffle_seed``; the final batch may be
    short.
    """
    batch_size = int(batch_size)
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.Generator(np.random.PCG64(int(shuffle_seed)))
    order = handle.train_idx[rng.permutation(handle.n_train)]
    for start in range(0, order.size, batch_size):
        sel = order[start : start + batch_size]
        yield handle.features[sel], handle.labels[sel]


def num_batches(handle, batch_size):
    return -(-handle.n_train // int(batch_size))


# ---------------------------------------------------------------------------
# synthetic blobs
# ---------------------------------------------------------------------------

def synth_blobs(classes=2, dims=2, n_per_class=500, separation=6.0, seed=0,
                eval_fraction=0.2):
    """Gaussian blobs with unit covariance, class means ``separation`` apart
    (placed on a circle in the first two feature dimensions)."""
    classes = int(classes)
    dims = int(dims)
    n_per_class = int(n_per_class)
    if classes < 2:
        raise ParameterError(f"classes must be >= 2, got {classes}")
    if dims < 2:
        raise ParameterError(f"dims must be >= 2, got {dims}")
    if n_per_class < 1:
        raise ParameterError(f"n_per_class must be >= 1, got {n_per_class}")
    if not 0.0 < eval_fraction < 1.0:
        raise ParameterError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "blobs")))
    radius = separation / (2.0 * np.sin(np.pi / classes))
    angles = 2.0 * np.pi * np.arange(classes) / classes
    means = np.zeros((classes, dims))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    n = classes * n_per_class
    labels = np.repeat(np.arange(classes), n_per_class)
    features = rng.normal(0.0, 1.0, (n, dims)) + means[labels]
    order = rng.permutation(n)
    features, labels = features[order], labels[order]
    n_eval = max(1, int(round(eval_fraction * n)))
    idx = np.arange(n)
    return DatasetHandle(
        features=features,
        labels=labels,
        train_idx=idx[n_eval:],
        eval_idx=idx[:n_eval],
        classes=classes,
        provenance=(f"blobs(classes={classes},dims={dims},n_per_class={n_per_class},"
                    f"separation={separation},seed={seed})"),
    )


# ---------------------------------------------------------------------------
# IDX binary format
# ---------------------------------------------------------------------------

def _read_exact(f, nbytes, what):
    start = f.tell()
    buf = f.read(nbytes)
    if len(buf) != nbytes:
        raise DataFormatError(
            f"truncated {what}: wanted {nbytes} bytes at byte offset {start}, "
            f"got {len(buf)}"
        )
    return buf


def _read_be_u32(f, what):
    return int.from_bytes(_read_exact(f, 4, what), "big")


def write_idx_images(path, images):
    """Write a [N, H, W] uint8 array in IDX image format (magic 2051)."""
    images = np.asarray(images)
    if images.ndim != 3 or images.dtype != np.uint8:
        raise ParameterError(f"expected [N,H,W] uint8 images, got {images.shape} {images.dtype}")
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(IDX_IMAGES_MAGIC.to_bytes(4, "big"))
        f.write(n.to_bytes(4, "big"))
        f.write(h.to_bytes(4, "big"))
        f.write(w.to_bytes(4, "big"))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    """Write a [N] integer label array in IDX label format (magic 2049)."""
    labels = np.asarray(labels)
    if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
        raise ParameterError(f"expected [N] integer labels, got {labels.shape} {labels.dtype}")
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise ParameterError("labels must fit in one byte")
    with open(path, "wb") as f:
        f.write(IDX_LABELS_MAGIC.to_bytes(4, "big"))
        f.write(int(labels.size).to_bytes(4, "big"))
        f.write(labels.astype(np.uint8).tobytes())


def read_idx_images(path):
    """Read IDX images to float64 in [0, 1] with shape [N, 1, H, W]."""
    with open(path, "rb") as f:
        magic = _read_be_u32(f, "image magic")
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(
                f"bad image magic {magic} (expected {IDX_IMAGES_MAGIC}) at byte offset 0"
            )
        n = _read_be_u32(f, "image count")
        h = _read_be_u32(f, "image rows")
        w = _read_be_u32(f, "image cols")
        raw = _read_exact(f, n * h * w, "image payload")
        extra = f.read(1)
        if extra:
            raise DataFormatError(f"trailing bytes after image payload at byte offset {f.tell() - 1}")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(n, 1, h, w)
    return pixels.astype(np.float64) / 255.0


def read_idx_labels(path):
    """Read IDX labels to an int64 vector."""
    with open(path, "rb") as f:
        magic = _read_be_u32(f, "label magic")
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(
                f"bad label magic {magic} (expected {IDX_LABELS_MAGIC}) at byte offset 0"
            )
        n = _read_be_u32(f, "label count")
        raw = _read_exact(f, n, "label payload")
        extra = f.read(1)
        if extra:
            raise DataFormatError(f"trailing bytes after label payload at byte offset {f.tell() - 1}")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def load_idx_dataset(train_images, train_labels, eval_images=None, eval_labels=None,
                     classes=None, provenance=None):
    """Assemble a :class:`DatasetHandle` from IDX file pairs."""
    xs = read_idx_images(train_images)
    ys = read_idx_labels(train_labels)
    if xs.shape[0] != ys.shape[0]:
        raise DataFormatError(
            f"image/label count mismatch: {xs.shape[0]} images vs {ys.shape[0]} labels"
        )
    n_train = xs.shape[0]
    if eval_images is not None:
        xe = read_idx_images(eval_images)
        ye = read_idx_labels(eval_labels)
        if xe.shape[0] != ye.shape[0]:
            raise DataFormatError(
                f"image/label count mismatch: {xe.shape[0]} images vs {ye.shape[0]} labels"
            )
        if xe.shape[1:] != xs.shape[1:]:
            raise DataFormatError(
                f"eval image shape {xe.shape[1:]} != train image shape {xs.shape[1:]}"
            )
        xs = np.concatenate([xs, xe])
        ys = np.concatenate([ys, ye])
    if classes is None:
        classes = int(ys.max()) + 1 if ys.size else 0
    idx = np.arange(xs.shape[0])
    return DatasetHandle(
        features=xs,
        labels=ys,
        train_idx=idx[:n_train],
        eval_idx=idx[n_train:],
        classes=int(classes),
        provenance=provenance or f"idx({os.path.basename(str(train_images))})",
    )


# ---------------------------------------------------------------------------
# procedural small-image corpus
# ---------------------------------------------------------------------------

def _glyph(class_id, side):
    """Deterministic 2-d binary pattern for one of ten classes."""
    yy, xx = np.mgrid[0:side, 0:side]
    c = (side - 1) / 2.0
    p = max(side // 4, 2)
    half = max(p // 2, 1)
    r2 = (yy - c) ** 2 + (xx - c) ** 2
    if class_id == 0:
        pat = (yy // p) % 2 == 0
    elif class_id == 1:
        pat = (xx // p) % 2 == 0
    elif class_id == 2:
        pat = np.abs(yy - xx) <= half
    elif class_id == 3:
        pat = np.abs(yy + xx - (side - 1)) <= half
    elif class_id == 4:
        pat = r2 <= (side / 3.0) ** 2
    elif class_id == 5:
        pat = ((side / 5.0) ** 2 <= r2) & (r2 <= (side / 2.5) ** 2)
    elif class_id == 6:
        pat = (np.abs(yy - c) <= half) | (np.abs(xx - c) <= half)
    elif class_id == 7:
        pat = (np.abs(yy - xx) <= half) | (np.abs(yy + xx - (side - 1)) <= half)
    elif class_id == 8:
        edge = np.minimum(np.minimum(yy, xx), np.minimum(side - 1 - yy, side - 1 - xx))
        pat = edge < half
    elif class_id == 9:
        pat = ((yy // p) + (xx // p)) % 2 == 0
    else:
        raise ParameterError(f"glyph classes are 0..9, got {class_id}")
    return pat.astype(np.float64)


def render_glyphs(n, side=16, seed=0, noise=0.18, max_shift=2):
    """Render ``n`` noisy, shifted, intensity-jittered glyph images.

    Returns (uint8 images [n, side, side], int labels [n]); classes are
    balanced and the order is shuffled.
    """
    rng = np.random.Generator(np.random.PCG64(derive_seed(seed, "glyphs")))
    labels = np.arange(n) % 10
    rng.shuffle(labels)
    protos = np.stack([_glyph(k, side) for k in range(10)])
    images = np.empty((n, side, side), dtype=np.uint8)
    for i in range(n):
        img = protos[labels[i]]
        dy, dx = rng.integers(-max_shift, max_shift + 1, 2)
        img = np.roll(np.roll(img, dy, axis=0), dx, axis=1)
        img = img * rng.uniform(0.65, 1.0) + rng.normal(0.0, noise, (side, side))
        images[i] = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return images, labels.astype(np.int64)


def ensure_smallimg(directory, n_train=10000, n_eval=2000, side=16, seed=0,
                    noise=0.18, max_shift=2):
    """Materialise the glyph corpus as IDX files under ``directory`` (if not
    already present) and load it back through the IDX reader."""
    os.makedirs(directory, exist_ok=True)
    tag = f"{side}x{side}-{n_train}-{n_eval}-s{seed}"
    paths = {
        "train_images": os.path.join(directory, f"glyphs-{tag}-train-images.idx"),
        "train_labels": os.path.join(directory, f"glyphs-{tag}-train-labels.idx"),
        "eval_images": os.path.join(directory, f"glyphs-{tag}-eval-images.idx"),
        "eval_labels": os.path.join(directory, f"glyphs-{tag}-eval-labels.idx"),
    }
    if not all(os.path.exists(p) for p in paths.values()):
        xs, ys = render_glyphs(n_train, side=side, seed=derive_seed(seed, "train"),
                               noise=noise, max_shift=max_shift)
        write_idx_images(paths["train_images"], xs)
        write_idx_labels(paths["train_labels"], ys)
        xe, ye = render_glyphs(n_eval, side=side, seed=derive_seed(seed, "eval"),
                               noise=noise, max_shift=max_shift)
        write_idx_images(paths["eval_images"], xe)
        write_idx_labels(paths["eval_labels"], ye)
    return load_idx_dataset(
        paths["train_images"], paths["train_labels"],
        paths["eval_images"], paths["eval_labels"],
        classes=10,
        provenance=f"smallimg(side={side},n_train={n_train},n_eval={n_eval},seed={seed})",
    )


# ---------------------------------------------------------------------------
# config-driven construction
# ---------------------------------------------------------------------------

def _coerce(params, spec_types, dataset):
    out = {}
    for key, value in params.items():
        if key not in spec_types:
            known = ", ".join(sorted(spec_types))
            raise ConfigError(f"data.{key}: unknown key for dataset '{dataset}' (known: {known})")
        caster = spec_types[key]
        try:
            out[key] = caster(value)
        except (TypeError, ValueError):
            raise ConfigError(f"data.{key}: cannot parse {value!r}") from None
    return out


def dataset_from_config(name, params, workdir="."):
    """Build the dataset named by a run config. ``params`` comes straight from
    the config's ``[data]`` section (string values are fine)."""
    if name == "blobs":
        typed = _coerce(params, {
            "classes": int, "dims": int, "n_per_class": int,
            "separation": float, "seed": int, "eval_fraction": float,
        }, name)
        return synth_blobs(**typed)
    if name == "smallimg":
        typed = _coerce(params, {
            "n_train": int, "n_eval": int, "side": int, "seed": int,
            "noise": float, "max_shift": int, "dir": str,
        }, name)
        directory = typed.pop("dir", os.path.join(workdir, "data"))
        return ensure_smallimg(directory, **typed)
    if name == "idx":
        typed = _coerce(params, {
            "train_images": str, "train_labels": str,
            "eval_images": str, "eval_labels": str, "classes": int,
        }, name)
        for key in ("train_images", "train_labels"):
            if key not in typed:
                raise ConfigError(f"data.{key}: required for dataset 'idx'")
        return load_idx_dataset(**typed)
    raise ConfigError(f"run.dataset: unknown dataset '{name}' (known: blobs, smallimg, idx)")
