"""Dataset ingestion: synthetic blobs, CSV tables and IDX image files."""
from __future__ import annotations

import gzip
import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Tuple

import aiofiles
import httpx
import numpy as np
import pandas as pd

from .errors import DatasetError
from .nn.types import Batch
from .seeding import derive_rng
from .types import DatasetSource, Stream

__all__ = [
    "Dataset",
    "DatasetDownloader",
    "DatasetSpec",
    "IDX_IMAGE_MAGIC",
    "IDX_LABEL_MAGIC",
    "dataset_digest",
    "load_csv",
    "load_dataset",
    "min_max_normalize",
    "read_idx",
    "synthetic_blobs",
]

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
DEFAULT_VALIDATION_N = 1000
_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


@dataclass(frozen=True)
class DatasetSpec:
    """Where a dataset comes from and how much of it to use."""

    source: DatasetSource = DatasetSource.SYNTHETIC_BLOBS
    classes: int = 2
    dims: int = 16
    n: int = 1200
    separation: float = 3.0
    path: Optional[str] = None
    label_column: Optional[str] = None
    image_path: Optional[str] = None
    label_path: Optional[str] = None
    validation_image_path: Optional[str] = None
    validation_label_path: Optional[str] = None
    subset_n: int = 6000
    validation_n: Optional[int] = None
    validation_fraction: float = 0.2
    base_url: Optional[str] = None
    cache_dir: str = "data"

    def __post_init__(self) -> None:
        if self.source is DatasetSource.SYNTHETIC_BLOBS:
            if self.classes < 2 or self.dims < 1 or self.n < self.classes:
                raise ValueError("synthetic blobs need classes >= 2, dims >= 1 and n >= classes")
        if self.source is DatasetSource.CSV and (not self.path or not self.label_column):
            raise ValueError("a csv dataset needs path and label_column")
        if self.source is DatasetSource.IDX_IMAGES and (not self.image_path or not self.label_path):
            raise ValueError("an idx dataset needs image_path and label_path")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.validation_n is not None:
            if not (self.validation_image_path and self.validation_label_path):
                raise ValueError(
                    "validation_n needs validation_image_path and validation_label_path; "
                    "use validation_fraction to split a single source"
                )
            if self.validation_n < 1:
                raise ValueError(f"validation_n must be positive, got {self.validation_n}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Normalized train and validation batches."""

    train: Batch
    validation: Batch
    num_classes: int
    image_shape: Optional[Tuple[int, int, int]] = None

    @property
    def input_dim(self) -> int:
        return int(self.train.features.shape[1])

    @property
    def digest(self) -> str:
        return dataset_digest(self.train, self.validation)


def dataset_digest(*batches: Batch) -> str:
    """SHA-256 over the features and labels of ``batches``."""
    h = hashlib.sha256()
    for batch in batches:
        h.update(np.ascontiguousarray(batch.features, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(batch.labels, dtype="<i8").tobytes())
    return h.hexdigest()


def min_max_normalize(
    train: np.ndarray, other: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """Scale each feature to ``[0, 1]`` using the training range; constant features become 0."""
    lo = train.min(axis=0)
    span = train.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    scaled = (train - lo) / span
    rest = None if other is None else np.clip((other - lo) / span, 0.0, 1.0)
    return scaled, rest


def _split(
    features: np.ndarray, labels: np.ndarray, fraction: float, rng: np.random.Generator
) -> Tuple[Batch, Batch]:
    order = rng.permutation(labels.shape[0])
    cut = int(round(labels.shape[0] * (1.0 - fraction)))
    train_idx, val_idx = order[:cut], order[cut:]
    train_x, val_x = min_max_normalize(features[train_idx], features[val_idx])
    return Batch(train_x, labels[train_idx]), Batch(val_x, labels[val_idx])


# ----------------------------------------------------------------------
# Sources
# ----------------------------------------------------------------------


def synthetic_blobs(
    classes: int, dims: int, n: int, separation: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    """Gaussian blobs with unit spread around centers drawn at scale ``separation``."""
    centers = rng.normal(0.0, separation, size=(classes, dims))
    labels = rng.permutation(np.arange(n) % classes)
    features = centers[labels] + rng.normal(0.0, 1.0, size=(n, dims))
    return features, labels.astype(np.int64)


def load_csv(path: str, label_column: str) -> Tuple[np.ndarray, np.ndarray, int]:
    """Read a CSV with a header row; categorical feature columns are one-hot encoded."""
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        logger.error("Cannot read CSV dataset %s: %s", path, err)
        raise DatasetError(f"cannot read CSV dataset {path}: {err}") from err
    if label_column not in frame.columns:
        raise DatasetError(f"label column {label_column!r} not found in {path}")
    frame = frame.dropna()
    if frame.empty:
        raise DatasetError(f"{path} has no complete rows")
    codes, uniques = pd.factorize(frame[label_column], sort=True)
    features = pd.get_dummies(frame.drop(columns=[label_column]), dtype=np.float64)
    return features.to_numpy(dtype=np.float64), codes.astype(np.int64), len(uniques)


def read_idx(path: str | Path, expected_magic: Optional[int] = None) -> np.ndarray:
    """Parse an IDX file (optionally gzip-compressed) into an array."""
    try:
        raw = Path(path).read_bytes()
    except OSError as err:
        logger.error("Cannot read IDX file %s: %s", path, err)
        raise DatasetError(f"cannot read IDX file {path}: {err}") from err
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DatasetError(f"{path} is not an IDX file")
    magic = int.from_bytes(raw[:4], "big")
    if expected_magic is not None and magic != expected_magic:
        raise DatasetError(f"{path}: magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dtype = _IDX_DTYPES.get(raw[2])
    if dtype is None:
        raise DatasetError(f"{path}: unknown IDX element type 0x{raw[2]:02x}")
    ndim = raw[3]
    header = 4 + 4 * ndim
    shape = tuple(int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim))
    count = int(np.prod(shape)) if shape else 0
    if len(raw) < header + count * dtype.itemsize:
        raise DatasetError(f"{path}: truncated IDX payload")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=header).reshape(shape)


def _load_idx_pair(
    image_path: str, label_path: str, limit: int
) -> Tuple[np.ndarray, np.ndarray, Tuple[int, int, int]]:
    images = read_idx(image_path, IDX_IMAGE_MAGIC)
    labels = read_idx(label_path, IDX_LABEL_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(f"{image_path} and {label_path} hold different example counts")
    images, labels = images[:limit], labels[:limit]
    height, width = images.shape[1], images.shape[2]
    flat = images.reshape(images.shape[0], -1).astype(np.float64)
    return flat, labels.astype(np.int64), (1, height, width)


def load_dataset(spec: DatasetSpec, master_seed: int) -> Dataset:
    """Load and normalize a dataset; shuffles and synthesis use the DATA stream."""
    rng = derive_rng(master_seed, Stream.DATA, 0)
    if spec.source is DatasetSource.SYNTHETIC_BLOBS:
        features, labels = synthetic_blobs(spec.classes, spec.dims, spec.n, spec.separation, rng)
        train, validation = _split(features, labels, spec.validation_fraction, rng)
        return Dataset(train, validation, spec.classes)

    if spec.source is DatasetSource.CSV:
        features, labels, classes = load_csv(spec.path, spec.label_column)  # type: ignore[arg-type]
        train, validation = _split(features, labels, spec.validation_fraction, rng)
        return Dataset(train, validation, classes)

    features, labels, shape = _load_idx_pair(
        spec.image_path, spec.label_path, spec.subset_n  # type: ignore[arg-type]
    )
    if spec.validation_image_path and spec.validation_label_path:
        val_x, val_y, _ = _load_idx_pair(
            spec.validation_image_path,
            spec.validation_label_path,
            DEFAULT_VALIDATION_N if spec.validation_n is None else spec.validation_n,
        )
        train_x, val_x = min_max_normalize(features, val_x)
        train, validation = Batch(train_x, labels), Batch(val_x, val_y)
    else:
        train, validation = _split(features, labels, spec.validation_fraction, rng)
    classes = int(max(train.labels.max(), validation.labels.max())) + 1
    return Dataset(train, validation, classes, shape)


# ----------------------------------------------------------------------
# Download
# ----------------------------------------------------------------------


class DatasetDownloader:
    """Fetches IDX files named in a spec from ``base_url`` into ``cache_dir``.

    Parameters
    ----------
    http_client
        Pre-configured httpx AsyncClient to use (if None, a new one will be created).
    """

    def __init__(self, *, http_client: Optional[httpx.AsyncClient] = None) -> None:
        self._client_provided = http_client is not None
        self._client = http_client if http_client is not None else httpx.AsyncClient()

    async def close(self) -> None:
        """Close the HTTP client session if we created it."""
        if not self._client_provided:
            await self._client.aclose()

    async def fetch(self, url: str, destination: Path) -> Path:
        """Download ``url`` to ``destination`` unless it already exists."""
        if destination.exists():
            logger.debug("Using cached %s", destination)
            return destination
        logger.debug("GET %s", url)
        try:
            response = await self._client.get(url, follow_redirects=True)
            response.raise_for_status()
        except httpx.HTTPError as err:
            logger.error("Download of %s failed: %s", url, err)
            raise DatasetError(f"cannot download {url}: {err}") from err
        destination.parent.mkdir(parents=True, exist_ok=True)
        async with aiofiles.open(destination, "wb") as fp:
            await fp.write(response.content)
        return destination

    async def ensure(self, spec: DatasetSpec) -> DatasetSpec:
        """Return ``spec`` with IDX paths pointing at local files, downloading as needed."""
        if spec.source is not DatasetSource.IDX_IMAGES or not spec.base_url:
            return spec
        base = spec.base_url.rstrip("/")
        cache = Path(spec.cache_dir)
        local = {}
        for name in ("image_path", "label_path", "validation_image_path", "validation_label_path"):
            value = getattr(spec, name)
            if not value:
                continue
            path = Path(value)
            if path.exists():
                local[name] = str(path)
                continue
            fetched = await self.fetch(f"{base}/{path.name}", cache / path.name)
            local[name] = str(fetched)
        return replace(spec, **local)
