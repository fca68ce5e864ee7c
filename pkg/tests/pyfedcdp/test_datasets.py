"""Tests for dataset ingestion."""
import gzip

import httpx
import numpy as np
import pytest

from pyfedcdp.datasets import (
    IDX_IMAGE_MAGIC,
    IDX_LABEL_MAGIC,
    DatasetDownloader,
    DatasetSpec,
    dataset_digest,
    load_csv,
    load_dataset,
    min_max_normalize,
    read_idx,
    synthetic_blobs,
)
from pyfedcdp.errors import DatasetError
from pyfedcdp.nn import Batch
from pyfedcdp.types import DatasetSource


def _idx(array, magic):
    header = np.array([magic, *array.shape], dtype=">u4").tobytes()
    return header + np.ascontiguousarray(array, dtype=">u1").tobytes()


@pytest.fixture
def idx_pair(tmp_path):
    """Ten 3x2 images with labels 0..4 written as IDX files."""
    images = np.arange(60, dtype=np.uint8).reshape(10, 3, 2)
    labels = np.arange(10, dtype=np.uint8) % 5
    image_path = tmp_path / "images-idx3-ubyte"
    label_path = tmp_path / "labels-idx1-ubyte.gz"
    image_path.write_bytes(_idx(images, IDX_IMAGE_MAGIC))
    label_path.write_bytes(gzip.compress(_idx(labels, IDX_LABEL_MAGIC)))
    return image_path, label_path


class TestNormalize:
    """Tests for min-max normalization."""

    def test_training_range(self):
        """Test that features map to [0, 1] and constant columns to 0."""
        train = np.array([[0.0, 5.0], [10.0, 5.0], [5.0, 5.0]])
        scaled, rest = min_max_normalize(train, np.array([[20.0, 7.0]]))
        np.testing.assert_allclose(scaled, [[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]])
        np.testing.assert_allclose(rest, [[1.0, 1.0]])


class TestSynthetic:
    """Tests for synthetic blobs."""

    def test_balanced_labels(self):
        """Test that every class gets an equal share."""
        _, labels = synthetic_blobs(3, 4, 90, 3.0, np.random.default_rng(0))
        assert np.bincount(labels).tolist() == [30, 30, 30]

    def test_load_is_deterministic(self):
        """Test that equal seeds give equal digests and different seeds do not."""
        spec = DatasetSpec(classes=3, dims=5, n=100)
        a, b = load_dataset(spec, 4), load_dataset(spec, 4)
        assert a.digest == b.digest
        assert a.digest != load_dataset(spec, 5).digest

    def test_split_sizes(self):
        """Test the validation fraction and normalization of the split."""
        data = load_dataset(DatasetSpec(n=100, dims=3, validation_fraction=0.25), 0)
        assert len(data.train) == 75 and len(data.validation) == 25
        assert data.input_dim == 3
        assert data.train.features.min() == 0.0 and data.train.features.max() == 1.0

    def test_invalid_spec(self):
        """Test that a single-class synthetic set is rejected."""
        with pytest.raises(ValueError):
            DatasetSpec(classes=1)

    def test_digest_depends_on_labels(self, small_batch):
        """Test that relabelling changes the digest."""
        other = Batch(small_batch.features, small_batch.labels[::-1])
        assert dataset_digest(small_batch) != dataset_digest(other)


class TestCsv:
    """Tests for CSV tables."""

    def test_categorical_columns(self, tmp_path):
        """Test that categorical features are one-hot encoded and labels factorized."""
        path = tmp_path / "adult.csv"
        path.write_text(
            "age,work,income\n"
            "39,private,<=50K\n"
            "50,self,>50K\n"
            ",private,<=50K\n"
            "28,gov,>50K\n"
        )
        features, labels, classes = load_csv(str(path), "income")
        assert classes == 2
        assert labels.tolist() == [0, 1, 1]
        assert features.shape == (3, 4)

    def test_missing_label_column(self, tmp_path):
        """Test that an absent label column is reported."""
        path = tmp_path / "table.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(DatasetError):
            load_csv(str(path), "label")

    def test_missing_file(self, tmp_path):
        """Test that an unreadable file is a dataset error."""
        with pytest.raises(DatasetError):
            load_csv(str(tmp_path / "absent.csv"), "label")

    @pytest.mark.parametrize("text", ["", "a,label\n", "a,label\n,1\n"])
    def test_empty_table(self, tmp_path, text):
        """Test that a table without usable rows is a dataset error."""
        path = tmp_path / "empty.csv"
        path.write_text(text)
        with pytest.raises(DatasetError):
            load_csv(str(path), "label")

    def test_load_dataset(self, tmp_path):
        """Test a CSV dataset end to end."""
        rows = "\n".join(f"{i},{i % 3},{'yes' if i % 2 else 'no'}" for i in range(20))
        path = tmp_path / "t.csv"
        path.write_text("x,y,label\n" + rows + "\n")
        data = load_dataset(
            DatasetSpec(source=DatasetSource.CSV, path=str(path), label_column="label"), 0
        )
        assert data.num_classes == 2
        assert len(data.train) == 16


class TestIdx:
    """Tests for IDX image files."""

    def test_read_plain_and_gzip(self, idx_pair):
        """Test that plain and compressed files parse to the stored arrays."""
        image_path, label_path = idx_pair
        images = read_idx(image_path, IDX_IMAGE_MAGIC)
        assert images.shape == (10, 3, 2)
        assert images[1, 0, 0] == 6
        assert read_idx(label_path, IDX_LABEL_MAGIC).tolist() == [0, 1, 2, 3, 4] * 2

    def test_bad_magic(self, idx_pair):
        """Test that a label file is not accepted as images."""
        with pytest.raises(DatasetError):
            read_idx(idx_pair[1], IDX_IMAGE_MAGIC)

    def test_truncated(self, tmp_path):
        """Test that a short payload is reported."""
        path = tmp_path / "short"
        path.write_bytes(_idx(np.zeros((4, 2, 2), dtype=np.uint8), IDX_IMAGE_MAGIC)[:-3])
        with pytest.raises(DatasetError):
            read_idx(path)

    def test_not_idx(self, tmp_path):
        """Test that arbitrary bytes are rejected."""
        path = tmp_path / "junk"
        path.write_bytes(b"hello world")
        with pytest.raises(DatasetError):
            read_idx(path)

    def test_load_dataset(self, idx_pair):
        """Test an IDX dataset with a subset and a split."""
        spec = DatasetSpec(
            source=DatasetSource.IDX_IMAGES,
            image_path=str(idx_pair[0]),
            label_path=str(idx_pair[1]),
            subset_n=8,
            validation_fraction=0.25,
        )
        data = load_dataset(spec, 0)
        assert data.image_shape == (1, 3, 2)
        assert data.input_dim == 6
        assert len(data.train) + len(data.validation) == 8

    def test_validation_files_take_validation_n(self, idx_pair):
        """Test that a separate validation pair is cut to validation_n examples."""
        spec = DatasetSpec(
            source=DatasetSource.IDX_IMAGES,
            image_path=str(idx_pair[0]),
            label_path=str(idx_pair[1]),
            validation_image_path=str(idx_pair[0]),
            validation_label_path=str(idx_pair[1]),
            subset_n=8,
            validation_n=3,
        )
        data = load_dataset(spec, 0)
        assert len(data.train) == 8
        assert len(data.validation) == 3

    def test_validation_n_needs_validation_files(self, idx_pair):
        """Test that validation_n without a validation pair is rejected."""
        with pytest.raises(ValueError, match="validation_fraction"):
            DatasetSpec(
                source=DatasetSource.IDX_IMAGES,
                image_path=str(idx_pair[0]),
                label_path=str(idx_pair[1]),
                validation_n=3,
            )


class TestDownloader:
    """Tests for DatasetDownloader."""

    @pytest.mark.asyncio
    async def test_ensure_downloads_missing_files(self, tmp_path, idx_pair):
        """Test that missing IDX files are fetched from the base URL."""
        payload = idx_pair[0].read_bytes()
        requested = []

        def handler(request):
            requested.append(str(request.url))
            return httpx.Response(200, content=payload)

        client = httpx.AsyncClient(transport=httpx.MockTransport(handler))
        downloader = DatasetDownloader(http_client=client)
        spec = DatasetSpec(
            source=DatasetSource.IDX_IMAGES,
            image_path="train-images",
            label_path=str(idx_pair[1]),
            base_url="https://example.org/mnist/",
            cache_dir=str(tmp_path / "cache"),
        )
        local = await downloader.ensure(spec)
        assert requested == ["https://example.org/mnist/train-images"]
        assert local.label_path == str(idx_pair[1])
        assert (tmp_path / "cache" / "train-images").read_bytes() == payload

        await downloader.ensure(spec)
        assert len(requested) == 1

        await downloader.close()
        assert not client.is_closed
        await client.aclose()

    @pytest.mark.asyncio
    async def test_http_error(self, tmp_path):
        """Test that a failed download is a dataset error."""
        client = httpx.AsyncClient(
            transport=httpx.MockTransport(lambda request: httpx.Response(404))
        )
        downloader = DatasetDownloader(http_client=client)
        with pytest.raises(DatasetError):
            await downloader.fetch("https://example.org/x", tmp_path / "x")
        assert not (tmp_path / "x").exists()
        await client.aclose()

    @pytest.mark.asyncio
    async def test_non_idx_spec_untouched(self):
        """Test that specs without a base URL pass through."""
        downloader = DatasetDownloader()
        spec = DatasetSpec()
        assert await downloader.ensure(spec) is spec
        await downloader.close()
