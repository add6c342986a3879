import gzip
import io
import struct
import tarfile

import numpy as np
import pytest

from dtc import data
from dtc.data import (
    BatchIterator,
    Dataset,
    normalize,
    parse_idx_images,
    parse_idx_labels,
    serialize_idx_images,
    serialize_idx_labels,
)
from dtc.errors import DataError, DatasetMissingError, FormatError, LengthError
from dtc.linalg import SeededRng


def fixture_images():
    img = np.zeros((2, 784), dtype=np.uint8)
    img[0, :5] = [0, 1, 128, 254, 255]
    img[1, -3:] = [7, 8, 9]
    return img


class TestIdx:
    def test_image_round_trip(self):
        img = fixture_images()
        raw = serialize_idx_images(img)
        assert raw[:4] == b"\x00\x00\x08\x03"
        assert struct.unpack(">3I", raw[4:16]) == (2, 28, 28)
        np.testing.assert_array_equal(parse_idx_images(raw), img)

    def test_hand_built_bytes(self):
        raw = struct.pack(">4I", 0x803, 2, 2, 2) + bytes([1, 2, 3, 4, 5, 6, 7, 8])
        np.testing.assert_array_equal(parse_idx_images(raw), [[1, 2, 3, 4], [5, 6, 7, 8]])

    def test_label_round_trip(self):
        np.testing.assert_array_equal(parse_idx_labels(serialize_idx_labels([3, 7])), [3, 7])

    def test_label_magic_rejected_by_image_parser(self):
        with pytest.raises(FormatError):
            parse_idx_images(serialize_idx_labels([1, 2]))

    def test_image_magic_rejected_by_label_parser(self):
        with pytest.raises(FormatError):
            parse_idx_labels(serialize_idx_images(fixture_images()))

    def test_truncated_images(self):
        raw = serialize_idx_images(fixture_images())
        with pytest.raises(LengthError):
            parse_idx_images(raw[:-1])

    def test_full_size_header_arithmetic(self):
        header = struct.pack(">4I", 0x803, 60000, 28, 28)
        with pytest.raises(LengthError, match="47040000"):
            parse_idx_images(header + bytes(10))

    def test_truncated_labels(self):
        with pytest.raises(LengthError):
            parse_idx_labels(serialize_idx_labels([1, 2, 3])[:-2])

    def test_truncated_header(self):
        with pytest.raises(LengthError):
            parse_idx_labels(b"\x00\x00")

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            parse_idx_labels(serialize_idx_labels([3, 12]))

    def test_error_classes_distinct(self):
        assert FormatError.code != LengthError.code
        assert not issubclass(FormatError, LengthError) and not issubclass(LengthError, FormatError)


class TestNormalize:
    def test_scaling(self):
        ds = normalize(np.array([[0, 255]], dtype=np.uint8), [1])
        np.testing.assert_array_equal(ds.images, [[0.0, 1.0]])


def tiny_dataset(n):
    return Dataset(np.arange(n, dtype=float)[:, None], np.zeros(n, dtype=np.int64))


class TestBatchIterator:
    def test_epoch_batch_counts(self):
        it = BatchIterator(tiny_dataset(60000), 512, SeededRng(0))
        sizes = [it.next_batch()[0].shape[0] for _ in range(118)]
        assert sizes[:117] == [512] * 117 and sizes[117] == 96
        assert it.batches_per_epoch() == 118
        assert it.next_batch()[0].shape[0] == 512 and it.epoch == 1

    def test_epoch_is_permutation(self):
        ds = tiny_dataset(1000)
        it = BatchIterator(ds, 64, SeededRng(3))
        seen = np.concatenate([it.next_batch()[0][:, 0] for _ in range(it.batches_per_epoch())])
        np.testing.assert_array_equal(np.sort(seen), ds.images[:, 0])
        assert not np.array_equal(seen, ds.images[:, 0])

    def test_same_seed_same_sequence(self):
        a = BatchIterator(tiny_dataset(300), 32, SeededRng(9))
        b = BatchIterator(tiny_dataset(300), 32, SeededRng(9))
        for _ in range(25):
            np.testing.assert_array_equal(a.next_batch()[0], b.next_batch()[0])

    def test_epochs_reshuffle(self):
        it = BatchIterator(tiny_dataset(100), 100, SeededRng(1))
        assert not np.array_equal(it.next_batch()[0], it.next_batch()[0])


def write_fixture_dir(path, gz=False):
    img = fixture_images()
    blobs = {
        "train-images-idx3-ubyte": serialize_idx_images(img),
        "train-labels-idx1-ubyte": serialize_idx_labels([3, 7]),
        "t10k-images-idx3-ubyte": serialize_idx_images(img[:1]),
        "t10k-labels-idx1-ubyte": serialize_idx_labels([3]),
    }
    for name, blob in blobs.items():
        if gz:
            (path / f"{name}.gz").write_bytes(gzip.compress(blob))
        else:
            (path / name).write_bytes(blob)
    return blobs


class TestLoading:
    @pytest.mark.parametrize("gz", [False, True])
    def test_load_fixture(self, tmp_path, gz):
        write_fixture_dir(tmp_path, gz)
        train, test = data.load_mnist(tmp_path)
        assert len(train) == 2 and len(test) == 1
        assert train.images[0, 4] == 1.0 and train.labels.tolist() == [3, 7]

    def test_env_var(self, tmp_path, monkeypatch):
        write_fixture_dir(tmp_path)
        monkeypatch.setenv("DTC_DATA_DIR", str(tmp_path))
        train, _ = data.load_mnist()
        assert len(train) == 2

    def test_missing(self, tmp_path):
        with pytest.raises(DatasetMissingError):
            data.load_mnist(tmp_path / "nowhere")

    def test_fetch_falls_back_to_tarball(self, tmp_path, monkeypatch):
        src = tmp_path / "src"
        src.mkdir()
        blobs = write_fixture_dir(src)
        buf = io.BytesIO()
        with tarfile.open(fileobj=buf, mode="w:gz") as tar:
            for name, blob in blobs.items():
                info = tarfile.TarInfo(f"package/data/{name}")
                info.size = len(blob)
                tar.addfile(info, io.BytesIO(blob))

        def fake_download(url, timeout):
            if url == data.NPM_TARBALL:
                return buf.getvalue()
            raise OSError("offline")

        monkeypatch.setattr(data, "_download", fake_download)
        out = data.fetch_mnist(tmp_path / "dest")
        for name, blob in blobs.items():
            assert (out / name).read_bytes() == blob

    def test_fetch_from_gzip_mirror(self, tmp_path, monkeypatch):
        src = tmp_path / "src"
        src.mkdir()
        blobs = write_fixture_dir(src)
        monkeypatch.setattr(
            data, "_download", lambda url, timeout: gzip.compress(blobs[url.rsplit("/", 1)[1][:-3]])
        )
        out = data.fetch_mnist(tmp_path / "dest")
        assert (out / "t10k-labels-idx1-ubyte").read_bytes() == blobs["t10k-labels-idx1-ubyte"]


@pytest.fixture(scope="module")
def mnist_dir():
    directory = data.resolve_data_dir()
    if not (directory / data.FILES["train_labels"]).exists():
        pytest.skip(f"MNIST not present in {directory}")
    return directory


class TestRealFiles:
    def test_train_label_count(self, mnist_dir):
        labels = parse_idx_labels((mnist_dir / data.FILES["train_labels"]).read_bytes())
        assert labels.size == 60000

    def test_mean_pixel(self, mnist_dir):
        train, test = data.load_mnist(mnist_dir)
        assert abs(train.images.mean() - 0.1307) < 0.001
        assert len(test) == 10000
