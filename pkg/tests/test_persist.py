"""On-disk format tests: bitwise round-trips, exact size arithmetic, and
distinct failure modes for malformed files."""

import os
import struct

import numpy as np
import pytest

from coopsal import persist
from coopsal.persist import Checkpoint


def random_f32(rng, shape):
    return rng.standard_normal(shape).astype(np.float32)


class TestTenContainer:
    @pytest.mark.parametrize("shape", [(5,), (2, 3), (4, 1, 2, 2), (1, 3, 8, 8)])
    def test_round_trip_is_bitwise(self, tmp_path, shape):
        arr = random_f32(np.random.default_rng(sum(shape) + 31 * len(shape)), shape)
        path = tmp_path / "t.ten"
        persist.write_ten(arr, path)
        back = persist.read_ten(path)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, arr)

    def test_non_contiguous_input_round_trips(self, tmp_path):
        arr = random_f32(np.random.default_rng(0), (4, 6))[:, ::2]
        path = tmp_path / "t.ten"
        persist.write_ten(arr, path)
        np.testing.assert_array_equal(persist.read_ten(path), arr)

    def test_file_size_matches_the_format_exactly(self, tmp_path):
        arr = random_f32(np.random.default_rng(1), (7, 3, 4, 4))
        path = tmp_path / "t.ten"
        persist.write_ten(arr, path)
        header = 4 + 4 + 4            # magic, version, ndim
        assert os.path.getsize(path) == header + 4 * arr.ndim + 4 * arr.size

    def test_rejects_non_float32(self, tmp_path):
        with pytest.raises(ValueError, match="float32"):
            persist.write_ten(np.zeros((2, 2), dtype=np.float64), tmp_path / "t.ten")

    def test_bad_magic_is_a_distinct_error(self, tmp_path):
        path = tmp_path / "t.ten"
        persist.write_ten(random_f32(np.random.default_rng(2), (3,)), path)
        blob = path.read_bytes()
        path.write_bytes(b"XXXX" + blob[4:])
        with pytest.raises(persist.MagicError):
            persist.read_ten(path)

    def test_unknown_version_is_a_distinct_error(self, tmp_path):
        path = tmp_path / "t.ten"
        persist.write_ten(random_f32(np.random.default_rng(3), (3,)), path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(persist.VersionError):
            persist.read_ten(path)

    @pytest.mark.parametrize("keep", [2, 6, 10, 14, 19])
    def test_truncation_is_a_distinct_error(self, tmp_path, keep):
        path = tmp_path / "t.ten"
        persist.write_ten(random_f32(np.random.default_rng(4), (2, 2)), path)
        blob = path.read_bytes()
        assert keep < len(blob)
        path.write_bytes(blob[:keep])
        with pytest.raises(persist.TruncatedError):
            persist.read_ten(path)

    def test_trailing_bytes_are_rejected(self, tmp_path):
        path = tmp_path / "t.ten"
        persist.write_ten(random_f32(np.random.default_rng(5), (3,)), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(persist.PersistError):
            persist.read_ten(path)

    def test_write_leaves_no_temp_files(self, tmp_path):
        persist.write_ten(random_f32(np.random.default_rng(6), (3,)), tmp_path / "t.ten")
        assert sorted(p.name for p in tmp_path.iterdir()) == ["t.ten"]


def sample_checkpoint():
    rng = np.random.default_rng(7)
    tensors = {
        "gen.stem.weight": random_f32(rng, (4, 3, 3, 3)),
        "gen.stem.bias": random_f32(rng, (4,)),
        "energy.fc1.weight": random_f32(rng, (16, 8)),
        "adam.m.gen.stem.weight": random_f32(rng, (4, 3, 3, 3)),
        "energy.b1.bn.running_var": np.abs(random_f32(rng, (4,))),
    }
    config = {"mode": "full", "epochs": "40", "lr_g": "0.0002"}
    return Checkpoint(tensors=tensors, config=config, seed=11, epoch=3,
                      iteration=120)


class TestCheckpoint:
    def test_round_trip_preserves_everything(self, tmp_path):
        ckpt = sample_checkpoint()
        path = tmp_path / "run.ckpt"
        persist.save_checkpoint(ckpt, path)
        back = persist.load_checkpoint(path)
        assert list(back.tensors) == list(ckpt.tensors)
        for name in ckpt.tensors:
            np.testing.assert_array_equal(back.tensors[name], ckpt.tensors[name])
        assert back.config == ckpt.config
        assert (back.seed, back.epoch, back.iteration) == (11, 3, 120)

    def test_saving_twice_is_bitwise_identical(self, tmp_path):
        ckpt = sample_checkpoint()
        persist.save_checkpoint(ckpt, tmp_path / "a.ckpt")
        persist.save_checkpoint(ckpt, tmp_path / "b.ckpt")
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_file_size_matches_the_format_exactly(self, tmp_path):
        ckpt = sample_checkpoint()
        path = tmp_path / "run.ckpt"
        persist.save_checkpoint(ckpt, path)
        expected = 4 + 4 + 4          # magic, version, tensor count
        for name, arr in ckpt.tensors.items():
            expected += 4 + len(name.encode()) + (12 + 4 * arr.ndim + 4 * arr.size)
        meta = f"seed={ckpt.seed}\nepoch={ckpt.epoch}\niteration={ckpt.iteration}\n"
        meta += "".join(f"config.{k}={v}\n" for k, v in ckpt.config.items())
        expected += 4 + len(meta.encode())
        assert os.path.getsize(path) == expected

    def test_unknown_version_is_rejected(self, tmp_path):
        path = tmp_path / "run.ckpt"
        persist.save_checkpoint(sample_checkpoint(), path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(blob))
        with pytest.raises(persist.VersionError):
            persist.load_checkpoint(path)

    def test_wrong_magic_is_rejected(self, tmp_path):
        path = tmp_path / "run.ckpt"
        persist.save_checkpoint(sample_checkpoint(), path)
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(persist.MagicError):
            persist.load_checkpoint(path)

    def test_truncated_tensor_data_is_rejected(self, tmp_path):
        path = tmp_path / "run.ckpt"
        persist.save_checkpoint(sample_checkpoint(), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(persist.TruncatedError):
            persist.load_checkpoint(path)

    def test_duplicate_tensor_names_are_rejected(self, tmp_path):
        tensors = {"a": random_f32(np.random.default_rng(8), (2,))}
        ckpt = Checkpoint(tensors=tensors, seed=0)
        path = tmp_path / "run.ckpt"
        persist.save_checkpoint(ckpt, path)
        blob = bytearray(path.read_bytes())
        # splice the single name+tensor record in twice and bump the count;
        # the record is name_len(4) + name(1) + ten(12 + 4 + 8) bytes
        record_start = 12
        record = bytes(blob[record_start:record_start + 4 + 1 + 12 + 4 + 8])
        blob[8:12] = struct.pack("<I", 2)
        doubled = bytes(blob[:record_start]) + record + record + bytes(blob[record_start + len(record):])
        path.write_bytes(doubled)
        with pytest.raises(persist.PersistError, match="duplicate"):
            persist.load_checkpoint(path)

    def test_missing_counter_metadata_is_rejected(self, tmp_path):
        path = tmp_path / "run.ckpt"
        ckpt = sample_checkpoint()
        persist.save_checkpoint(ckpt, path)
        blob = path.read_bytes()
        meta = "seed=1\nepoch=2\n".encode()  # iteration missing
        # header + records end where the old meta length field begins
        old_meta_len = struct.unpack("<I", blob[-4 - len(_meta_bytes(ckpt)):-len(_meta_bytes(ckpt))])[0]
        body = blob[:len(blob) - 4 - old_meta_len]
        path.write_bytes(body + struct.pack("<I", len(meta)) + meta)
        with pytest.raises(persist.PersistError, match="metadata missing"):
            persist.load_checkpoint(path)

    def test_metadata_value_validation(self, tmp_path):
        ckpt = Checkpoint(tensors={}, config={"bad": "two\nlines"})
        with pytest.raises(ValueError, match="newline"):
            persist.save_checkpoint(ckpt, tmp_path / "x.ckpt")


def _meta_bytes(ckpt):
    meta = f"seed={ckpt.seed}\nepoch={ckpt.epoch}\niteration={ckpt.iteration}\n"
    meta += "".join(f"config.{k}={v}\n" for k, v in ckpt.config.items())
    return meta.encode()
