"""Model checkpoint container: checksum, sections, network round-trips."""

import struct

import numpy as np
import pytest

from canonface import checkpoint as ckpt
from canonface import net
from canonface._kernels import FNV_OFFSET, fnv1a64
from canonface.errors import DataError


def fnv1a64_py(data: bytes) -> int:
    """Independent FNV-1a 64 reference, straight from the definition."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def kernel_hash(data: bytes) -> int:
    buf = np.frombuffer(data, dtype=np.uint8)
    return int(fnv1a64(buf, FNV_OFFSET)) if buf.size else int(FNV_OFFSET)


class TestFnv:
    def test_reference_vectors(self):
        # published FNV-1a 64 test vectors
        assert fnv1a64_py(b"") == 0xCBF29CE484222325
        assert fnv1a64_py(b"a") == 0xAF63DC4C8601EC8C
        assert fnv1a64_py(b"foobar") == 0x85944171F73967E8

    def test_kernel_matches_reference(self):
        rng = np.random.default_rng(11)
        for size in (0, 1, 7, 64, 1000):
            data = rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()
            assert kernel_hash(data) == fnv1a64_py(data)

    def test_kernel_chains_like_one_pass(self):
        rng = np.random.default_rng(12)
        data = rng.integers(0, 256, size=300, dtype=np.uint8)
        h = FNV_OFFSET
        for part in np.array_split(data, 7):
            if part.size:
                h = fnv1a64(part, h)
        assert int(h) == kernel_hash(data.tobytes())


class TestContainer:
    def test_section_round_trip(self, tmp_path):
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(
            path,
            [(b"AAAA", [b"hello ", b"world"]), (b"BBBB", [b""]), (b"CCCC", [])],
        )
        sections = ckpt.load_checkpoint(path)
        assert sections == [(b"AAAA", b"hello world"), (b"BBBB", b""),
                            (b"CCCC", b"")]

    def test_save_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        ckpt.save_checkpoint(a, [(b"DATA", [b"\x01\x02\x03"])])
        ckpt.save_checkpoint(b, [(b"DATA", [b"\x01\x02\x03"])])
        assert a.read_bytes() == b.read_bytes()

    def test_corrupt_byte_fails_checksum(self, tmp_path):
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(path, [(b"DATA", [b"payload bytes here"])])
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0x40
        path.write_bytes(bytes(blob))
        with pytest.raises(DataError, match="checksum"):
            ckpt.load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(path, [(b"DATA", [b"payload"])])
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(DataError):
            ckpt.load_checkpoint(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "m.ckpt"
        path.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(DataError, match="not a model checkpoint"):
            ckpt.load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            ckpt.load_checkpoint(tmp_path / "absent.ckpt")

    def test_unsupported_version(self, tmp_path):
        body = ckpt.MAGIC + struct.pack("<I", 99)
        trailer = struct.pack("<Q", fnv1a64_py(body))
        path = tmp_path / "m.ckpt"
        path.write_bytes(body + trailer)
        with pytest.raises(DataError, match="version"):
            ckpt.load_checkpoint(path)

    def test_section_length_overrun(self, tmp_path):
        body = (ckpt.MAGIC + struct.pack("<I", ckpt.VERSION)
                + b"DATA" + struct.pack("<Q", 1000) + b"short")
        path = tmp_path / "m.ckpt"
        path.write_bytes(body + struct.pack("<Q", fnv1a64_py(body)))
        with pytest.raises(DataError, match="truncated"):
            ckpt.load_checkpoint(path)

    def test_bad_tag_rejected_on_save(self, tmp_path):
        with pytest.raises(DataError, match="tag"):
            ckpt.save_checkpoint(tmp_path / "m.ckpt", [(b"TOOLONG", [b""])])


def tiny_spec():
    return net.NetworkSpec(
        (1, 8, 8),
        (
            net.LocalConv(k=3, out_channels=3, padding=net.PADDING_SAME),
            net.Relu(),
            net.MaxPool(2),
            net.Conv(k=3, out_channels=2, padding=net.PADDING_SAME),
            net.Relu(),
            net.ZeroPad(0, 1),
            net.Dropout(0.5),
            net.Dense(5),
        ),
    )


class TestSpecJson:
    def test_round_trip_all_layer_kinds(self):
        spec = tiny_spec()
        again = ckpt.spec_from_dict(ckpt.spec_to_dict(spec))
        assert again == spec

    def test_sigmoid_round_trip(self):
        spec = net.NetworkSpec((1, 4, 4), (net.Dense(1), net.Sigmoid()))
        assert ckpt.spec_from_dict(ckpt.spec_to_dict(spec)) == spec

    def test_unknown_kind(self):
        with pytest.raises(DataError, match="unknown layer kind"):
            ckpt.layer_from_dict({"kind": "warp"})

    def test_missing_field(self):
        with pytest.raises(DataError, match="missing field"):
            ckpt.layer_from_dict({"kind": "dense"})

    def test_malformed_header(self):
        with pytest.raises(DataError, match="malformed network header"):
            ckpt.spec_from_dict({"layers": []})


def params_bytes(network):
    return [(name, w.tobytes()) for name, w, _ in network.param_items()]


class TestNetworkRoundTrip:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_bitwise_params(self, tmp_path, dtype):
        path = tmp_path / "net.ckpt"
        network = net.Network(tiny_spec(), seed=3, dtype=dtype)
        ckpt.save_network(path, network)
        loaded = ckpt.load_network(path, dtype=dtype)
        assert loaded.spec == network.spec
        assert params_bytes(loaded) == params_bytes(network)

    def test_forward_identical_after_reload(self, tmp_path):
        path = tmp_path / "net.ckpt"
        network = net.Network(tiny_spec(), seed=5, dtype=np.float32)
        x = np.random.default_rng(0).random((2, 1, 8, 8)).astype(np.float32)
        before = network.forward(x)
        ckpt.save_network(path, network)
        after = ckpt.load_network(path).forward(x)
        assert np.array_equal(before, after)

    def test_resave_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        network = net.Network(tiny_spec(), seed=3, dtype=np.float32)
        ckpt.save_network(a, network)
        ckpt.save_network(b, ckpt.load_network(a))
        assert a.read_bytes() == b.read_bytes()

    def test_extra_sections_preserved(self, tmp_path):
        path = tmp_path / "net.ckpt"
        network = net.Network(tiny_spec(), seed=1)
        ckpt.save_network(path, network,
                          extra_sections=[(ckpt.TAG_VERIFIER, [b"svm blob"])])
        sections = dict(ckpt.load_checkpoint(path))
        assert sections[ckpt.TAG_VERIFIER] == b"svm blob"
        assert ckpt.load_network(path).spec == network.spec

    def test_no_network_section(self, tmp_path):
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(path, [(b"MISC", [b"x"])])
        with pytest.raises(DataError, match="no network section"):
            ckpt.load_network(path)

    def test_truncated_parameters(self, tmp_path):
        network = net.Network(tiny_spec(), seed=3)
        payload = b"".join(ckpt.network_chunks(network))
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(path, [(ckpt.TAG_NETWORK, [payload[:-8]])])
        with pytest.raises(DataError, match="truncated"):
            ckpt.load_network(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        network = net.Network(tiny_spec(), seed=3)
        payload = b"".join(ckpt.network_chunks(network)) + bytes(8)
        path = tmp_path / "m.ckpt"
        ckpt.save_checkpoint(path, [(ckpt.TAG_NETWORK, [payload])])
        with pytest.raises(DataError, match="trailing"):
            ckpt.load_network(path)

    def test_params_stored_as_float64_spec_order(self, tmp_path):
        # one dense layer: header, then W (out,in) as <f8, then bias
        spec = net.NetworkSpec((1, 2, 2), (net.Dense(3),))
        network = net.Network(spec, seed=9, dtype=np.float32)
        path = tmp_path / "net.ckpt"
        ckpt.save_network(path, network)
        tag, payload = ckpt.load_checkpoint(path)[0]
        assert tag == ckpt.TAG_NETWORK
        (hlen,) = struct.unpack("<I", payload[:4])
        raw = np.frombuffer(payload, dtype="<f8", offset=4 + hlen)
        assert raw.size == 3 * 4 + 3
        _, w_int, _ = network.param_items()[0]
        assert np.array_equal(raw[:12].reshape(3, 4),
                              w_int.T.astype(np.float64))
