import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.distribution import ProbabilityVolume, make_layout
from src.errors import (
    BadHeader,
    BadMagic,
    DimOverflow,
    DuplicateSection,
    EmptyDims,
    StorageError,
    TruncatedPayload,
    UnsupportedMaxval,
    VersionMismatch,
)
from src.kernel_uq import EmbeddingBank, KernelSpec
from src.matcher import init_head
from src.storage import (
    CONTAINER_MAGIC,
    decode_container,
    encode_container,
    load_bank,
    load_container,
    load_head,
    load_volume,
    read_pfm,
    read_pgm,
    save_bank,
    save_container,
    save_head,
    save_volume,
    write_pfm,
    write_pgm,
)


@pytest.fixture
def sections() -> dict:
    rng = np.random.default_rng(0)
    return {
        "pmf": rng.random((3, 4, 5)).astype(np.float32),
        "ud": rng.random((3, 4)),
        "scalar": np.array([7.5]),
    }


# --- PFM ---

def test_pfm_round_trip_keeps_top_row_first(tmp_path: Path) -> None:
    """Values, orientation and infinities survive a write/read cycle."""
    data = np.arange(12, dtype=np.float32).reshape(3, 4)
    data[0, 0] = np.inf
    path = str(tmp_path / "d.pfm")
    write_pfm(data, path)
    loaded = read_pfm(path)
    assert loaded.dtype == np.float32
    np.testing.assert_array_equal(loaded, data)
    with open(path, "rb") as stream:
        assert stream.read(3) == b"Pf\n"


def test_big_endian_pfm_is_read(tmp_path: Path) -> None:
    """A positive scale means big-endian payload; the last file row is the top image row."""
    path = tmp_path / "be.pfm"
    path.write_bytes(b"Pf\n2 2\n1.0\n" + struct.pack(">4f", 3.0, 4.0, 1.0, 2.0))
    np.testing.assert_array_equal(read_pfm(str(path)), [[1.0, 2.0], [3.0, 4.0]])


def test_pfm_nan_is_loaded_with_a_warning(tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
    """NaN values pass through but are logged."""
    path = tmp_path / "nan.pfm"
    path.write_bytes(b"Pf\n1 1\n-1.0\n" + struct.pack("<f", float("nan")))
    with caplog.at_level("WARNING"):
        assert np.isnan(read_pfm(str(path))[0, 0])
    assert "NaN" in caplog.text


@pytest.mark.parametrize(
    "content, error",
    [
        (b"PF\n1 1\n-1.0\n" + b"\x00" * 12, BadMagic),
        (b"Pf\nfour 1\n-1.0\n" + b"\x00" * 4, BadHeader),
        (b"Pf\n0 1\n-1.0\n", BadHeader),
        (b"Pf\n2 2\n-1.0\n" + b"\x00" * 15, TruncatedPayload),
        (b"Pf\n3000000000 3000000000\n-1.0\n", DimOverflow),
        (b"Pf\n100000 100000\n-1.0\n" + b"\x00" * 16, TruncatedPayload),
        (b"Pf", BadHeader),
    ],
)
def test_malformed_pfm_files(tmp_path: Path, content: bytes, error: type) -> None:
    """Colour PFMs, bad headers, oversized dims and short payloads are rejected."""
    path = tmp_path / "bad.pfm"
    path.write_bytes(content)
    with pytest.raises(error):
        read_pfm(str(path))


# --- PGM ---

def test_pgm_round_trip(tmp_path: Path) -> None:
    """8-bit images survive a write/read cycle."""
    image = np.random.default_rng(1).integers(0, 256, size=(5, 7)).astype(np.uint8)
    path = str(tmp_path / "i.pgm")
    write_pgm(image, path)
    np.testing.assert_array_equal(read_pgm(path), image)


def test_pgm_header_comments_are_skipped(tmp_path: Path) -> None:
    """Comment lines between header tokens are ignored."""
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n2 # width first\n2\n255\n" + bytes([1, 2, 3, 4]))
    np.testing.assert_array_equal(read_pgm(str(path)), [[1, 2], [3, 4]])


@pytest.mark.parametrize(
    "content, error",
    [
        (b"P2\n2 2\n255\n1 2 3 4\n", BadMagic),
        (b"P5\n2 2\n65535\n" + b"\x00" * 8, UnsupportedMaxval),
        (b"P5\n2 2\n255\n" + b"\x00" * 3, TruncatedPayload),
        (b"P5\n2 x\n255\n", BadHeader),
        (b"P5\n2 2\n", BadHeader),
    ],
)
def test_malformed_pgm_files(tmp_path: Path, content: bytes, error: type) -> None:
    """ASCII PGMs, 16-bit images and short payloads are rejected."""
    path = tmp_path / "bad.pgm"
    path.write_bytes(content)
    with pytest.raises(error):
        read_pgm(str(path))


def test_writers_reject_empty_images(tmp_path: Path) -> None:
    """Nothing to write is an error, not an empty file."""
    with pytest.raises(EmptyDims):
        write_pfm(np.zeros((0, 3)), str(tmp_path / "e.pfm"))
    with pytest.raises(EmptyDims):
        write_pgm(np.zeros(5), str(tmp_path / "e.pgm"))


# --- UQT1 container ---

def test_container_round_trip_is_bitwise(sections: dict) -> None:
    """f32 stays f32, f64 stays f64, and every bit survives."""
    decoded = decode_container(encode_container(sections))
    assert list(decoded) == list(sections)
    assert decoded["pmf"].dtype == np.float32
    assert decoded["ud"].dtype == np.float64
    for name, value in sections.items():
        assert decoded[name].tobytes() == value.tobytes()


def test_container_header_layout(sections: dict) -> None:
    """Magic, version and section count open the file."""
    data = encode_container(sections)
    assert data[:4] == CONTAINER_MAGIC
    assert struct.unpack("<HH", data[4:8]) == (1, 3)


def test_integer_sections_are_stored_as_f64() -> None:
    """Non-f32 values are widened to f64."""
    decoded = decode_container(encode_container({"counts": np.array([1, 2, 3])}))
    assert decoded["counts"].dtype == np.float64
    np.testing.assert_array_equal(decoded["counts"], [1.0, 2.0, 3.0])


@pytest.mark.parametrize("value", [np.float64(3.0), np.zeros((2, 0))])
def test_container_rejects_empty_dims(value: np.ndarray) -> None:
    """Rank-0 and zero-length sections are refused on write."""
    with pytest.raises(EmptyDims):
        encode_container({"x": value})


def test_container_version_and_magic_are_checked(sections: dict) -> None:
    """Another version or magic is refused."""
    data = bytearray(encode_container(sections))
    data[4:6] = struct.pack("<H", 2)
    with pytest.raises(VersionMismatch):
        decode_container(bytes(data))
    with pytest.raises(BadMagic):
        decode_container(b"UQT2" + bytes(data[4:]))


def _section(name: bytes, code: int, dims: tuple, length: int, payload: bytes = b"") -> bytes:
    head = struct.pack("<H", len(name)) + name + struct.pack("<BB", code, len(dims))
    return head + struct.pack(f"<{len(dims)}Q", *dims) + struct.pack("<Q", length) + payload


@pytest.mark.parametrize(
    "body, count, error",
    [
        (_section(b"a", 1, (1,), 8, b"\x00" * 8) * 2, 2, DuplicateSection),
        (_section(b"a", 7, (1,), 8, b"\x00" * 8), 1, BadHeader),
        (_section(b"\xff\xfe", 1, (1,), 8, b"\x00" * 8), 1, BadHeader),
        (_section(b"a", 1, (2,), 8, b"\x00" * 8), 1, BadHeader),
        (_section(b"a", 1, (0,), 0), 1, EmptyDims),
        (_section(b"a", 1, (), 8), 1, EmptyDims),
        (_section(b"a", 1, (1 << 30, 1 << 30), 8), 1, DimOverflow),
        (_section(b"a", 1, (4,), 32, b"\x00" * 8), 1, TruncatedPayload),
    ],
)
def test_malformed_containers(body: bytes, count: int, error: type) -> None:
    """Each structural defect maps to its own error."""
    data = CONTAINER_MAGIC + struct.pack("<HH", 1, count) + body
    with pytest.raises(error):
        decode_container(data)


def test_every_truncation_raises_a_storage_error(sections: dict) -> None:
    """Cutting the file anywhere fails cleanly without reading past the end."""
    data = encode_container(sections)
    for cut in range(len(data)):
        with pytest.raises(StorageError):
            decode_container(data[:cut])


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_corrupted_bytes_never_escape_as_other_errors(data: st.DataObject) -> None:
    """A flipped byte either still decodes or raises a StorageError."""
    encoded = bytearray(encode_container({"a": np.arange(6.0).reshape(2, 3), "b": np.ones(2, np.float32)}))
    index = data.draw(st.integers(0, len(encoded) - 1))
    encoded[index] = data.draw(st.integers(0, 255))
    try:
        decode_container(bytes(encoded))
    except StorageError:
        pass


def test_container_file_helpers(tmp_path: Path, sections: dict) -> None:
    """save/load go through the same encoding, creating parent folders."""
    path = str(tmp_path / "nested" / "c.uqt")
    save_container(sections, path)
    np.testing.assert_array_equal(load_container(path)["ud"], sections["ud"])


# --- typed artifacts ---

def test_volume_round_trip_with_extra_maps(tmp_path: Path) -> None:
    """The PMF comes back renormalised next to its layout and extra sections."""
    layout = make_layout(0.0, 8.0, 8)
    mass = np.random.default_rng(2).dirichlet(np.ones(8), size=(3, 4))
    path = str(tmp_path / "v.uqt")
    save_volume(ProbabilityVolume(mass=mass, layout=layout), path, {"ud": np.ones((3, 4))})
    volume, rest = load_volume(path)
    np.testing.assert_allclose(volume.mass, mass, atol=1e-6)
    np.testing.assert_allclose(volume.mass.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(volume.layout.edges, layout.edges)
    assert list(rest) == ["ud"]


def test_volume_extra_cannot_shadow_reserved_sections(tmp_path: Path) -> None:
    """Extra maps may not reuse the pmf or layout names."""
    layout = make_layout(0.0, 4.0, 4)
    volume = ProbabilityVolume(mass=np.full((1, 1, 4), 0.25), layout=layout)
    with pytest.raises(DuplicateSection):
        save_volume(volume, str(tmp_path / "v.uqt"), {"pmf": np.ones(1)})


def test_head_round_trip(tmp_path: Path) -> None:
    """Parameters and the index-range layout come back exactly."""
    layout = make_layout(1.0, 64.0, 12, scheme="index-range")
    head = init_head(layout.count, hidden=5, seed=4)
    path = str(tmp_path / "head.uqt")
    save_head(head, layout, path)
    loaded, loaded_layout = load_head(path)
    np.testing.assert_array_equal(loaded.w1, head.w1)
    np.testing.assert_array_equal(loaded.b2, head.b2)
    assert loaded_layout.scheme == "index-range"
    np.testing.assert_array_equal(loaded_layout.edges, layout.edges)


def test_bank_round_trip(tmp_path: Path) -> None:
    """Bank arrays, source count and kernel spec survive."""
    rng = np.random.default_rng(3)
    bank = EmbeddingBank(points=rng.normal(size=(20, 4)), labels=rng.random(20), source_count=500)
    spec = KernelSpec(family="epanechnikov", bandwidth=0.75, knn=7, risk_constant=3.0, cap=50.0)
    path = str(tmp_path / "bank.uqt")
    save_bank(bank, spec, path)
    loaded, loaded_spec = load_bank(path)
    np.testing.assert_array_equal(loaded.points, bank.points)
    assert loaded.source_count == 500
    assert loaded_spec == spec


def test_typed_loaders_require_their_sections(tmp_path: Path) -> None:
    """A container without the expected sections is a BadHeader."""
    path = str(tmp_path / "other.uqt")
    save_container({"x": np.ones(2)}, path)
    with pytest.raises(BadHeader):
        load_head(path)
    with pytest.raises(BadHeader):
        load_bank(path)
