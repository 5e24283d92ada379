import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from blockvit import tensorio
from blockvit.rng import SplitMix64
from blockvit.tensorio import (ENCRYPTED, PLAIN, FormatError, ImageTensor,
                               TensorBlob, blob_to_image, export_visualization,
                               image_to_blob, load_blobs, load_image,
                               load_tensor, save_blobs, save_tensor)


def test_blob_roundtrip_simple(tmp_path):
    b = TensorBlob(dims=(1,), payload=np.array([0.0]))
    path = str(tmp_path / "b.vtbt")
    save_tensor(b, path)
    assert load_tensor(path) == b


def test_blob_roundtrip_bitexact(tmp_path):
    payload = SplitMix64(1).normals(6)
    b = TensorBlob(dims=(2, 3), payload=payload)
    path = str(tmp_path / "b.vtbt")
    save_tensor(b, path)
    loaded = load_tensor(path)
    assert loaded.payload.tobytes() == payload.tobytes()
    assert loaded.dims == (2, 3)


def test_bad_magic(tmp_path):
    path = str(tmp_path / "bad.vtbt")
    with open(path, "wb") as f:
        f.write(b"NOPE" + b"\x00" * 32)
    with pytest.raises(FormatError, match="bad magic"):
        load_tensor(path)


def test_bad_version(tmp_path):
    path = str(tmp_path / "bad.vtbt")
    with open(path, "wb") as f:
        f.write(tensorio.MAGIC + struct.pack("<I", 99))
    with pytest.raises(FormatError, match="version"):
        load_tensor(path)


def test_truncated_payload(tmp_path):
    b = TensorBlob(dims=(4,), payload=np.arange(4, dtype=np.float64))
    path = str(tmp_path / "t.vtbt")
    save_tensor(b, path)
    raw = open(path, "rb").read()
    with open(path, "wb") as f:
        f.write(raw[:-5])
    with pytest.raises(FormatError, match="truncated"):
        load_tensor(path)


def test_blob_validation():
    with pytest.raises(ValueError):
        TensorBlob(dims=(), payload=np.array([1.0]))
    with pytest.raises(ValueError):
        TensorBlob(dims=(0,), payload=np.array([], dtype=np.float64))
    with pytest.raises(ValueError):
        TensorBlob(dims=(2,), payload=np.array([1.0]))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(min_value=1, max_value=16), min_size=1, max_size=4),
       st.integers(min_value=0, max_value=2**32))
def test_roundtrip_property(tmp_path_factory, dims, seed):
    payload = SplitMix64(seed).normals(int(np.prod(dims)))
    b = TensorBlob(dims=tuple(dims), payload=payload)
    path = str(tmp_path_factory.mktemp("rt") / "b.vtbt")
    save_tensor(b, path)
    save_tensor(b, path + ".2")
    assert open(path, "rb").read() == open(path + ".2", "rb").read()
    assert load_tensor(path) == b


def test_multi_blob_roundtrip(tmp_path):
    blobs = {"a": np.arange(6.0).reshape(2, 3),
             "b.c": np.array([1.5]),
             "z": SplitMix64(2).normals(8).reshape(2, 2, 2)}
    path = str(tmp_path / "m.vtbm")
    save_blobs(blobs, path)
    loaded = load_blobs(path)
    assert set(loaded) == set(blobs)
    for name in blobs:
        assert np.array_equal(loaded[name], blobs[name])


def test_load_png_white_black(tmp_path):
    white = str(tmp_path / "w.png")
    black = str(tmp_path / "b.png")
    Image.fromarray(np.full((2, 2, 3), 255, np.uint8)).save(white)
    Image.fromarray(np.zeros((2, 2, 3), np.uint8)).save(black)
    assert (load_image(white).data == 1.0).all()
    assert (load_image(black).data == 0.0).all()


def test_load_ppm_single_pixel(tmp_path):
    path = str(tmp_path / "p.ppm")
    with open(path, "wb") as f:
        f.write(b"P6\n1 1\n255\n" + bytes([128, 64, 0]))
    img = load_image(path)
    expected = np.array([128 / 255, 64 / 255, 0.0])
    assert np.allclose(img.data[0, 0], expected, atol=0, rtol=1e-15)
    assert img.range_tag == PLAIN


def test_load_ppm_rejects_16bit(tmp_path):
    path = str(tmp_path / "p.ppm")
    with open(path, "wb") as f:
        f.write(b"P6\n1 1\n65535\n" + bytes(6))
    with pytest.raises(FormatError):
        load_image(path)


def test_load_unreadable(tmp_path):
    path = str(tmp_path / "x.png")
    with open(path, "wb") as f:
        f.write(b"not a png")
    with pytest.raises(FormatError):
        load_image(path)


def test_grayscale_png(tmp_path):
    path = str(tmp_path / "g.png")
    Image.fromarray(np.array([[0, 128], [255, 64]], np.uint8), "L").save(path)
    img = load_image(path)
    assert img.channels == 1
    assert img.data[1, 0, 0] == 1.0


def test_visualization_roundtrip_plain(tmp_path):
    src = str(tmp_path / "src.png")
    arr = (SplitMix64(3).uniforms(8 * 8 * 3).reshape(8, 8, 3) * 255).astype(np.uint8)
    Image.fromarray(arr).save(src)
    img = load_image(src)
    out = str(tmp_path / "viz.png")
    export_visualization(img, out)
    back = np.asarray(Image.open(out))
    assert np.array_equal(back, arr)


def test_visualization_constant_encrypted(tmp_path):
    img = ImageTensor(data=np.full((4, 4, 1), 2.5), range_tag=ENCRYPTED)
    out = str(tmp_path / "c.png")
    export_visualization(img, out)
    assert (np.asarray(Image.open(out)) == 128).all()


def test_visualization_affine_endpoints(tmp_path):
    data = np.linspace(-3.0, 3.0, 16).reshape(4, 4, 1)
    img = ImageTensor(data=data, range_tag=ENCRYPTED)
    out = str(tmp_path / "e.png")
    export_visualization(img, out)
    back = np.asarray(Image.open(out))
    assert back.min() == 0 and back.max() == 255


def test_plain_range_enforced():
    with pytest.raises(ValueError):
        ImageTensor(data=np.full((2, 2, 1), 1.5), range_tag=PLAIN)
    with pytest.raises(ValueError):
        ImageTensor(data=np.zeros((0, 2, 1)), range_tag=PLAIN)


def test_image_blob_conversion():
    img = ImageTensor(data=np.linspace(-1, 1, 12).reshape(2, 2, 3),
                      range_tag=ENCRYPTED)
    blob = image_to_blob(img)
    back = blob_to_image(blob, ENCRYPTED)
    assert np.array_equal(back.data, img.data)
