import json

import cv2
import numpy as np
import pytest

from gimcodec.codec import extract_mesh
from gimcodec.files import (EXR, PNG16, read_albedo, read_gim, read_gim_image, validate_gim_file, write_albedo,
                            write_gim)

from conftest import encoded


@pytest.mark.parametrize("fmt,tol", [(PNG16, 0.5 / 65535 + 1e-12), (EXR, 6e-8)])
@pytest.mark.parametrize("name", ["figure", "sphere"])
def test_gim_file_round_trip(tmp_path, fmt, tol, name):
    _, _, _, g, _ = encoded(name)
    img, meta = write_gim(str(tmp_path), name, g, fmt, extra={"captions": ["a thing"]})
    assert img.endswith(f"{name}.gim.{fmt}") and meta.endswith(f"{name}.meta")
    back = read_gim(img)
    assert np.array_equal(back.mask, g.mask)
    assert np.array_equal(back.chart_ids, g.chart_ids)
    assert np.abs(back.positions - g.positions).max() <= tol
    assert back.encoding == g.encoding and back.norm == g.norm
    assert [c.to_dict() for c in back.chart_table] == [c.to_dict() for c in g.chart_table]
    doc = json.load(open(meta))
    assert doc["valid_pixels"] == g.valid_pixels <= 589_824
    assert doc["captions"] == ["a thing"]
    assert doc["image_format"] == fmt


def test_png_is_16_bit_rgba_with_binary_alpha(tmp_path):
    _, _, _, g, _ = encoded("cube")
    img, _ = write_gim(str(tmp_path), "cube", g)
    raw = cv2.imread(img, cv2.IMREAD_UNCHANGED)
    assert raw.dtype == np.uint16 and raw.shape == (768, 768, 4)
    assert set(np.unique(raw[..., 3])) == {0, 65535}
    # stored top row first: raster row 0 is the last image row
    assert np.array_equal(raw[::-1, :, 3] > 0, g.mask)


def test_decoded_file_mesh_close_to_memory_mesh(tmp_path):
    _, _, _, g, _ = encoded("torus")
    img, _ = write_gim(str(tmp_path), "t", g)
    a, b = extract_mesh(g), extract_mesh(read_gim(img))
    assert len(a.positions) == len(b.positions)
    # 16-bit steps are far below two pixel spacings
    assert np.abs(a.positions - b.positions).max() < 2 * 2 / 768


def test_validate_file_flags_data_outside_mask(tmp_path):
    _, _, _, g, _ = encoded("cube")
    img, _ = write_gim(str(tmp_path), "cube", g)
    assert validate_gim_file(img) == []
    raw = cv2.imread(img, cv2.IMREAD_UNCHANGED)
    i, j = np.argwhere(raw[..., 3] == 0)[0]
    raw[i, j, 0] = 1234
    cv2.imwrite(img, raw)
    assert "mask/channel inconsistency" in validate_gim_file(img)
    raw[i, j, 3] = 20000
    cv2.imwrite(img, raw)
    assert "mask is not binary" in validate_gim_file(img)


def test_sidecar_resolution_mismatch(tmp_path):
    _, _, _, g, _ = encoded("cube")
    img, meta = write_gim(str(tmp_path), "cube", g)
    doc = json.load(open(meta))
    doc["resolution"] = 512
    with pytest.raises(ValueError):
        read_gim(img, doc)


def test_albedo_round_trip(tmp_path):
    _, _, _, g, a = encoded("figure")
    path = str(tmp_path / "f.albedo.png")
    write_albedo(path, a)
    back = read_albedo(path, g.mask)
    assert back.color.shape == (768, 768, 3)
    assert np.abs(back.color - a.color).max() <= 0.5 / 255 + 1e-6


def test_read_image_rejects_8_bit(tmp_path):
    path = str(tmp_path / "x.gim.png")
    cv2.imwrite(path, np.zeros((4, 4, 4), np.uint8))
    with pytest.raises(ValueError):
        read_gim_image(path)
