import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatlod.model import GaussianModel, empty_model, subset
from splatlod.ply import PLYParseError, PLY_PROPERTIES, load_ply, save_ply

from conftest import random_model


def test_model_shapes_and_dtype():
    m = random_model(0, 5)
    assert m.n == 5
    assert m.positions.shape == (5, 3)
    assert m.sh_coeffs.shape == (5, 16, 3)
    assert m.opacity_logit.shape == (5,)
    assert m.scale_log.shape == (5, 3)
    assert m.rotation.shape == (5, 4)
    for arr in (m.positions, m.sh_coeffs, m.opacity_logit, m.scale_log, m.rotation):
        assert arr.dtype == np.float64
        assert arr.flags.c_contiguous


def test_model_rejects_bad_shapes():
    m = random_model(0, 4)
    with pytest.raises(ValueError):
        GaussianModel(m.positions[:3], m.sh_coeffs, m.opacity_logit,
                      m.scale_log, m.rotation)
    with pytest.raises(ValueError):
        GaussianModel(m.positions, m.sh_coeffs[:, :9, :], m.opacity_logit,
                      m.scale_log, m.rotation)


def test_validate_flags_nonfinite_and_zero_quaternion():
    m = random_model(1, 4)
    m.positions[2, 1] = np.nan
    with pytest.raises(ValueError):
        m.validate()
    m = random_model(1, 4)
    m.rotation[0] = 0.0
    with pytest.raises(ValueError):
        m.validate()


def test_copy_is_deep():
    m = random_model(2, 3)
    c = m.copy()
    c.positions[0, 0] += 1.0
    assert m.positions[0, 0] != c.positions[0, 0]


def test_packed_float32_size():
    # 59 float32 parameters per Gaussian
    assert random_model(0, 7).packed_float32_size() == 7 * 59 * 4
    assert empty_model().packed_float32_size() == 0


def test_empty_model():
    m = empty_model()
    assert m.n == 0
    m.validate()


def test_subset_basic_and_order():
    m = random_model(3, 6)
    s = subset(m, [4, 1, 3])
    assert s.n == 3
    np.testing.assert_array_equal(s.positions, m.positions[[4, 1, 3]])
    np.testing.assert_array_equal(s.sh_coeffs, m.sh_coeffs[[4, 1, 3]])


def test_subset_rejects_duplicates_and_out_of_range():
    m = random_model(3, 6)
    with pytest.raises(ValueError):
        subset(m, [1, 1])
    with pytest.raises(IndexError):
        subset(m, [6])
    with pytest.raises(IndexError):
        subset(m, [-1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.data())
def test_subset_composes(seed, data):
    m = random_model(seed % 17, 9)
    outer = data.draw(st.lists(st.integers(0, 8), min_size=1, max_size=9,
                               unique=True))
    inner = data.draw(st.lists(st.integers(0, len(outer) - 1), min_size=1,
                               max_size=len(outer), unique=True))
    twice = subset(subset(m, outer), inner)
    once = subset(m, [outer[i] for i in inner])
    assert twice.allclose(once)


def test_ply_round_trip(tmp_path):
    m = random_model(5, 11)
    path = tmp_path / "model.ply"
    save_ply(m, path)
    back = load_ply(path)
    # Write quantizes to float32; compare at that precision.
    np.testing.assert_allclose(back.positions, m.positions, rtol=0, atol=1e-6)
    np.testing.assert_allclose(back.sh_coeffs, m.sh_coeffs, rtol=0, atol=1e-6)
    np.testing.assert_allclose(back.opacity_logit, m.opacity_logit, rtol=0, atol=1e-6)
    np.testing.assert_allclose(back.scale_log, m.scale_log, rtol=0, atol=1e-6)
    np.testing.assert_allclose(back.rotation, m.rotation, rtol=0, atol=1e-6)
    # float32 round-trip is exact the second time
    path2 = tmp_path / "model2.ply"
    save_ply(back, path2)
    again = load_ply(path2)
    assert again.allclose(back, atol=0)


def test_ply_byte_level_fixture(tmp_path):
    """Hand-built one-vertex file: verifies offsets and the channel-major
    f_rest convention independent of save_ply."""
    values = np.zeros(62, dtype="<f4")
    values[0:3] = [1.0, 2.0, 3.0]          # x y z
    values[3:6] = [9.0, 9.0, 9.0]          # normals, must be ignored
    values[6:9] = [0.5, 0.6, 0.7]          # f_dc
    # f_rest: channel c, coefficient k -> index c*15 + (k-1)
    values[9 + 0 * 15 + 0] = 0.11          # channel 0, k=1
    values[9 + 1 * 15 + 4] = 0.22          # channel 1, k=5
    values[9 + 2 * 15 + 14] = 0.33         # channel 2, k=15
    values[54] = -0.25                     # opacity logit
    values[55:58] = [-1.0, -2.0, -3.0]     # scale log
    values[58:62] = [1.0, 0.0, 0.0, 0.0]   # rotation wxyz
    header = ["ply", "format binary_little_endian 1.0", "element vertex 1"]
    header += [f"property float {p}" for p in PLY_PROPERTIES]
    header.append("end_header")
    path = tmp_path / "hand.ply"
    path.write_bytes(("\n".join(header) + "\n").encode() + values.tobytes())

    m = load_ply(path)
    assert m.n == 1
    np.testing.assert_allclose(m.positions[0], [1.0, 2.0, 3.0])
    np.testing.assert_allclose(m.sh_coeffs[0, 0], [0.5, 0.6, 0.7])
    assert m.sh_coeffs[0, 1, 0] == pytest.approx(0.11)
    assert m.sh_coeffs[0, 5, 1] == pytest.approx(0.22)
    assert m.sh_coeffs[0, 15, 2] == pytest.approx(0.33)
    assert m.opacity_logit[0] == pytest.approx(-0.25)
    np.testing.assert_allclose(m.scale_log[0], [-1.0, -2.0, -3.0])
    np.testing.assert_allclose(m.rotation[0], [1.0, 0.0, 0.0, 0.0])


def test_ply_error_names_offending_property(tmp_path):
    header = ["ply", "format binary_little_endian 1.0", "element vertex 0"]
    props = list(PLY_PROPERTIES)
    props[58] = "rot_9"  # clobber rot_0
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    path = tmp_path / "bad.ply"
    path.write_bytes(("\n".join(header) + "\n").encode())
    with pytest.raises(PLYParseError, match="rot_0"):
        load_ply(path)


def test_ply_rejects_ascii_format(tmp_path):
    path = tmp_path / "ascii.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(PLYParseError, match="binary_little_endian"):
        load_ply(path)


def test_ply_rejects_truncated_payload(tmp_path):
    m = random_model(6, 2)
    path = tmp_path / "trunc.ply"
    save_ply(m, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-4])
    with pytest.raises(PLYParseError, match="truncated"):
        load_ply(path)
