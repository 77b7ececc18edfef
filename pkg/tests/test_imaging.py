import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posevinet.errors import ContractError, FormatError
from posevinet.imaging import (DEFAULT_EDGES, BoneTopology, Image, Landmark, LandmarkSet,
                               SkeletonStyle, bresenham, composite, parse_landmarks,
                               read_ppm, render_skeleton, resize_bilinear, write_ppm)


def random_image(rng, h, w):
    return Image(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


# -- PPM ------------------------------------------------------------------------

def test_read_ppm_direct_decode():
    img = read_ppm(b"P6\n2 1\n255\n" + bytes([10, 20, 30, 40, 50, 60]))
    assert (img.height, img.width) == (1, 2)
    assert img.pixels.tolist() == [[[10, 20, 30], [40, 50, 60]]]


def test_write_ppm_black_pixel():
    assert write_ppm(Image.blank(1, 1)) == b"P6\n1 1\n255\n\x00\x00\x00"


def test_write_ppm_payload_size_224():
    data = write_ppm(Image.blank(224, 224))
    header = b"P6\n224 224\n255\n"
    assert data.startswith(header)
    assert len(data) - len(header) == 224 * 224 * 3


def test_ppm_round_trip(rng):
    img = random_image(rng, 7, 5)
    data = write_ppm(img)
    assert read_ppm(data) == img
    assert write_ppm(read_ppm(data)) == data


def test_read_ppm_accepts_comments_and_spacing():
    img = read_ppm(b"P6 # made by hand\n1\t1 255\n" + bytes([1, 2, 3]))
    assert img.pixels.tolist() == [[[1, 2, 3]]]


@pytest.mark.parametrize("data, offset", [
    (b"P5\n1 1\n255\n\x00", 0),
    (b"P6\n1 1\n65535\n\x00\x00\x00", 7),
    (b"P6\n2 2\n255\n" + bytes(5), 16),
    (b"P6\n1 x\n255\n\x00\x00\x00", 5),
])
def test_read_ppm_errors_name_offset(data, offset):
    with pytest.raises(FormatError) as exc:
        read_ppm(data)
    assert exc.value.offset == offset
    assert "offset" in str(exc.value)


def test_truncated_payload_is_reported():
    with pytest.raises(FormatError, match="truncated"):
        read_ppm(b"P6\n2 2\n255\n" + bytes(11))


# -- landmarks ------------------------------------------------------------------

def test_landmark_document_parsing_clamps_and_ignores_z():
    doc = {"width": 10, "height": 20, "extra": 1, "landmarks": [
        {"id": 0, "x": 1.5, "y": -0.2, "z": 0.7},
        {"id": 3, "x": 0.25, "y": 0.5, "visibility": 2.0},
    ]}
    lms, w, h = parse_landmarks(json.dumps(doc))
    assert (w, h) == (10, 20)
    assert lms.points[0] == Landmark(0, 1.0, 0.0, None)
    assert lms.points[1] == Landmark(3, 0.25, 0.5, 1.0)


@pytest.mark.parametrize("points", [
    (Landmark(25, 0.1, 0.1),),
    (Landmark(-1, 0.1, 0.1),),
    (Landmark(2, 0.1, 0.1), Landmark(2, 0.3, 0.3)),
])
def test_landmark_set_rejects_bad_ids(points):
    with pytest.raises(ContractError):
        LandmarkSet(points)


def test_style_and_topology_contracts():
    with pytest.raises(ContractError):
        SkeletonStyle(bone_color=(0, 0, 0))
    with pytest.raises(ContractError):
        SkeletonStyle(line_thickness=0)
    with pytest.raises(ContractError):
        BoneTopology(((1, 1),))
    with pytest.raises(ContractError):
        BoneTopology(((1, 2), (2, 1)))
    with pytest.raises(ContractError):
        BoneTopology(((1, 30),))
    assert len(BoneTopology().edges) == len(DEFAULT_EDGES)


# -- rendering ------------------------------------------------------------------

def test_empty_landmarks_render_black():
    img = render_skeleton(LandmarkSet(), 12, 9)
    assert not img.pixels.any()


def test_single_joint_disc_matches_enumeration():
    style = SkeletonStyle(joint_radius=1)
    img = render_skeleton(LandmarkSet((Landmark(0, 0.5, 0.5),)), 9, 9, style)
    for r in range(9):
        for c in range(9):
            inside = (r - 4) ** 2 + (c - 4) ** 2 <= 1
            assert img.pixels[r, c].any() == inside, (r, c)
            if inside:
                assert tuple(img.pixels[r, c]) == style.joint_color


def test_horizontal_bone_covers_middle_row():
    style = SkeletonStyle(line_thickness=1, joint_radius=0)
    lms = LandmarkSet((Landmark(11, 0.0, 0.5), Landmark(12, 1.0, 0.5)))
    img = render_skeleton(lms, 11, 17, style, BoneTopology(((11, 12),)))
    mid = img.pixels[5]
    for c in range(17):
        assert tuple(mid[c]) == style.bone_color
    # thickness 1 is a single-pixel line
    assert img.pixels.any(axis=-1).sum() == 17


def test_low_visibility_points_are_absent():
    lms = LandmarkSet((Landmark(11, 0.1, 0.5, 0.2), Landmark(12, 0.9, 0.5, 0.9)))
    img = render_skeleton(lms, 20, 20, SkeletonStyle(joint_radius=0),
                          BoneTopology(((11, 12),)))
    assert not img.pixels.any()


def test_bone_skipped_when_endpoint_missing():
    style = SkeletonStyle(joint_radius=2)
    lms = LandmarkSet((Landmark(11, 0.5, 0.5),))
    img = render_skeleton(lms, 20, 20, style)
    colors = {tuple(p) for p in img.pixels.reshape(-1, 3) if p.any()}
    assert colors == {style.joint_color}


def test_bresenham_endpoints_and_connectivity():
    line = bresenham(2, 1, 9, 14)
    assert tuple(line[0]) == (2, 1) and tuple(line[-1]) == (9, 14)
    steps = np.abs(np.diff(line, axis=0))
    assert steps.max() == 1


landmark_sets = st.lists(
    st.tuples(st.integers(0, 24), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)),
    max_size=25, unique_by=lambda t: t[0],
).map(lambda pts: LandmarkSet(tuple(Landmark(*p) for p in pts)))


@settings(max_examples=40, deadline=None)
@given(landmark_sets, st.integers(1, 40), st.integers(1, 40))
def test_render_is_deterministic_and_two_colored(lms, h, w):
    style = SkeletonStyle()
    a = render_skeleton(lms, h, w, style)
    b = render_skeleton(lms, h, w, style)
    assert a.pixels.tobytes() == b.pixels.tobytes()
    drawn = a.pixels[a.pixels.any(axis=-1)]
    allowed = np.array([style.bone_color, style.joint_color])
    assert (drawn[:, None, :] == allowed[None]).all(axis=-1).any(axis=1).all()


# -- compositing ----------------------------------------------------------------

def test_black_overlay_leaves_base(rng):
    base = random_image(rng, 6, 4)
    assert composite(base, Image.blank(6, 4)) == base


def test_colored_overlay_pixel_replaces_base():
    base = Image(np.array([[[10, 20, 30]]], dtype=np.uint8))
    over = Image(np.array([[[255, 0, 0]]], dtype=np.uint8))
    assert composite(base, over).pixels.tolist() == [[[255, 0, 0]]]


def test_composite_dimension_mismatch():
    with pytest.raises(ContractError):
        composite(Image.blank(2, 2), Image.blank(2, 3))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 12), st.integers(1, 12))
def test_composite_properties(seed, h, w):
    g = np.random.default_rng(seed)
    base = random_image(g, h, w)
    over = g.integers(0, 256, (h, w, 3), dtype=np.uint8)
    over[g.random((h, w)) < 0.5] = 0
    over = Image(over)
    out = composite(base, over)
    opaque = over.pixels.any(axis=-1)
    assert np.array_equal(out.pixels[opaque], over.pixels[opaque])
    assert np.array_equal(out.pixels[~opaque], base.pixels[~opaque])
    assert composite(out, over) == out


# -- resizing -------------------------------------------------------------------

def test_resize_identity(rng):
    img = random_image(rng, 5, 8)
    assert resize_bilinear(img, 5, 8) == img


def test_resize_constant_image():
    img = Image(np.full((7, 3, 3), (12, 200, 77), dtype=np.uint8))
    out = resize_bilinear(img, 10, 13)
    assert (out.pixels == (12, 200, 77)).all()


def test_resize_center_rounds_half_up():
    corners = np.array([[0, 255], [255, 0]], dtype=np.uint8)
    img = Image(np.repeat(corners[..., None], 3, axis=2))
    out = resize_bilinear(img, 3, 3)
    assert out.pixels[1, 1].tolist() == [128, 128, 128]
    # corner alignment keeps the original corners
    assert out.pixels[0, 0, 0] == 0 and out.pixels[0, 2, 0] == 255
    assert out.pixels[0, 1, 0] == 128


def test_image_invariants():
    with pytest.raises(ContractError):
        Image(np.zeros((2, 2)))
    with pytest.raises(ContractError):
        Image(np.full((1, 1, 3), 256))
    img = Image.blank(2, 2)
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1
