"""Frame decoding, pair sampling cadence, luma conversion, bilinear resize."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fragvqa.errors import FormatError, InsufficientDataError, ShapeError
from fragvqa.media import (
    Frame,
    FrameSequence,
    load_frame_sequence,
    read_sidecar,
    resize_bilinear,
    sample_frame_pairs,
    to_luma,
)
from fragvqa.synthetic import write_raw_clip


def solid_sequence(n_frames, fps, h=4, w=4):
    frames = [Frame(np.full((h, w, 3), i % 251, dtype=np.uint8)) for i in range(n_frames)]
    return FrameSequence(frames, fps=fps)


# --- Frame validation -------------------------------------------------------


def test_frame_promotes_2d_to_single_channel():
    f = Frame(np.zeros((3, 5), dtype=np.uint8))
    assert f.data.shape == (3, 5, 1)
    assert (f.height, f.width, f.channels) == (3, 5, 1)


def test_frame_rejects_two_channels():
    with pytest.raises(ShapeError):
        Frame(np.zeros((4, 4, 2), dtype=np.uint8))


def test_frame_rejects_float_intensities():
    with pytest.raises(FormatError):
        Frame(np.zeros((2, 2), dtype=np.float64))


def test_frame_rejects_out_of_range_values():
    with pytest.raises(FormatError):
        Frame(np.array([[300]]), bit_depth=8)
    with pytest.raises(FormatError):
        Frame(np.array([[-1]]), bit_depth=8)


def test_frame_rejects_bad_bit_depth():
    for depth in (0, 17):
        with pytest.raises(FormatError):
            Frame(np.zeros((2, 2), dtype=np.uint8), bit_depth=depth)


def test_frame_high_bit_depth_widens_storage():
    f = Frame(np.array([[1000]]), bit_depth=10)
    assert f.data.dtype == np.uint16
    assert f.peak == 1023


def test_sequence_rejects_mixed_geometry():
    a = Frame(np.zeros((4, 4, 3), dtype=np.uint8))
    b = Frame(np.zeros((4, 5, 3), dtype=np.uint8))
    with pytest.raises(FormatError):
        FrameSequence([a, b], fps=10)


def test_sequence_rejects_nonpositive_fps():
    a = Frame(np.zeros((4, 4, 3), dtype=np.uint8))
    with pytest.raises(FormatError):
        FrameSequence([a], fps=0)


# --- Pair sampling -----------------------------------------------------------


def test_pair_cadence_10fps_half_second():
    pairs = sample_frame_pairs(solid_sequence(10, fps=10), interval_s=0.5)
    anchors = [(int(p.first.data[0, 0, 0]), int(p.second.data[0, 0, 0])) for p in pairs]
    assert anchors == [(0, 1), (5, 6)]
    assert [p.time_s for p in pairs] == [0.0, 0.5]
    assert [p.index for p in pairs] == [0, 1]


def test_pair_cadence_30fps_half_second():
    pairs = sample_frame_pairs(solid_sequence(61, fps=30), interval_s=0.5)
    anchors = [int(p.first.data[0, 0, 0]) for p in pairs]
    assert anchors == [0, 15, 30, 45]
    assert len(pairs) == 4


def test_pair_of_two_frames_any_fps():
    for fps in (1, 24, 240):
        pairs = sample_frame_pairs(solid_sequence(2, fps=fps), interval_s=0.5)
        assert len(pairs) == 1
        assert pairs[0].time_s == 0.0


def test_pair_anchor_rounds_half_up():
    # fps 5, interval 0.5 -> anchors at round(2.5k) = 0, 3, 5
    pairs = sample_frame_pairs(solid_sequence(7, fps=5), interval_s=0.5)
    anchors = [int(p.first.data[0, 0, 0]) for p in pairs]
    assert anchors == [0, 3, 5]


def test_pair_sampling_needs_two_frames():
    with pytest.raises(InsufficientDataError):
        sample_frame_pairs(solid_sequence(1, fps=10))


def test_pair_sampling_rejects_bad_interval():
    with pytest.raises(FormatError):
        sample_frame_pairs(solid_sequence(5, fps=10), interval_s=0.0)


@given(n=st.integers(2, 80), fps=st.sampled_from([5.0, 10.0, 24.0, 30.0]),
       interval=st.sampled_from([0.25, 0.5, 1.0]))
@settings(max_examples=60, deadline=None)
def test_pair_indices_never_run_past_the_sequence(n, fps, interval):
    pairs = sample_frame_pairs(solid_sequence(n, fps=fps, h=1, w=1), interval_s=interval)
    expected = 0
    k = 0
    while True:
        i = int(np.floor(k * interval * fps + 0.5))
        if i + 1 >= n:
            break
        expected += 1
        k += 1
    assert len(pairs) == expected


# --- Luma --------------------------------------------------------------------


def test_luma_pure_white():
    f = Frame(np.full((1, 1, 3), 255, dtype=np.uint8))
    assert int(to_luma(f).data[0, 0, 0]) == 255


def test_luma_pure_red():
    f = Frame(np.array([[[255, 0, 0]]], dtype=np.uint8))
    assert int(to_luma(f).data[0, 0, 0]) == 76


def test_luma_single_channel_passthrough():
    f = Frame(np.array([[7]], dtype=np.uint8))
    assert to_luma(f) is f


def test_luma_idempotent():
    rng = np.random.default_rng(5)
    f = Frame(rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8))
    once = to_luma(f)
    assert to_luma(once) is once


# --- Resize ------------------------------------------------------------------


def test_resize_identity_dimensions_copies_pixels():
    rng = np.random.default_rng(1)
    f = Frame(rng.integers(0, 256, size=(6, 7, 3), dtype=np.uint8))
    out = resize_bilinear(f, 7, 6)
    assert np.array_equal(out.data, f.data)
    assert out.data is not f.data


def test_resize_two_by_two_to_center_sample():
    f = Frame(np.array([[0, 100], [0, 100]], dtype=np.uint8))
    out = resize_bilinear(f, 1, 1)
    assert int(out.data[0, 0, 0]) == 50


def test_resize_constant_stays_constant():
    f = Frame(np.full((3, 5, 3), 77, dtype=np.uint8))
    for w, h in ((1, 1), (4, 9), (10, 2)):
        out = resize_bilinear(f, w, h)
        assert out.data.shape == (h, w, 3)
        assert np.all(out.data == 77)


@given(h=st.integers(1, 12), w=st.integers(1, 12),
       oh=st.integers(1, 12), ow=st.integers(1, 12),
       seed=st.integers(0, 10_000))
@settings(max_examples=80, deadline=None)
def test_resize_output_within_input_range(h, w, oh, ow, seed):
    rng = np.random.default_rng(seed)
    data = rng.integers(0, 256, size=(h, w, 1), dtype=np.uint8)
    out = resize_bilinear(Frame(data), ow, oh)
    assert out.data.shape == (oh, ow, 1)
    assert out.data.min() >= data.min()
    assert out.data.max() <= data.max()


def test_resize_rejects_zero_dimensions():
    f = Frame(np.zeros((2, 2), dtype=np.uint8))
    with pytest.raises(ShapeError):
        resize_bilinear(f, 0, 1)


# --- Sources -----------------------------------------------------------------


def test_sidecar_parsing(tmp_path):
    p = tmp_path / "clip.raw.meta"
    p.write_text("# geometry\nwidth = 4\n\nheight=2\nfps = 8.0\n")
    assert read_sidecar(p) == {"width": "4", "height": "2", "fps": "8.0"}


def test_sidecar_rejects_bad_line(tmp_path):
    p = tmp_path / "bad.meta"
    p.write_text("width 4\n")
    with pytest.raises(FormatError):
        read_sidecar(p)


def test_raw_planar_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    frames = rng.integers(0, 256, size=(8, 6, 4, 3), dtype=np.uint8)
    path = tmp_path / "clip.raw"
    write_raw_clip(path, frames, fps=8.0)
    seq = load_frame_sequence(path)
    assert len(seq) == 8
    assert seq.fps == 8.0
    for i in range(8):
        assert np.array_equal(seq.frames[i].data, frames[i])


def test_raw_planar_greyscale(tmp_path):
    rng = np.random.default_rng(3)
    frames = rng.integers(0, 256, size=(8, 32, 32, 1), dtype=np.uint8)
    path = tmp_path / "grey.raw"
    write_raw_clip(path, frames, fps=8.0)
    seq = load_frame_sequence(path)
    assert seq.frames[0].channels == 1
    assert np.array_equal(seq.frames[3].data, frames[3])


def test_raw_planar_explicit_geometry_beats_missing_sidecar(tmp_path):
    rng = np.random.default_rng(4)
    frames = rng.integers(0, 256, size=(2, 3, 5, 3), dtype=np.uint8)
    path = tmp_path / "bare.raw"
    path.write_bytes(np.ascontiguousarray(np.moveaxis(frames, 3, 1)).tobytes())
    seq = load_frame_sequence(path, width=5, height=3, channels=3, fps=4.0)
    assert np.array_equal(seq.frames[1].data, frames[1])


def test_raw_planar_missing_geometry(tmp_path):
    path = tmp_path / "bare.raw"
    path.write_bytes(b"\x00" * 12)
    with pytest.raises(FormatError):
        load_frame_sequence(path)


def test_raw_planar_byte_count_mismatch(tmp_path):
    path = tmp_path / "short.raw"
    path.write_bytes(b"\x00" * 13)
    with pytest.raises(FormatError):
        load_frame_sequence(path, width=2, height=2, channels=3, fps=1.0)


def test_image_directory_loading(tmp_path):
    from PIL import Image

    rng = np.random.default_rng(6)
    stack = rng.integers(0, 256, size=(3, 8, 8, 3), dtype=np.uint8)
    for i in range(3):
        Image.fromarray(stack[i]).save(tmp_path / f"frame{i:03d}.png")
    (tmp_path / "manifest.txt").write_text("fps = 10\n")
    seq = load_frame_sequence(tmp_path)
    assert len(seq) == 3
    assert seq.fps == 10.0
    for i in range(3):
        assert np.array_equal(seq.frames[i].data, stack[i])


def test_image_directory_requires_fps(tmp_path):
    from PIL import Image

    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(tmp_path / "a.png")
    with pytest.raises(FormatError):
        load_frame_sequence(tmp_path)


def test_piped_decoder_reads_interleaved_stdout(tmp_path):
    rng = np.random.default_rng(7)
    frames = rng.integers(0, 256, size=(4, 3, 2, 3), dtype=np.uint8)
    path = tmp_path / "clip.rgb"
    path.write_bytes(frames.tobytes())
    seq = load_frame_sequence(
        path, decoder_template="cat {path}", width=2, height=3, channels=3, fps=2.0
    )
    assert len(seq) == 4
    for i in range(4):
        assert np.array_equal(seq.frames[i].data, frames[i])


def test_piped_decoder_failure(tmp_path):
    path = tmp_path / "clip.rgb"
    path.write_bytes(b"\x00" * 4)
    with pytest.raises(FormatError):
        load_frame_sequence(
            path, decoder_template="false", width=2, height=2, channels=1, fps=1.0
        )


def test_missing_source():
    with pytest.raises(FormatError):
        load_frame_sequence("/nonexistent/clip.raw", width=1, height=1, channels=1, fps=1.0)


def test_unknown_format(tmp_path):
    path = tmp_path / "x.raw"
    path.write_bytes(b"\x00")
    with pytest.raises(FormatError):
        load_frame_sequence(path, format="mystery", width=1, height=1, channels=1, fps=1.0)
