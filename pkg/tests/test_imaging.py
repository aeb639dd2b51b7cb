import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image as PILImage

from blurbench.errors import (
    BadFrameNameError,
    BadImageError,
    BadResizeError,
    InconsistentFramesError,
    NoFramesError,
)
from blurbench.imaging import (
    Image,
    downsample_box,
    load_frame_sequence,
    read_image,
    to_grayscale,
    write_image,
)


def gray(values, w, h):
    return Image(np.array(values, dtype=np.uint8).reshape(h, w))


def box_oracle(px, out_w, out_h):
    """Assign each source pixel by its centre, average per cell, round half up."""
    h, w = px.shape
    sums = [[0] * out_w for _ in range(out_h)]
    counts = [[0] * out_w for _ in range(out_h)]
    for y in range(h):
        for x in range(w):
            cx = int(((x + 0.5) * out_w) // w)
            cy = int(((y + 0.5) * out_h) // h)
            sums[cy][cx] += int(px[y, x])
            counts[cy][cx] += 1
    from fractions import Fraction
    import math
    return np.array(
        [[math.floor(Fraction(sums[j][i], counts[j][i]) + Fraction(1, 2)) for i in range(out_w)] for j in range(out_h)]
    )


class TestImage:
    def test_immutable(self):
        img = gray([1, 2, 3, 4], 2, 2)
        with pytest.raises(ValueError):
            img.pixels[0, 0] = 9

    def test_copies_input(self):
        a = np.zeros((2, 2), dtype=np.uint8)
        img = Image(a)
        a[0, 0] = 7
        assert img.pixels[0, 0] == 0

    def test_out_of_range(self):
        with pytest.raises(BadImageError):
            Image(np.array([[256]]))
        with pytest.raises(BadImageError):
            Image(np.array([[-1]]))

    def test_bad_channels(self):
        with pytest.raises(BadImageError):
            Image(np.zeros((2, 2, 4), dtype=np.uint8))

    def test_dims(self):
        img = Image(np.zeros((3, 5, 3), dtype=np.uint8))
        assert (img.width, img.height, img.channels) == (5, 3, 3)
        assert img.colorspace == "gamma-encoded"


class TestGrayscale:
    @pytest.mark.parametrize("rgb, expected", [((255, 255, 255), 255), ((0, 0, 0), 0), ((255, 0, 0), 76)])
    def test_examples(self, rgb, expected):
        img = Image(np.array([[rgb]], dtype=np.uint8))
        assert to_grayscale(img).pixels[0, 0] == expected

    def test_gray_unchanged(self):
        img = gray([5, 6, 7, 8], 2, 2)
        assert to_grayscale(img) is img

    @given(arrays(np.uint8, (3, 4, 3)))
    def test_matches_float_formula(self, a):
        out = to_grayscale(Image(a)).pixels
        for (y, x), v in np.ndenumerate(out):
            r, g, b = (int(c) for c in a[y, x])
            # floor(x + 0.5) with exact decimal weights
            assert v == (299 * r + 587 * g + 114 * b + 500) // 1000

    @given(arrays(np.uint8, (4, 4)))
    def test_idempotent(self, a):
        img = Image(a)
        assert to_grayscale(to_grayscale(img)) == to_grayscale(img)


class TestDownsample:
    def test_mean(self):
        assert downsample_box(gray([0, 0, 100, 100], 2, 2), 1, 1).pixels[0, 0] == 50

    def test_identity(self):
        img = gray(range(12), 4, 3)
        assert downsample_box(img, 4, 3) == img

    def test_ramp(self):
        out = downsample_box(gray(range(16), 4, 4), 2, 2)
        assert out.pixels.tolist() == [[3, 5], [11, 13]]
        assert out.pixels.tolist() == box_oracle(np.arange(16).reshape(4, 4), 2, 2).tolist()

    def test_upscale_rejected(self):
        with pytest.raises(BadResizeError):
            downsample_box(gray([0] * 4, 2, 2), 3, 2)

    def test_rgb_per_channel(self):
        a = np.arange(4 * 4 * 3, dtype=np.uint8).reshape(4, 4, 3)
        out = downsample_box(Image(a), 2, 2)
        for c in range(3):
            assert out.pixels[:, :, c].tolist() == box_oracle(a[:, :, c], 2, 2).tolist()

    @settings(max_examples=60)
    @given(st.data())
    def test_oracle_and_bounds(self, data):
        h = data.draw(st.integers(1, 12))
        w = data.draw(st.integers(1, 12))
        a = data.draw(arrays(np.uint8, (h, w)))
        ow = data.draw(st.integers(1, w))
        oh = data.draw(st.integers(1, h))
        out = downsample_box(Image(a), ow, oh).pixels
        assert out.tolist() == box_oracle(a, ow, oh).tolist()
        # each output lies within its source block
        for j in range(oh):
            for i in range(ow):
                rows = [y for y in range(h) if int(((y + 0.5) * oh) // h) == j]
                cols = [x for x in range(w) if int(((x + 0.5) * ow) // w) == i]
                block = a[np.ix_(rows, cols)]
                assert block.min() <= out[j, i] <= block.max()


class TestLoadFrames:
    def test_count_and_fps(self, frame_dir):
        d = frame_dir([np.full((4, 4), k, np.uint8) for k in range(3)])
        seq = load_frame_sequence(d, 240)
        assert len(seq) == 3 and seq.fps == 240
        assert [f.pixels[0, 0] for f in seq.frames] == [0, 1, 2]

    def test_empty(self, tmp_path):
        with pytest.raises(NoFramesError):
            load_frame_sequence(tmp_path, 240)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(NoFramesError):
            load_frame_sequence(tmp_path / "nope", 240)

    def test_inconsistent(self, frame_dir):
        d = frame_dir([np.zeros((4, 4), np.uint8), np.zeros((8, 8), np.uint8)])
        with pytest.raises(InconsistentFramesError):
            load_frame_sequence(d, 240)

    def test_bad_name(self, frame_dir):
        d = frame_dir([np.zeros((2, 2), np.uint8)])
        write_image(Image(np.zeros((2, 2), np.uint8)), d / "000001b.png")
        with pytest.raises(BadFrameNameError):
            load_frame_sequence(d, 240)

    def test_prefix_and_numeric_order(self, frame_dir):
        # 9 < 10 numerically even though "frame_10" sorts first lexically
        d = frame_dir([np.full((2, 2), k, np.uint8) for k in range(11)], fmt="frame_{}.png")
        seq = load_frame_sequence(d, 30)
        assert [int(f.pixels[0, 0]) for f in seq.frames] == list(range(11))

    def test_order_independent_of_creation_time(self, frame_dir):
        d = frame_dir([np.full((2, 2), k, np.uint8) for k in range(4)])
        files = sorted(d.iterdir())
        for t, p in zip([400, 100, 300, 200], files):
            os.utime(p, (t, t))
        seq = load_frame_sequence(d, 30)
        assert [int(f.pixels[0, 0]) for f in seq.frames] == [0, 1, 2, 3]

    def test_pgm_ppm(self, tmp_path):
        g = np.arange(12, dtype=np.uint8).reshape(3, 4)
        PILImage.fromarray(g, "L").save(tmp_path / "000000.pgm")
        PILImage.fromarray(g, "L").save(tmp_path / "000001.pgm")
        seq = load_frame_sequence(tmp_path, 60)
        assert seq[0].pixels.tolist() == g.tolist()
        rgb = np.arange(36, dtype=np.uint8).reshape(3, 4, 3)
        PILImage.fromarray(rgb, "RGB").save(tmp_path / "x.ppm")
        assert read_image(tmp_path / "x.ppm").pixels.tolist() == rgb.tolist()

    def test_png_roundtrip(self, tmp_path, rng):
        a = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
        write_image(Image(a), tmp_path / "a.png")
        assert read_image(tmp_path / "a.png") == Image(a)

    def test_16bit_rejected(self, tmp_path):
        PILImage.fromarray(np.zeros((2, 2), dtype=np.uint16)).save(tmp_path / "x.png")
        with pytest.raises(BadImageError):
            read_image(tmp_path / "x.png")
