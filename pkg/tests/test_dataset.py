import numpy as np
import pytest

from vjcascade.dataset import (GTBox, SynthSpec, crop_resize, format_boxes_line, load_ground_truth,
                               load_manifest, load_negative_list, load_positive_images, resize,
                               synth_dataset, write_synth)
from vjcascade.errors import MalformedManifest, MissingFile, RectOutOfImage
from vjcascade.imagecore import GrayImage, Rect, load_image, save_image


def put_image(dirpath, name, w=40, h=30, value=100):
    save_image(GrayImage.from_array(np.full((h, w), value, dtype=np.uint8)), dirpath / name)
    return name


def write(p, text):
    p.write_text(text, encoding="utf-8")
    return p


class TestManifest:
    def test_single_line(self, tmp_path):
        put_image(tmp_path, "img1.pgm", 40, 40)
        m = load_manifest(write(tmp_path / "pos.txt", "img1.pgm 1 10 10 24 24\n"))
        assert m.positives == [(str(tmp_path / "img1.pgm"), Rect(10, 10, 24, 24))]

    def test_arity_error_names_line(self, tmp_path):
        put_image(tmp_path, "a.pgm")
        p = write(tmp_path / "pos.txt", "# header\na.pgm 1 0 0 5 5\na.pgm 2 0 0 5 5\n")
        with pytest.raises(MalformedManifest) as ei:
            load_manifest(p)
        assert ei.value.line == 3 and str(p) in str(ei.value)

    def test_count_oracle(self, tmp_path, rng):
        lines = []
        for i in range(12):
            put_image(tmp_path, f"i{i}.pgm", 50, 50)
            k = int(rng.integers(0, 4))
            boxes = " ".join(f"{int(rng.integers(0, 20))} {int(rng.integers(0, 20))} 10 12"
                             for _ in range(k))
            lines.append(f"i{i}.pgm {k} {boxes}".strip())
        p = write(tmp_path / "pos.txt", "\n\n".join(lines) + "\n")
        expect = 0
        for line in p.read_text().splitlines():
            if line.strip():
                expect += int(line.split()[1])
        assert len(load_manifest(p).positives) == expect

    def test_missing_image(self, tmp_path):
        p = write(tmp_path / "pos.txt", "nope.pgm 1 0 0 5 5\n")
        with pytest.raises(MissingFile) as ei:
            load_manifest(p)
        assert ei.value.line == 1

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(MissingFile):
            load_manifest(tmp_path / "none.txt")

    def test_rect_out_of_image(self, tmp_path):
        put_image(tmp_path, "a.pgm", 40, 30)
        with pytest.raises(RectOutOfImage) as ei:
            load_manifest(write(tmp_path / "pos.txt", "a.pgm 1 20 10 24 24\n"))
        assert ei.value.line == 1

    @pytest.mark.parametrize("line", ["a.pgm x 0 0 5 5", "a.pgm 1 0 0 5 five", "a.pgm -1",
                                      "a.pgm 1 0 0 0 5", "a.pgm 1 0 0 5 5 9", "a.pgm"])
    def test_malformed_lines(self, tmp_path, line):
        put_image(tmp_path, "a.pgm")
        with pytest.raises(MalformedManifest):
            load_manifest(write(tmp_path / "pos.txt", line + "\n"))

    def test_negatives_list(self, tmp_path):
        put_image(tmp_path, "n1.pgm")
        m = load_manifest(write(tmp_path / "pos.txt", ""), write(tmp_path / "neg.txt", "n1.pgm\n"))
        assert m.negatives == [str(tmp_path / "n1.pgm")]
        with pytest.raises(MissingFile):
            load_negative_list(write(tmp_path / "neg2.txt", "n1.pgm\nn2.pgm\n"))

    def test_positive_crops(self, tmp_path):
        arr = np.zeros((30, 40), dtype=np.uint8)
        arr[0:12, 0:12] = 200
        save_image(GrayImage.from_array(arr), tmp_path / "a.pgm")
        m = load_manifest(write(tmp_path / "pos.txt", "a.pgm 2 0 0 12 12 0 0 24 24\n"))
        a, b = load_positive_images(m, 24, 24)
        assert (a.width, a.height) == (24, 24)
        assert (a.pixels == 200).all()
        assert b == GrayImage.from_array(arr[:24, :24])


class TestGroundTruth:
    def test_with_ignore(self, tmp_path):
        put_image(tmp_path, "s.pgm", 100, 80)
        p = write(tmp_path / "gt.txt", "s.pgm 2 1 1 20 20 50 40 30 30 ignore 1 0 60 10 10\n")
        gt = load_ground_truth(p)
        boxes = gt[str(tmp_path / "s.pgm")]
        assert boxes == [GTBox(Rect(1, 1, 20, 20)), GTBox(Rect(50, 40, 30, 30)),
                         GTBox(Rect(0, 60, 10, 10), True)]
        assert format_boxes_line("s.pgm", boxes) == "s.pgm 2 1 1 20 20 50 40 30 30 ignore 1 0 60 10 10"

    def test_out_of_bounds(self, tmp_path):
        put_image(tmp_path, "s.pgm", 50, 50)
        with pytest.raises(RectOutOfImage):
            load_ground_truth(write(tmp_path / "gt.txt", "s.pgm 1 40 40 20 20\n"))

    def test_bad_trailer(self, tmp_path):
        with pytest.raises(MalformedManifest) as ei:
            load_ground_truth(write(tmp_path / "gt.txt", "s.pgm 0 skip 1\n"), check_images=False)
        assert ei.value.line == 1

    def test_empty_frame(self, tmp_path):
        gt = load_ground_truth(write(tmp_path / "gt.txt", "s.pgm 0\n"), check_images=False)
        assert gt == {str(tmp_path / "s.pgm"): []}


class TestResample:
    def test_downscale_is_area_average(self):
        arr = np.array([[0, 100, 20, 40], [200, 60, 40, 0]], dtype=np.uint8)
        out = resize(GrayImage.from_array(arr), 2, 1)
        assert out.pixels.tolist() == [[90, 25]]

    def test_upscale_is_nearest(self):
        out = resize(GrayImage.from_array(np.array([[1, 2], [3, 4]], dtype=np.uint8)), 4, 4)
        assert out.pixels.tolist() == [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]

    def test_crop_idempotent_at_target(self, rng):
        img = GrayImage.from_array(rng.integers(0, 256, size=(60, 60), dtype=np.uint8))
        once = crop_resize(img, Rect(3, 5, 37, 37), 24, 24)
        assert crop_resize(once, Rect(0, 0, 24, 24), 24, 24) == once
        assert crop_resize(img, Rect(3, 5, 37, 37), 24, 24) == once

    def test_constant_stays_constant(self):
        img = GrayImage.from_array(np.full((33, 47), 77, dtype=np.uint8))
        assert (resize(img, 24, 24).pixels == 77).all()


class TestSynth:
    SPEC = SynthSpec(n_positives=10, n_negative_frames=4, n_scenes=6)

    def test_deterministic(self):
        a, b = synth_dataset(self.SPEC, seed=11), synth_dataset(self.SPEC, seed=11)
        for xs, ys in ((a.positives, b.positives), (a.negatives, b.negatives), (a.scenes, b.scenes)):
            assert [x.pixels.tobytes() for x in xs] == [y.pixels.tobytes() for y in ys]
        assert a.truth == b.truth
        c = synth_dataset(self.SPEC, seed=12)
        assert a.positives[0] != c.positives[0]

    def test_zero_objects(self):
        d = synth_dataset(SynthSpec(n_positives=2, n_negative_frames=1, n_scenes=5,
                                    objects_per_scene=(0, 0)), seed=1)
        assert d.truth == [[]] * 5

    def test_boxes_in_frame(self):
        spec = SynthSpec(n_positives=1, n_negative_frames=1, n_scenes=40)
        d = synth_dataset(spec, seed=3)
        for img, boxes in zip(d.scenes, d.truth):
            for b in boxes:
                assert b.rect.fits(img.width, img.height)
                assert spec.box_size[0] <= b.rect.w <= spec.box_size[1]

    def test_shapes(self):
        d = synth_dataset(self.SPEC, seed=2)
        assert len(d.positives) == 10 and len(d.negatives) == 4 and len(d.scenes) == 6
        assert all((p.width, p.height) == (24, 24) for p in d.positives)
        assert all((n.width, n.height) == (128, 96) for n in d.negatives)

    def test_square_darker_than_surround(self):
        d = synth_dataset(self.SPEC, seed=4)
        for p in d.positives:
            px = p.pixels.astype(float)
            assert px[8:16, 8:16].mean() < px[:4].mean()

    def test_write_and_reload(self, tmp_path):
        d = synth_dataset(self.SPEC, seed=5)
        paths = write_synth(d, tmp_path)
        m = load_manifest(paths["positives"], paths["negatives"])
        assert len(m.positives) == 10 and len(m.negatives) == 4
        assert load_positive_images(m, 24, 24) == d.positives
        gt = load_ground_truth(paths["truth"])
        assert [gt[str(tmp_path / f"scenes/{i:05d}.pgm")] for i in range(6)] == d.truth
        assert load_image(m.negatives[0]) == d.negatives[0]
