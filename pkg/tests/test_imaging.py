"""Imaging tests: condition filters, augmentation exactness, dataset export."""

import numpy as np
import pytest

from abatre.imaging import (
    AugmentSpec,
    BoxLabel,
    LabeledImage,
    PackCondition,
    RasterImage,
    apply_condition,
    augment,
    expand_dataset,
    labels_from_csv,
    labels_to_csv,
    load_image,
    load_ppm,
    read_manifest,
    sample_augment_spec,
    save_image,
    save_ppm,
    write_manifest,
)


def checker_image(w=40, h=30):
    rng = np.random.default_rng(77)
    px = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    return RasterImage(px)


def labeled(w=40, h=30):
    return LabeledImage(
        checker_image(w, h),
        (BoxLabel("bolt", (4, 5, 12, 11)), BoxLabel("module", (20, 8, 36, 28))),
    ).validate()


class TestConditions:
    def test_zero_strength_identity(self):
        img = checker_image()
        for cond in PackCondition:
            out = apply_condition(img, cond, np.random.default_rng(1), strength=0.0)
            assert out.same_pixels(img)
            assert out.pixels is not img.pixels

    def test_deterministic_per_seed(self):
        img = checker_image()
        for cond in PackCondition:
            a = apply_condition(img, cond, np.random.default_rng(7))
            b = apply_condition(img, cond, np.random.default_rng(7))
            assert a.same_pixels(b), cond

    def test_different_seeds_differ(self):
        img = checker_image(80, 60)
        a = apply_condition(img, PackCondition.SCRATCHES, np.random.default_rng(1))
        b = apply_condition(img, PackCondition.SCRATCHES, np.random.default_rng(2))
        assert not a.same_pixels(b)

    def test_contamination_green_excess(self):
        img = RasterImage(np.full((60, 80, 3), 120, dtype=np.uint8))
        out = apply_condition(img, PackCondition.CONTAMINATION, np.random.default_rng(3))
        changed = np.any(out.pixels != img.pixels, axis=-1)
        assert changed.any()
        region = out.pixels[changed].astype(float)
        green_excess = region[:, 1] - 0.5 * (region[:, 0] + region[:, 2])
        assert green_excess.mean() > 0.0

    def test_dust_brightens_dark_image(self):
        img = RasterImage(np.full((20, 20, 3), 30, dtype=np.uint8))
        out = apply_condition(img, PackCondition.DUST, np.random.default_rng(4))
        assert out.pixels.mean() > img.pixels.mean()

    def test_dimensions_preserved(self):
        img = checker_image(33, 21)
        for cond in PackCondition:
            out = apply_condition(img, cond, np.random.default_rng(5))
            assert (out.height, out.width) == (21, 33)

    def test_negative_strength_rejected(self):
        with pytest.raises(ValueError):
            apply_condition(checker_image(), PackCondition.DUST,
                            np.random.default_rng(0), strength=-1.0)


class TestAugment:
    def test_identity_spec_bit_exact(self):
        lab = labeled()
        out = augment(lab, AugmentSpec())
        assert out.image.same_pixels(lab.image)
        assert out.labels == lab.labels

    def test_horizontal_flip_involution(self):
        lab = labeled()
        spec = AugmentSpec(flip="horizontal")
        out = augment(augment(lab, spec), spec)
        assert out.image.same_pixels(lab.image)
        assert out.labels == lab.labels

    def test_vertical_flip_involution(self):
        lab = labeled()
        spec = AugmentSpec(flip="vertical")
        out = augment(augment(lab, spec), spec)
        assert out.image.same_pixels(lab.image)
        assert out.labels == lab.labels

    def test_rotation_180_involution(self):
        lab = labeled()
        spec = AugmentSpec(rotation=180)
        out = augment(augment(lab, spec), spec)
        assert out.image.same_pixels(lab.image)
        assert out.labels == lab.labels

    def test_rotation_90_bbox_formula(self):
        """Quarter turn on a w x h image: (u1,v1,u2,v2) -> (v1, w-u2, v2, w-u1)."""
        lab = labeled(w=40, h=30)
        out = augment(lab, AugmentSpec(rotation=90))
        assert (out.image.width, out.image.height) == (30, 40)
        for before, after in zip(lab.labels, out.labels):
            u1, v1, u2, v2 = before.bbox
            assert after.bbox == (v1, 40 - u2, v2, 40 - u1)

    def test_rotation_90_pixel_permutation(self):
        """The bbox region holds the same pixel multiset after rotation."""
        lab = labeled()
        out = augment(lab, AugmentSpec(rotation=90))
        for before, after in zip(lab.labels, out.labels):
            u1, v1, u2, v2 = before.bbox
            r1, s1, r2, s2 = after.bbox
            src = lab.image.pixels[v1:v2, u1:u2].reshape(-1, 3)
            dst = out.image.pixels[s1:s2, r1:r2].reshape(-1, 3)
            assert sorted(map(tuple, src)) == sorted(map(tuple, dst))

    def test_four_quarter_turns_identity(self):
        lab = labeled()
        out = lab
        for _ in range(4):
            out = augment(out, AugmentSpec(rotation=90))
        assert out.image.same_pixels(lab.image)
        assert out.labels == lab.labels

    def test_flip_pixel_permutation(self):
        lab = labeled()
        out = augment(lab, AugmentSpec(flip="horizontal"))
        for before, after in zip(lab.labels, out.labels):
            u1, v1, u2, v2 = before.bbox
            r1, s1, r2, s2 = after.bbox
            src = lab.image.pixels[v1:v2, u1:u2].reshape(-1, 3)
            dst = out.image.pixels[s1:s2, r1:r2].reshape(-1, 3)
            assert sorted(map(tuple, src)) == sorted(map(tuple, dst))

    def test_brightness_clamps(self):
        lab = labeled()
        bright = augment(lab, AugmentSpec(brightness=1.0))
        assert np.all(bright.image.pixels == 255)
        dark = augment(lab, AugmentSpec(brightness=-1.0))
        assert np.all(dark.image.pixels == 0)

    def test_contrast_pivot(self):
        px = np.full((8, 8, 3), 128, dtype=np.uint8)
        lab = LabeledImage(RasterImage(px), (BoxLabel("x", (0, 0, 8, 8)),))
        out = augment(lab, AugmentSpec(contrast=1.9))
        assert np.all(out.image.pixels == 128)  # mid-grey fixed point

    def test_crop_drops_outside_labels(self):
        lab = LabeledImage(
            checker_image(40, 30),
            (BoxLabel("a", (0, 0, 3, 3)), BoxLabel("b", (18, 12, 25, 20))),
        )
        out = augment(lab, AugmentSpec(crop=0.5, rng_seed=4))
        assert out.image.width == 20 and out.image.height == 15
        for lab_out in out.labels:
            assert lab_out.area >= 1
            u1, v1, u2, v2 = lab_out.bbox
            assert 0 <= u1 < u2 <= 20 and 0 <= v1 < v2 <= 15

    def test_noise_deterministic(self):
        lab = labeled()
        s = AugmentSpec(noise_sigma=5.0, rng_seed=9)
        assert augment(lab, s).image.same_pixels(augment(lab, s).image)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            AugmentSpec(brightness=2.0).validate()
        with pytest.raises(ValueError):
            AugmentSpec(contrast=0.0).validate()
        with pytest.raises(ValueError):
            AugmentSpec(crop=0.0).validate()
        with pytest.raises(ValueError):
            AugmentSpec(flip="diagonal").validate()
        with pytest.raises(ValueError):
            AugmentSpec(rotation=45).validate()


class TestExpandDataset:
    def test_default_six_variants(self):
        out = expand_dataset(labeled(), rng=np.random.default_rng(0))
        assert len(out) == 6

    def test_single_variant_reproducible(self):
        a = expand_dataset(labeled(), 1, np.random.default_rng(5))[0]
        b = expand_dataset(labeled(), 1, np.random.default_rng(5))[0]
        assert a.image.same_pixels(b.image)
        assert a.labels == b.labels

    def test_invalid_count(self):
        with pytest.raises(ValueError):
            expand_dataset(labeled(), 0)

    def test_sampled_specs_within_ranges(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            spec = sample_augment_spec(rng).validate()
            assert -0.2 <= spec.brightness <= 0.2
            assert 0.8 <= spec.contrast <= 1.25
            assert 0.8 <= spec.crop <= 1.0
            assert 0.0 <= spec.noise_sigma <= 8.0

    def test_sweep_120_inputs(self):
        """120 seeded inputs x 6 variants: all outputs hold bbox invariants."""
        rng = np.random.default_rng(90)
        total = 0
        for i in range(120):
            w = int(rng.integers(24, 48))
            h = int(rng.integers(24, 48))
            px = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
            lab = LabeledImage(
                RasterImage(px),
                (BoxLabel("part", (2, 2, min(12, w), min(12, h))),),
            ).validate()
            variants = expand_dataset(lab, 6, rng)
            for var in variants:
                var.validate()  # raises when any bbox leaves the image
            total += len(variants)
        assert total == 720


class TestFileFormats:
    def test_ppm_round_trip(self, tmp_path):
        img = checker_image()
        p = tmp_path / "img.ppm"
        save_ppm(img, p)
        assert load_ppm(p).same_pixels(img)

    def test_png_round_trip(self, tmp_path):
        img = checker_image()
        p = tmp_path / "img.png"
        save_image(img, p)
        assert load_image(p).same_pixels(img)

    def test_labels_csv_round_trip(self):
        labs = (BoxLabel("bolt", (1, 2, 3, 4)), BoxLabel("cable", (5, 6, 7, 8)))
        assert labels_from_csv(labels_to_csv(labs)) == labs

    def test_manifest_round_trip(self, tmp_path):
        pairs = [("a.png", "a.csv"), ("b.png", "b.csv")]
        mpath = tmp_path / "manifest.json"
        write_manifest(pairs, mpath)
        assert read_manifest(mpath) == pairs
