import filecmp
import warnings

import numpy as np
import pytest

from gsniqa.data import (DISTORTIONS, PatchSampler, batch_iter, distort, gaussian_blur, load_manifest, mos_proxy,
                         read_image, sample_eval_patches, sample_train_pair, synth_corpus, write_image)
from gsniqa.errors import ContractError, FormatError, InputError
from gsniqa.metrics import psnr


class TestPPM:
    def test_round_trip(self, tmp_path, rng):
        img = rng.integers(0, 256, size=(5, 7, 3)) / 255.0
        write_image(img, tmp_path / "a.ppm")
        np.testing.assert_array_equal(read_image(tmp_path / "a.ppm"), img)

    def test_endpoints_and_midpoint(self, tmp_path):
        img = np.zeros((1, 3, 3))
        img[0, 1] = 128 / 255
        img[0, 2] = 1.0
        write_image(img, tmp_path / "a.ppm")
        raw = (tmp_path / "a.ppm").read_bytes()
        assert raw.startswith(b"P6\n3 1\n255\n")
        assert raw[-9:] == bytes([0, 0, 0, 128, 128, 128, 255, 255, 255])

    def test_out_of_range_is_clamped(self, tmp_path):
        write_image(np.array([[[-0.5, 2.0, 0.5]]]), tmp_path / "a.ppm")
        assert (tmp_path / "a.ppm").read_bytes()[-3:] == bytes([0, 255, 128])

    def test_header_comment(self, tmp_path):
        (tmp_path / "a.ppm").write_bytes(b"P6\n# note\n1 1\n255\n\x01\x02\x03")
        np.testing.assert_array_equal(read_image(tmp_path / "a.ppm")[0, 0] * 255, [1, 2, 3])

    @pytest.mark.parametrize("payload, match", [
        (b"P5\n1 1\n255\n\x00", "magic"),
        (b"P6\n1 1\n65535\n\x00\x00\x00", "maxval"),
        (b"P6\n2 2\n255\n\x00\x00\x00", "truncated"),
        (b"P6\nx 1\n255\n\x00\x00\x00", "width"),
    ])
    def test_format_errors(self, tmp_path, payload, match):
        (tmp_path / "bad.ppm").write_bytes(payload)
        with pytest.raises(FormatError, match=match):
            read_image(tmp_path / "bad.ppm")


class TestDistortions:
    def test_level_zero_is_identity(self, rng):
        img = rng.uniform(size=(16, 16, 3))
        for name in DISTORTIONS:
            assert np.array_equal(distort(img, name, 0), img)

    def test_blur_preserves_constant(self):
        np.testing.assert_allclose(gaussian_blur(np.full((20, 20, 3), 0.3), 2.0), 0.3, atol=1e-12)

    @pytest.mark.parametrize("name", list(DISTORTIONS))
    def test_severity_monotone(self, rng, name):
        img = rng.uniform(size=(32, 32, 3))
        noise = rng.standard_normal(img.shape)
        errs = [np.mean((distort(img, name, lvl, noise) - img) ** 2) for lvl in range(1, 6)]
        assert all(a < b for a, b in zip(errs, errs[1:]))

    def test_mos_proxy_strictly_decreasing(self):
        for name in DISTORTIONS:
            m = [mos_proxy(name, lvl) for lvl in range(6)]
            assert all(a > b for a, b in zip(m, m[1:]))
        assert mos_proxy("gaussian_blur", 1) == 82.0

    def test_unknown_type(self, rng):
        with pytest.raises(ContractError):
            distort(rng.uniform(size=(8, 8, 3)), "jpeg", 1)


class TestCorpus:
    def test_counts_and_splits(self, small_corpus):
        m = load_manifest(small_corpus / "manifest.csv")
        m.validate()
        assert len(m.records) == 4 * 4 * 6
        assert sum(r.level > 0 for r in m.records) == 80
        counts = {s: len({r.ref_path for r in m.split(s)}) for s in ("train", "valid", "test")}
        assert counts == {"train": 2, "valid": 1, "test": 1}

    def test_deterministic(self, small_corpus, tmp_path):
        synth_corpus(0, 4, tmp_path)
        for rel in ("manifest.csv", "refs/ref_000.ppm", "dist/ref_003_white_noise_5.ppm"):
            assert filecmp.cmp(small_corpus / rel, tmp_path / rel, shallow=False)

    def test_psnr_decreases_with_noise_level(self, small_corpus):
        m = load_manifest(small_corpus / "manifest.csv")
        for ref in sorted({r.ref_path for r in m.records}):
            rows = sorted((r for r in m.records if r.ref_path == ref and r.dist_type == "white_noise"),
                          key=lambda r: r.level)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                vals = [psnr(m.image(ref), m.image(r.dist_path)) for r in rows]
            assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_too_few_refs(self, tmp_path):
        with pytest.raises(ContractError):
            synth_corpus(0, 2, tmp_path)

    def test_missing_file_detected(self, small_corpus, tmp_path):
        m = load_manifest(small_corpus / "manifest.csv")
        m.root = tmp_path
        with pytest.raises(InputError):
            m.validate()

    def test_bad_header(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("a,b\n")
        with pytest.raises(FormatError):
            load_manifest(tmp_path / "manifest.csv")


class TestSampling:
    def test_train_pair_aligned(self, rng):
        ref = rng.uniform(size=(40, 50, 3))
        sampler = PatchSampler("train_random", 16, seed=3)
        for _ in range(20):
            a, b = sample_train_pair(sampler, ref, ref)
            assert a.shape == (3, 16, 16)
            assert np.array_equal(a, b)

    def test_flip_applied_to_both(self):
        ref = np.arange(4 * 4 * 3, dtype=float).reshape(4, 4, 3)
        dist = ref + 100
        sampler = PatchSampler("train_random", 4, seed=0, flip_prob=1.0)
        a, b = sample_train_pair(sampler, ref, dist)
        np.testing.assert_array_equal(a, ref[:, ::-1].transpose(2, 0, 1))
        np.testing.assert_array_equal(b - a, 100)

    def test_seeded(self, rng):
        ref = rng.uniform(size=(40, 40, 3))
        a = sample_train_pair(PatchSampler(patch_size=16, seed=9), ref, ref)[0]
        b = sample_train_pair(PatchSampler(patch_size=16, seed=9), ref, ref)[0]
        assert np.array_equal(a, b)

    def test_eval_patches(self, rng):
        ref = rng.uniform(size=(32, 32, 3))
        patches = sample_eval_patches(PatchSampler("eval_fixed", 16), ref, ref)
        assert len(patches) == 5
        np.testing.assert_array_equal(patches[4][0], ref[8:24, 8:24].transpose(2, 0, 1))

    def test_too_small(self, rng):
        with pytest.raises(InputError):
            sample_train_pair(PatchSampler(patch_size=64), np.zeros((32, 32, 3)), np.zeros((32, 32, 3)))

    def test_batches(self, small_corpus):
        m = load_manifest(small_corpus / "manifest.csv")
        sampler = PatchSampler(patch_size=24, seed=0)
        # two training references give 48 records; batch 20 -> 20, 20, 8
        sizes = [len(b.mos) for b in batch_iter(m, "train", 20, sampler, seed=1)]
        assert sizes == [20, 20, 8]
        seen = np.concatenate([b.indices for b in batch_iter(m, "train", 20, sampler, seed=1)])
        assert sorted(seen) == list(range(48))
