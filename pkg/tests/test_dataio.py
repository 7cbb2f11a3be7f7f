import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gcfs.dataio import (
    DegradedPair,
    Manifest,
    ManifestEntry,
    NetpbmError,
    bicubic_downsample,
    bicubic_upsample,
    blur,
    cubic,
    cubic_weights,
    gaussian_kernel,
    load_manifest,
    make_blur_pair,
    make_dataset,
    make_sr_pair,
    read_image,
    sample_patches,
    synthetic_image,
    synthetic_pairs,
    write_image,
    write_manifest,
)


# ---------------------------------------------------------------- NetPBM

def test_known_bytes_p6(tmp_path):
    p = tmp_path / "a.ppm"
    p.write_bytes(b"P6\n# comment\n2 1\n255\n" + bytes([0, 128, 255, 10, 20, 30]))
    img = read_image(p)
    assert img.shape == (3, 1, 2)
    assert img[:, 0, 0].tolist() == [0.0, 128 / 255, 1.0]
    assert img[:, 0, 1].tolist() == [10 / 255, 20 / 255, 30 / 255]


def test_write_layout(tmp_path):
    img = np.zeros((1, 2, 3))
    img[0, 1, 2] = 1.0
    write_image(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes() == b"P5\n3 2\n255\n" + bytes([0, 0, 0, 0, 0, 255])


def test_round_trip_quantization_bound(tmp_path):
    img = np.random.default_rng(0).random((3, 9, 7))
    write_image(tmp_path / "r.ppm", img)
    assert np.max(np.abs(read_image(tmp_path / "r.ppm") - img)) <= 0.5 / 255 + 1e-12


def test_zero_image_exact(tmp_path):
    write_image(tmp_path / "z.pgm", np.zeros((1, 4, 5)))
    assert np.array_equal(read_image(tmp_path / "z.pgm"), np.zeros((1, 4, 5)))


def test_round_half_up(tmp_path):
    write_image(tmp_path / "h.pgm", np.array([[[0.5 / 255, 1.5 / 255, 2.4999 / 255]]]))
    assert list((tmp_path / "h.pgm").read_bytes()[-3:]) == [1, 2, 2]


@pytest.mark.parametrize(
    "payload,match",
    [
        (b"P6\n1 1\n65535\n" + bytes(6), "maxval"),
        (b"P6\n2 2\n255\n" + bytes(5), "truncated"),
        (b"P3\n1 1\n255\n0 0 0\n", "magic"),
        (b"P5\n1\n", "header"),
        (b"P5\nx 1\n255\n\0", "header"),
    ],
)
def test_read_errors(tmp_path, payload, match):
    (tmp_path / "bad").write_bytes(payload)
    with pytest.raises(NetpbmError, match=match):
        read_image(tmp_path / "bad")


# ---------------------------------------------------------------- blur

def brute_blur(img, k):
    r = len(k) // 2
    pad = np.pad(img, ((0, 0), (r, r), (r, r)), mode="symmetric")
    out = np.zeros_like(img)
    for c in range(img.shape[0]):
        for y in range(img.shape[1]):
            for x in range(img.shape[2]):
                out[c, y, x] = np.sum(np.outer(k, k) * pad[c, y : y + 2 * r + 1, x : x + 2 * r + 1])
    return out


def test_blur_matches_bruteforce():
    img = np.random.default_rng(1).random((2, 9, 11))
    k = gaussian_kernel(1.5)
    np.testing.assert_allclose(blur(img, "gaussian", 1.5), brute_blur(img, k), atol=1e-12)


def test_gaussian_kernel_normalized():
    for s in (0.5, 1.5, 3.0):
        k = gaussian_kernel(s)
        assert abs(k.sum() - 1.0) < 1e-9
        assert len(k) == 2 * int(np.ceil(3 * s)) + 1


def test_delta_kernel_identity():
    img = synthetic_image(16, 3)
    pair = make_blur_pair(img, "delta", None)
    assert np.array_equal(pair.input, pair.target)


@pytest.mark.parametrize("kernel,param", [("gaussian", 1.5), ("box", 5), ("gaussian", 0.7)])
def test_constant_image_preserved(kernel, param):
    img = np.full((3, 12, 10), 0.37)
    assert np.max(np.abs(make_blur_pair(img, kernel, param).input - img)) < 1e-9


def test_blur_errors():
    img = np.zeros((1, 4, 4))
    with pytest.raises(ValueError, match="odd"):
        make_blur_pair(img, "box", 4)
    with pytest.raises(ValueError):
        make_blur_pair(img, "gaussian", -1.0)


@given(st.integers(0, 10_000), st.floats(0.0, 0.3))
@settings(max_examples=20, deadline=None)
def test_pixels_stay_in_range(seed, noise):
    pair = make_blur_pair(synthetic_image(12, seed), "gaussian", 1.5, noise, seed)
    assert pair.input.min() >= 0.0 and pair.input.max() <= 1.0


def test_noise_seeded():
    img = synthetic_image(12, 0)
    a = make_blur_pair(img, noise_sigma=0.05, seed=3).input
    b = make_blur_pair(img, noise_sigma=0.05, seed=3).input
    c = make_blur_pair(img, noise_sigma=0.05, seed=4).input
    assert np.array_equal(a, b) and not np.array_equal(a, c)


# ---------------------------------------------------------------- bicubic

def test_catmull_rom_values():
    assert cubic(np.array([0.0, 1.0, 2.0, 0.5]))[:3].tolist() == [1.0, 0.0, 0.0]
    assert cubic(np.array([0.5]))[0] == pytest.approx(0.5625)


def test_downsample_constant_and_shape():
    img = np.full((3, 48, 48), 0.61)
    out = bicubic_downsample(img, 2)
    assert out.shape == (3, 24, 24)
    assert np.max(np.abs(out - 0.61)) < 1e-9


def test_downsample_indivisible():
    with pytest.raises(ValueError, match="divisible"):
        bicubic_downsample(np.zeros((1, 9, 8)), 2)


@pytest.mark.parametrize("scale", [2, 3, 4])
def test_downsample_linear_ramp(scale):
    n = 12 * scale
    ramp = np.tile(np.arange(n, dtype=np.float64) / n, (1, 2 * scale, 1))
    out = bicubic_downsample(ramp, scale)
    centers = ((np.arange(n // scale) + 0.5) * scale - 0.5) / n
    # symmetric normalized weights reproduce a linear function wherever the
    # kernel support stays inside the image
    inner = slice(2, n // scale - 2)
    assert np.max(np.abs(out[0, :, inner] - centers[inner])) < 1e-6


@given(st.integers(2, 40), st.integers(2, 40))
@settings(max_examples=30, deadline=None)
def test_cubic_weight_rows_sum_to_one(n_in, n_out):
    assert np.allclose(cubic_weights(n_in, n_out).sum(axis=1), 1.0, atol=1e-12)


def test_upsample_shape_and_constant():
    out = bicubic_upsample(np.full((1, 5, 6), 0.2), 2)
    assert out.shape == (1, 10, 12)
    assert np.max(np.abs(out - 0.2)) < 1e-12


def test_sr_pair_shapes():
    pair = make_sr_pair(synthetic_image(48, 1), 2)
    assert pair.input.shape == (3, 24, 24) and pair.target.shape == (3, 48, 48)
    assert pair.meta == "scale=2"


# ---------------------------------------------------------------- patches

def test_full_size_patch_is_identity():
    pair = make_blur_pair(synthetic_image(16, 2))
    (p,) = sample_patches(pair, 16, 1, seed=0)
    assert np.array_equal(p.input, pair.input) and np.array_equal(p.target, pair.target)


def test_patches_deterministic():
    pair = make_blur_pair(synthetic_image(20, 2))
    a = sample_patches(pair, 8, 4, seed=9)
    b = sample_patches(pair, 8, 4, seed=9)
    assert [x.meta for x in a] == [x.meta for x in b]


def test_sr_patch_coordinates():
    pair = make_sr_pair(synthetic_image(96, 5), 2)
    for p in sample_patches(pair, 24, 5, seed=1):
        x, y, size = map(int, p.meta.split("crop=")[1].split(","))
        assert np.array_equal(p.input, pair.input[:, y : y + 24, x : x + 24])
        assert np.array_equal(p.target, pair.target[:, 2 * y : 2 * y + 48, 2 * x : 2 * x + 48])


def test_patch_too_large():
    with pytest.raises(ValueError, match="larger"):
        sample_patches(make_blur_pair(np.zeros((1, 8, 8))), 9, 1, 0)


# ---------------------------------------------------------------- datasets

def test_make_dataset_deterministic(tmp_path):
    m1 = make_dataset(tmp_path / "a", "deblur", 3, 16, seed=4)
    m2 = make_dataset(tmp_path / "b", "deblur", 3, 16, seed=4)
    for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert m1.read_text() == m2.read_text()


def test_dataset_matches_in_memory_pairs(tmp_path):
    mpath = make_dataset(tmp_path, "sr", 3, 16, seed=2)
    man = load_manifest(mpath)
    assert man.seed == 2 and len(man) == 3
    for disk, mem in zip(man.load_pairs(), synthetic_pairs("sr", 3, 16, seed=2)):
        assert np.array_equal(disk.input, mem.input)
        assert np.array_equal(disk.target, mem.target)


def test_manifest_round_trip(tmp_path):
    write_image(tmp_path / "i.pgm", np.zeros((1, 2, 2)))
    write_image(tmp_path / "t.pgm", np.ones((1, 2, 2)))
    write_manifest(tmp_path / "m.txt", Manifest([ManifestEntry("i.pgm", "t.pgm", "blur=box:3")], seed=11))
    assert (tmp_path / "m.txt").read_text() == "#seed\t11\ni.pgm\tt.pgm\tblur=box:3\n"
    man = load_manifest(tmp_path / "m.txt")
    (pair,) = man.load_pairs()
    assert isinstance(pair, DegradedPair) and pair.meta == "blur=box:3"


def test_manifest_missing_file_fails(tmp_path):
    mpath = make_dataset(tmp_path, "deblur", 2, 8, seed=0)
    (tmp_path / "00001_target.ppm").unlink()
    with pytest.raises(FileNotFoundError, match="00001_target"):
        load_manifest(mpath)


def test_synthetic_image_range_and_seed():
    a, b = synthetic_image(32, 1), synthetic_image(32, 1)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a, synthetic_image(32, 2))
    assert a.std() > 0.05
