import numpy as np
import pytest

from sedic.codecs.container import RefPayload
from sedic.codecs.ref_codec import (
    Q_MAX,
    Q_MIN,
    REFERENCE_CODECS,
    TINY_CODEC_ID,
    ZIGZAG,
    fit_quality,
    payload_bits,
    quality_ladder,
    ref_decode,
    ref_encode,
    run_level_decode,
    run_level_encode,
)
from sedic.errors import BudgetInfeasible, CorruptPayload, ImageTooSmall, UnknownCodec
from sedic.utils.image_io import Image, psnr

from conftest import gradient_image


def test_zigzag_starts_like_jpeg():
    assert ZIGZAG[:6].tolist() == [0, 1, 8, 16, 9, 2]
    assert sorted(ZIGZAG.tolist()) == list(range(64))


def test_decode_restores_dimensions():
    image = gradient_image(70, 45)
    decoded = ref_decode(ref_encode(image, 12))
    assert (decoded.width, decoded.height) == (70, 45)


def test_coarser_quality_is_smaller_and_worse(photo):
    fine, coarse = ref_encode(photo, Q_MIN), ref_encode(photo, Q_MAX)
    assert len(coarse.data) < len(fine.data)
    assert psnr(photo, ref_decode(fine)) > psnr(photo, ref_decode(coarse))


def test_encoding_is_deterministic(small_image):
    assert ref_encode(small_image, 9) == ref_encode(small_image, 9)


def test_image_too_small():
    with pytest.raises(ImageTooSmall):
        ref_encode(Image.solid(8, 8), 10)


def test_unknown_codec(small_image):
    with pytest.raises(UnknownCodec):
        ref_decode(RefPayload(codec_id=1, data=b""))
    with pytest.raises(UnknownCodec):
        ref_encode(small_image, 5, codec_id=7)


def test_corrupt_payloads(small_image):
    data = ref_encode(small_image, 10).data
    for corrupt in (data[:5], data[:-1], data + b"\x00", b"\x00" + data[1:], b"\x05" + bytes(8)):
        with pytest.raises(CorruptPayload):
            ref_decode(RefPayload(codec_id=0, data=corrupt))


def test_run_level_round_trip():
    rng = np.random.default_rng(2)
    for _ in range(200):
        sequence = np.where(rng.random(600) < 0.1, rng.integers(-300, 300, 600), 0)
        assert np.array_equal(run_level_decode(run_level_encode(sequence), 600), sequence)


def test_run_level_overrun():
    with pytest.raises(CorruptPayload):
        run_level_decode(bytes([10, 0]), 5)


def test_fit_quality_post_condition(photo):
    budget = payload_bits(photo, 16)
    q = fit_quality(photo, budget)
    assert payload_bits(photo, q) <= budget
    assert q == Q_MIN or payload_bits(photo, q - 1) > budget


def test_fit_quality_generous_budget(small_image):
    assert fit_quality(small_image, 10 ** 9) == Q_MIN


def test_fit_quality_infeasible(small_image):
    minimum = payload_bits(small_image, Q_MAX)
    with pytest.raises(BudgetInfeasible) as error:
        fit_quality(small_image, minimum - 1)
    assert error.value.minimum_bits == minimum


CONSTANT_COLORS = [(0.5, 0.5, 0.5), (0.9, 0.1, 0.1), (0.1, 0.8, 0.3), (0.2, 0.2, 0.9), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0)]


def _ladder_bits(image: Image) -> list[int]:
    return [8 * len(payload.data) for payload in quality_ladder(image)]


def test_mid_gray_coarsest_is_tiny():
    assert len(ref_encode(Image.solid(768, 512), Q_MAX).data) <= 200


@pytest.mark.parametrize("rgb", CONSTANT_COLORS)
def test_constant_color_psnr_at_coarsest(rgb):
    image = Image.solid(64, 64, rgb)
    assert psnr(image, ref_decode(ref_encode(image, Q_MAX))) >= 18.0


@pytest.mark.parametrize("rgb", CONSTANT_COLORS)
def test_constant_color_max_error_at_fine_quality(rgb):
    image = Image.solid(64, 64, rgb)
    decoded = ref_decode(ref_encode(image, 4))
    assert np.abs(decoded.samples - image.samples).max() <= 0.02


def test_coarsest_photo_fits_lowest_rate(photo):
    assert payload_bits(photo, Q_MAX) / (photo.width * photo.height) <= 0.025


@pytest.mark.parametrize("size", [(64, 64), (200, 120), (768, 512)])
def test_payload_size_never_grows_with_quality(size, photo):
    image = photo if size == (768, 512) else gradient_image(*size)
    bits = _ladder_bits(image)
    assert len(bits) == Q_MAX
    assert all(coarser <= finer for finer, coarser in zip(bits, bits[1:]))


def test_ladder_keeps_smallest_finer_payload():
    image = gradient_image(200, 120)
    raw = [len(REFERENCE_CODECS[TINY_CODEC_ID].encode(image, q)) for q in range(Q_MIN, Q_MAX + 1)]
    ladder = quality_ladder(image)
    for q, payload in enumerate(ladder, start=Q_MIN):
        assert len(payload.data) == min(raw[:q])
    for q in (Q_MIN, 17, 22, Q_MAX):
        assert ref_encode(image, q) == ladder[q - Q_MIN]


@pytest.mark.parametrize("size", [(200, 120), pytest.param((768, 512), marks=pytest.mark.slow)])
def test_fit_quality_matches_exhaustive_sweep(size, photo):
    image = photo if size == (768, 512) else gradient_image(*size)
    bits = _ladder_bits(image)
    budgets = {776, 784, 928, 936}
    for value in set(bits):
        budgets |= {value - 8, value, value + 8}
    for budget in sorted(budgets):
        feasible = [q for q in range(Q_MIN, Q_MAX + 1) if bits[q - Q_MIN] <= budget]
        if not feasible:
            with pytest.raises(BudgetInfeasible):
                fit_quality(image, budget)
            continue
        assert fit_quality(image, budget) == min(feasible)
