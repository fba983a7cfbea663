import json
import os

import numpy as np
import pytest

from sedic.api.backends import CaptionResult, DetectionBox, ObjectDescription
from sedic.codecs.container import parse
from sedic.codecs.text_codec import text_decode
from sedic.errors import BudgetInfeasible, NonPositiveTarget
from sedic.machine_learning.mock_models import MockScene, create_mock_backends
from sedic.processing.encode_image import (
    EncodeOptions,
    RatePolicy,
    encode,
    filter_hallucinations,
    rate_control,
    run_batch_encoding,
    run_encoding,
    transmit_factor,
)
from sedic.utils.image_io import write_image

from conftest import gradient_image


# --- Rate control ---


@pytest.mark.parametrize(
    "target, expected",
    [
        (0.001, (0, 0, 20)),
        (0.0199, (0, 0, 20)),
        (0.02, (1, 20, 30)),
        (0.025, (1, 20, 30)),
        (0.035, (1, 20, 30)),
        (0.0351, (3, 30, 50)),
        (0.045, (3, 30, 50)),
        (1.0, (3, 30, 50)),
    ],
)
def test_rate_policy_rows(target, expected):
    policy = rate_control(target)
    assert (policy.J, policy.l_d, policy.l_all) == expected
    assert policy.l_n == 3


def test_rate_policy_is_monotone():
    policies = [rate_control(target) for target in np.linspace(0.001, 0.1, 200)]
    for low, high in zip(policies, policies[1:]):
        assert low.J <= high.J and low.l_d <= high.l_d and low.l_all <= high.l_all


@pytest.mark.parametrize("target", [0.0, -0.5, float("nan")])
def test_non_positive_target(target):
    with pytest.raises(NonPositiveTarget):
        rate_control(target)


def test_rate_policy_validation():
    with pytest.raises(ValueError):
        RatePolicy(J=-1, l_d=0, l_all=20, target_bpp=0.01)
    with pytest.raises(ValueError):
        RatePolicy(J=1, l_d=20, l_all=0, target_bpp=0.01)


def test_transmit_factor():
    assert transmit_factor(768, 512, 8) == 8
    assert transmit_factor(768, 512, 2) == 2
    assert transmit_factor(770, 512, 8) == 1


# --- Encoding at the documented targets ---


def test_single_object_at_low_rate(photo, mock_backends):
    stream, report = encode(photo, 0.025, mock_backends)
    assert report.policy.J == 1
    assert report.n_objects == 1
    assert report.encoded_objects == ["red house"]
    assert report.final_bpp <= 0.03
    assert 8 * len(stream) <= np.floor(0.025 * 768 * 512)


def test_three_objects_at_higher_rate(photo, mock_backends):
    stream, report = encode(photo, 0.045, mock_backends)
    container = parse(stream)
    assert len(container.objects) == 3
    assert report.encoded_objects == ["red house", "green tree", "yellow sun"]
    assert report.dropped_objects == ["red bicycle"]
    assert report.final_bpp <= 0.045
    for entry in container.objects:
        assert (entry.mask.mask_w, entry.mask.mask_h) == (96, 64)
        assert len(text_decode(entry.detail).split()) <= 30
    assert len(text_decode(container.overall_text).split()) <= 50


def test_no_objects_below_the_first_threshold(mock_backends):
    stream, report = encode(gradient_image(768, 512), 0.01, mock_backends)
    container = parse(stream)
    assert container.objects == ()
    assert container.reference is not None
    assert len(text_decode(container.overall_text).split()) <= 20
    assert report.final_bpp <= 0.01


def test_infeasible_budget_suggests_a_target(photo, mock_backends):
    with pytest.raises(BudgetInfeasible) as error:
        encode(photo, 0.0001, mock_backends)
    assert error.value.suggested_target_bpp > 0.0001
    assert error.value.minimum_bits > 0.0001 * 768 * 512


def test_bit_accounting_sums_to_stream(photo, mock_backends):
    stream, report = encode(photo, 0.045, mock_backends)
    components = (
        report.reference_bits + report.overall_text_bits + sum(report.object_text_bits) + sum(report.object_mask_bits)
    )
    assert components + report.overhead_bits == report.total_bits == 8 * len(stream)
    # header, five section headers, codec id and one text length per object
    assert report.overhead_bits == 8 * (15 + 5 * 5 + 1 + 4 * 3)
    assert report.to_dict()["n_objects"] == 3


def test_encoding_is_deterministic(photo, mock_backends):
    assert encode(photo, 0.045, mock_backends)[0] == encode(photo, 0.045, create_mock_backends())[0]


# --- Object selection ---


def test_object_names_stay_on_the_encoder_side(photo):
    scene = MockScene(
        caption=CaptionResult(
            objects=(ObjectDescription("zqxjv", "a plain blue box"),),
            overall="a blue box in a field",
        ),
        boxes={"zqxjv": (DetectionBox(0.25, 0.25, 0.75, 0.75, 0.9),)},
    )
    stream, report = encode(photo, 0.045, create_mock_backends(scene))
    assert report.encoded_objects == ["zqxjv"]
    assert b"zqxjv" not in stream
    assert text_decode(parse(stream).objects[0].detail) == b"a plain blue box"


def test_rejected_objects_are_dropped(photo):
    _, report = encode(photo, 0.045, create_mock_backends(reject={"red house"}))
    assert "red house" in report.dropped_objects
    assert report.encoded_objects == ["green tree", "yellow sun"]


def test_empty_masks_are_skipped(photo):
    _, report = encode(photo, 0.045, create_mock_backends(erosion=60))
    assert report.encoded_objects == ["red house"]
    assert report.skipped_objects == ["green tree", "yellow sun"]


def test_filter_hallucinations_threshold(photo, mock_backends):
    objects = [ObjectDescription("green tree", "tree"), ObjectDescription("red bicycle", "bike")]
    result = filter_hallucinations(objects, photo, mock_backends.detector, threshold=0.9)
    assert result.kept == []
    assert result.dropped == ["green tree", "red bicycle"]
    result = filter_hallucinations(objects, photo, mock_backends.detector, threshold=0.2)
    assert [box.confidence for box in result.boxes["green tree"]] == [0.84, 0.22]


# --- Ablations ---


def test_without_reference(photo, mock_backends):
    stream, report = encode(photo, 0.045, mock_backends, EncodeOptions(include_reference=False))
    container = parse(stream)
    assert container.reference is None
    assert report.reference_bits == 0 and report.quality is None


def test_without_overall_text(photo, mock_backends):
    stream, report = encode(photo, 0.045, mock_backends, EncodeOptions(include_overall_text=False))
    assert parse(stream).overall_text is None
    assert report.overall_text_bits == 0


def test_policy_overrides_and_full_resolution_masks(photo, mock_backends):
    stream, report = encode(photo, 0.2, mock_backends, EncodeOptions(J=2, mask_factor=1))
    container = parse(stream)
    assert report.policy.J == 2
    assert len(container.objects) == 2
    assert (container.objects[0].mask.mask_w, container.objects[0].mask.mask_h) == (768, 512)


def test_more_budget_buys_a_finer_reference(photo, mock_backends):
    options = EncodeOptions(J=0, include_overall_text=False)
    _, coarse = encode(photo, 0.02, mock_backends, options)
    _, fine = encode(photo, 0.2, mock_backends, options)
    assert fine.quality <= coarse.quality
    assert fine.reference_bits >= coarse.reference_bits


def test_invalid_options():
    with pytest.raises(ValueError):
        EncodeOptions(mask_factor=3)
    with pytest.raises(ValueError):
        EncodeOptions(detection_threshold=1.5)


# --- Files ---


def test_run_encoding_writes_outputs(tmp_path, mock_backends):
    source = tmp_path / "input.png"
    write_image(gradient_image(128, 96), str(source))
    output = tmp_path / "out" / "input.sdc"

    report = run_encoding(str(source), str(output), 2.0, mock_backends, report=True)

    assert output.is_file()
    assert os.path.getsize(output) * 8 == report.total_bits
    with open(tmp_path / "out" / "input.json", encoding="utf-8") as handle:
        assert json.load(handle)["total_bits"] == report.total_bits
    assert (tmp_path / "out" / "reports" / "encode_report.html").is_file()
    assert any((tmp_path / "out" / "logs").iterdir())


def test_run_encoding_missing_input(tmp_path):
    with pytest.raises(FileNotFoundError):
        run_encoding(str(tmp_path / "missing.png"), str(tmp_path / "out.sdc"), 0.05)


def test_batch_encoding_reports_per_file(tmp_path, mock_backends):
    source = tmp_path / "images"
    write_image(gradient_image(128, 96), str(source / "a.png"))
    write_image(gradient_image(96, 64), str(source / "b.ppm"))
    (source / "notes.txt").write_text("not an image")

    results = run_batch_encoding(str(source), str(tmp_path / "out"), 2.0, mock_backends, max_workers=2)
    assert sorted(results) == ["a.png", "b.ppm"]
    assert all(not isinstance(result, Exception) for result in results.values())
    assert (tmp_path / "out" / "a.sdc").is_file() and (tmp_path / "out" / "b.sdc").is_file()

    failing = run_batch_encoding(str(source), str(tmp_path / "tiny"), 0.0001, mock_backends)
    assert all(isinstance(result, BudgetInfeasible) for result in failing.values())
