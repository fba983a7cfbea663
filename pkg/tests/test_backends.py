import warnings

import pytest

from sedic.api.backends import (
    BackendConfig,
    CaptionBudgets,
    CaptionResult,
    DetectionBox,
    ObjectDescription,
    create_backends,
    enforce_caption_budgets,
    truncate_words,
)
from sedic.errors import BudgetViolationCorrected, EmptyMask, MalformedResponse
from sedic.machine_learning.mock_models import DEFAULT_SCENE, MockDetector, MockSegmenter, synthetic_photo


def test_truncate_words():
    assert truncate_words("one two three four", 2) == ("one two", True)
    assert truncate_words("  one   two ", 5) == ("one two", False)
    assert truncate_words("anything", 0) == ("", True)


def test_budget_enforcement_truncates_and_warns():
    result = CaptionResult(
        objects=(
            ObjectDescription("very big red house", "a house " * 10),
            ObjectDescription("tree", "a tree"),
            ObjectDescription("sun", "a sun"),
        ),
        overall="word " * 60,
    )
    budgets = CaptionBudgets(max_objects=2, l_d=5, l_all=50)
    with pytest.warns(BudgetViolationCorrected):
        capped = enforce_caption_budgets(result, budgets)
    assert [o.name for o in capped.objects] == ["very big red", "tree"]
    assert len(capped.objects[0].detail.split()) == 5
    assert len(capped.overall.split()) == 50


def test_budget_enforcement_leaves_compliant_answers_alone():
    result = CaptionResult(objects=(ObjectDescription("tree", "a green tree"),), overall="a park")
    with warnings.catch_warnings():
        warnings.simplefilter("error", BudgetViolationCorrected)
        assert enforce_caption_budgets(result, CaptionBudgets(max_objects=3, l_d=20, l_all=30)) == result


def test_empty_overall_is_malformed():
    with pytest.raises(MalformedResponse):
        enforce_caption_budgets(CaptionResult(objects=(), overall="  "), CaptionBudgets(1, 10, 10))


def test_detection_box_validation():
    with pytest.raises(ValueError):
        DetectionBox(0.5, 0.1, 0.4, 0.9)
    with pytest.raises(ValueError):
        DetectionBox(0.0, 0.0, 1.2, 1.0)


def test_backend_config_validation():
    with pytest.raises(ValueError):
        BackendConfig(timeout=0)
    with pytest.raises(ValueError):
        BackendConfig(retries=-1)


def test_create_backends_modes():
    assert create_backends("mock").mode == "mock"
    with pytest.raises(ValueError):
        create_backends("http", {"captioner": BackendConfig(endpoint="http://localhost:1")})
    with pytest.raises(ValueError):
        create_backends("grpc")
    configs = {name: BackendConfig(endpoint=f"http://localhost/{name}") for name in ("captioner", "detector", "segmenter", "denoiser")}
    assert create_backends("http", configs).mode == "http"


def test_mock_detector_policies():
    image = synthetic_photo(96, 64)
    detector = MockDetector(DEFAULT_SCENE)
    boxes = detector.detect(image, "green tree")
    assert [box.confidence for box in boxes] == [0.84, 0.22]
    assert detector.detect(image, "red bicycle") == []
    assert MockDetector(policy="always").detect(image, "unicorn")[0].confidence == 1.0
    assert MockDetector(policy="always", reject={"unicorn"}).detect(image, "unicorn") == []
    with pytest.raises(ValueError):
        detector.detect(image, "")


def test_mock_segmenter_empty_mask():
    image = synthetic_photo(96, 64)
    mask = MockSegmenter().segment(image, DetectionBox(0.25, 0.25, 0.5, 0.5))
    assert mask.area == 24 * 16
    with pytest.raises(EmptyMask):
        MockSegmenter(erosion=20).segment(image, DetectionBox(0.25, 0.25, 0.5, 0.5))
