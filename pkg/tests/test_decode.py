import json

import numpy as np
import pytest

from sedic.codecs.container import ObjectEntry, SemanticContainer, serialize
from sedic.codecs.mask_codec import SemanticMask, mask_decode, mask_encode
from sedic.codecs.ref_codec import ref_decode, ref_encode
from sedic.codecs.text_codec import text_encode
from sedic.errors import CorruptPayload, EmptyContainer, MaskResolutionError
from sedic.machine_learning.mock_models import MockDenoiser
from sedic.processing.decode_image import (
    DecodeConfig,
    DecodeState,
    decode,
    initial_latent,
    mask_to_latent,
    run_decoding,
    run_final_stage,
)
from sedic.utils.image_io import image_to_png_bytes

from conftest import gradient_image, small_container


class CountingDenoiser(MockDenoiser):
    def __init__(self):
        super().__init__()
        self.steps = []

    def denoise_step(self, z, t, condition, embedding):
        self.steps.append(t)
        return super().denoise_step(z, t, condition, embedding)


def noised_reference_trajectory(container: SemanticContainer, config: DecodeConfig) -> list[np.ndarray]:
    denoiser = MockDenoiser()
    condition = denoiser.encode_condition(ref_decode(container.reference))
    return [denoiser.noised_reference(condition, t, config.seed) for t in range(config.T + 1)]


# --- Stages ---


def test_one_stage_per_object_plus_final():
    _, trace = decode(small_container(n_objects=2), DecodeConfig(T=6))
    assert trace.n_stages == 3
    assert trace.stage_kinds == ["object", "object", "overall"]
    assert all(image.width == 64 and image.height == 64 for image in trace.stage_images)


def test_guidance_runs_above_the_threshold_only():
    config = DecodeConfig(T=8, t_threshold=4)
    _, trace = decode(small_container(n_objects=2), config)
    assert trace.guided_steps == [4, 4]
    assert sorted({row["t"] for row in trace.energies}) == [5, 6, 7, 8]
    assert trace.energy_frame().groupby("stage").size().tolist() == [4, 4]


def test_no_objects_means_no_guidance():
    image, trace = decode(small_container(n_objects=0), DecodeConfig(T=5))
    assert trace.n_stages == 1
    assert trace.energies == [] and trace.guided_steps == []
    assert (image.width, image.height) == (64, 64)


def test_single_step_decoding():
    denoiser = CountingDenoiser()
    _, trace = decode(small_container(n_objects=1), DecodeConfig(T=1), denoiser)
    assert denoiser.steps == [1, 1]
    assert trace.guided_steps == [1]


# --- Blending ---


def test_outside_the_mask_follows_the_previous_trajectory():
    container = small_container(n_objects=2)
    config = DecodeConfig(T=6, t_threshold=2, record_trajectories=True)
    _, trace = decode(container, config)
    previous = noised_reference_trajectory(container, config)

    for stage, entry in enumerate(container.objects):
        mask = mask_decode(entry.mask).bits
        trajectory = trace.trajectories[stage]
        for t in range(config.T + 1):
            assert np.array_equal(trajectory[t][~mask], previous[t][~mask])
        previous = trajectory


def test_full_mask_ignores_the_previous_trajectory():
    container = SemanticContainer(
        width=64, height=64, reference=ref_encode(gradient_image(64, 64), 8),
        objects=(ObjectEntry(detail=text_encode("a lake"), mask=mask_encode(SemanticMask.ones(8, 8))),),
    )
    config = DecodeConfig(T=4, record_trajectories=True)
    _, trace = decode(container, config)
    previous = noised_reference_trajectory(container, config)
    assert not np.allclose(trace.trajectories[0][0], previous[0])


def test_empty_mask_copies_the_previous_trajectory():
    container = SemanticContainer(
        width=64, height=64, reference=ref_encode(gradient_image(64, 64), 8),
        objects=(ObjectEntry(detail=text_encode("a lake"), mask=mask_encode(SemanticMask.zeros(8, 8))),),
    )
    config = DecodeConfig(T=4, record_trajectories=True)
    _, trace = decode(container, config)
    previous = noised_reference_trajectory(container, config)
    for t in range(config.T + 1):
        assert np.array_equal(trace.trajectories[0][t], previous[t])


# --- Final stage ---


def test_final_stage_contracts_toward_the_text_target():
    denoiser = MockDenoiser()
    rng = np.random.default_rng(5)
    condition = rng.random((8, 8, 4))
    z0 = initial_latent(condition.shape, seed=3, stage=0)
    state = DecodeState(stage=0, width=64, height=64, latent=z0, previous_trajectory=[], condition=condition)
    config = DecodeConfig(T=10)

    z = run_final_stage(state, "a calm lake", config, denoiser)

    embedding = denoiser.text_embed("a calm lake")
    target = condition + denoiser.text_field(embedding, condition.shape)
    assert np.allclose(z, target + (z0 - target) / (config.T + 1))


def test_empty_overall_text_decodes():
    container = SemanticContainer(width=32, height=24, overall_text=text_encode(""))
    image, trace = decode(container, DecodeConfig(T=3))
    assert (image.width, image.height) == (32, 24)
    assert trace.stage_kinds == ["overall"]


def test_decoding_is_deterministic():
    container = small_container(n_objects=2)
    first, _ = decode(container, DecodeConfig(T=6, seed=11))
    second, _ = decode(container, DecodeConfig(T=6, seed=11))
    assert image_to_png_bytes(first) == image_to_png_bytes(second)


def test_guidance_lowers_the_energy():
    container = small_container(n_objects=1)
    first, last = [], []
    for seed in range(20):
        _, trace = decode(container, DecodeConfig(T=8, t_threshold=4, seed=seed))
        energies = {row["t"]: row["energy"] for row in trace.energies}
        first.append(energies[8])
        last.append(energies[5])
    assert np.median(last) < np.median(first)


# --- Masks and errors ---


def test_mask_to_latent():
    latent = SemanticMask(8, 8, np.eye(8, dtype=bool))
    assert mask_to_latent(latent, 64, 64, (8, 8, 4)) is latent

    full = SemanticMask(64, 64, np.kron(np.eye(8, dtype=bool), np.ones((8, 8), dtype=bool)))
    assert mask_to_latent(full, 64, 64, (8, 8, 4)) == latent

    bits = np.zeros((45, 70), dtype=bool)
    bits[:8, :8] = True
    padded = mask_to_latent(SemanticMask(70, 45, bits), 70, 45, (6, 9, 4))
    assert (padded.width, padded.height) == (9, 6)
    assert padded.bits[0, 0] and padded.area == 1

    with pytest.raises(MaskResolutionError):
        mask_to_latent(SemanticMask.ones(5, 5), 64, 64, (8, 8, 4))


def test_empty_container():
    with pytest.raises(EmptyContainer):
        decode(SemanticContainer(width=64, height=64))


def test_reference_dimension_mismatch():
    container = SemanticContainer(width=64, height=64, reference=ref_encode(gradient_image(32, 32), 8))
    with pytest.raises(CorruptPayload):
        decode(container, DecodeConfig(T=2))


def test_decode_config_validation():
    assert DecodeConfig().threshold == 25
    with pytest.raises(ValueError):
        DecodeConfig(T=0)
    with pytest.raises(ValueError):
        DecodeConfig(T=4, t_threshold=5)
    with pytest.raises(ValueError):
        DecodeConfig(seed=-1)


# --- Files ---


def test_run_decoding_writes_trace_and_report(tmp_path):
    source = tmp_path / "image.sdc"
    source.write_bytes(serialize(small_container(n_objects=2)))
    output = tmp_path / "out" / "image.png"

    trace = run_decoding(str(source), str(output), DecodeConfig(T=4), trace_folder=str(tmp_path / "trace"), report=True)

    assert output.is_file()
    assert trace.n_stages == 3
    assert [p.name for p in sorted((tmp_path / "trace").glob("stage_*.png"))] == [
        "stage_00.png", "stage_01.png", "stage_02.png"
    ]
    with open(tmp_path / "trace" / "trace.json", encoding="utf-8") as handle:
        assert json.load(handle)["guided_steps"] == [2, 2]
    assert (tmp_path / "out" / "reports" / "decode_report.html").is_file()


def test_run_decoding_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        run_decoding(str(tmp_path / "missing.sdc"), str(tmp_path / "out.png"))
