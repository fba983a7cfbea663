import numpy as np
import pytest

from sedic.codecs.mask_codec import SemanticMask
from sedic.errors import DimMismatch, ZeroAttentionMass
from sedic.machine_learning.guidance import (
    GuidanceConfig,
    attention_energy,
    attention_energy_grad,
    blend_latents,
    central_differences,
    finite_difference_check,
    guided_update,
    relative_error,
)
from sedic.machine_learning.mock_models import MockDenoiser


def test_energy_values():
    attention = np.array([[0.2], [0.2], [0.6]])
    assert attention_energy(attention, np.array([True, True, False])) == pytest.approx(0.36)
    assert attention_energy(attention, np.array([True, True, True])) == 0.0
    assert attention_energy(attention, np.array([False, False, False])) == 1.0


def test_energy_sums_selected_tokens():
    attention = np.array([[0.5, 0.1], [0.5, 0.9]])
    mask = np.array([True, False])
    single = [attention_energy(attention, mask, k) for k in (0, 1)]
    assert attention_energy(attention, mask, None) == pytest.approx(sum(single))
    assert attention_energy(attention, mask, [0, 1]) == pytest.approx(sum(single))


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n_locations, n_tokens = int(rng.integers(2, 40)), int(rng.integers(1, 6))
        mask = rng.random(n_locations) < rng.uniform(0.2, 0.8)
        mask[0], mask[-1] = True, False
        k = int(rng.integers(n_tokens))
        attention = rng.random((n_locations, n_tokens)) + 0.05
        error = finite_difference_check(
            lambda a: attention_energy(a, mask, k), lambda a: attention_energy_grad(a, mask, k), attention
        )
        assert error <= 1e-5


def test_gradient_is_zero_for_unselected_tokens():
    rng = np.random.default_rng(1)
    attention = rng.random((10, 3)) + 0.1
    grad = attention_energy_grad(attention, rng.random(10) < 0.5, 1)
    assert np.all(grad[:, [0, 2]] == 0.0)


def test_latent_gradient_through_mock_attention():
    rng = np.random.default_rng(2)
    denoiser = MockDenoiser()
    embedding = denoiser.text_embed("a bright yellow sun")
    for _ in range(20):
        z = rng.standard_normal((4, 5, denoiser.channels))
        mask = rng.random((4, 5)) < 0.4
        mask[0, 0], mask[-1, -1] = True, False
        k = int(rng.integers(embedding.n_tokens))

        def energy(latent):
            return attention_energy(denoiser.attention(latent, embedding).attention, mask, k)

        def gradient(latent):
            result = denoiser.attention(latent, embedding)
            return result.backward(attention_energy_grad(result.attention, mask, k))

        assert finite_difference_check(energy, gradient, z) <= 1e-5


@pytest.mark.parametrize("eta", [1e-3, 1e-2])
def test_guided_update_descends(eta):
    denoiser = MockDenoiser()
    embedding = denoiser.text_embed("tree")
    mask = SemanticMask(6, 6, np.arange(36).reshape(6, 6) < 12)
    for seed in range(30):
        z = np.random.default_rng(seed).standard_normal((6, 6, denoiser.channels))
        result = denoiser.attention(z, embedding)
        energy = attention_energy(result.attention, mask)
        for _ in range(5):
            z = guided_update(z, result.backward(attention_energy_grad(result.attention, mask)), eta)
            result = denoiser.attention(z, embedding)
            next_energy = attention_energy(result.attention, mask)
            assert next_energy < energy
            energy = next_energy


def test_dimension_errors():
    with pytest.raises(DimMismatch):
        attention_energy(np.ones((4, 1)), np.ones(5, dtype=bool))
    with pytest.raises(DimMismatch):
        attention_energy(np.ones((4, 1)), np.ones(4, dtype=bool), k=3)
    with pytest.raises(DimMismatch):
        guided_update(np.zeros((2, 2, 4)), np.zeros((2, 2, 3)), 1.0)
    with pytest.raises(DimMismatch):
        blend_latents(np.zeros((2, 2, 4)), np.zeros((2, 2, 4)), np.ones((3, 2), dtype=bool))


def test_zero_attention_mass():
    with pytest.raises(ZeroAttentionMass):
        attention_energy(np.zeros((4, 2)), np.array([True, False, False, False]))


def test_blending_is_exact():
    rng = np.random.default_rng(4)
    z_cur, z_prev = rng.standard_normal((2, 5, 7, 4))
    mask = rng.random((5, 7)) < 0.5
    blended = blend_latents(z_cur, z_prev, SemanticMask(7, 5, mask))
    assert np.array_equal(blended[mask], z_cur[mask])
    assert np.array_equal(blended[~mask], z_prev[~mask])
    assert np.array_equal(blend_latents(z_cur, z_prev, np.ones((5, 7), dtype=bool)), z_cur)
    assert np.array_equal(blend_latents(z_cur, z_prev, np.zeros((5, 7), dtype=bool)), z_prev)


def test_central_differences_of_a_quadratic():
    x = np.array([1.0, -2.0, 0.5])
    assert np.allclose(central_differences(lambda v: float(np.sum(v ** 2)), x), 2 * x, atol=1e-6)
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0


def test_guidance_config_validation():
    with pytest.raises(ValueError):
        GuidanceConfig(eta=0.0)
    with pytest.raises(ValueError):
        GuidanceConfig(t_threshold=-1)
