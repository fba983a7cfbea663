"""
Deterministic offline stand-ins for the captioner, detector, segmenter and denoiser.

The mock denoiser is a contractive map toward its conditioning target with a
differentiable softmax attention, so guidance and blending can be checked exactly.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..api.backends import (
    AttentionResult,
    Backends,
    CaptionBudgets,
    CaptionResult,
    DetectionBox,
    ObjectDescription,
    TextEmbedding,
    truncate_words,
)
from ..codecs.mask_codec import SemanticMask, box_mask
from ..errors import EmptyMask
from ..utils.image_io import Image


LATENT_FACTOR = 8
LATENT_CHANNELS = 4


# --- Fixture scene ---


@dataclass(frozen=True)
class MockScene:
    """Captions and per-name detections served by the mock backends."""
    caption: CaptionResult
    boxes: dict[str, tuple[DetectionBox, ...]] = field(default_factory=dict)


DEFAULT_SCENE = MockScene(
    caption=CaptionResult(
        objects=(
            ObjectDescription(
                name="red house",
                detail="a small red brick house with a flat roof standing on green grass in the left half of the picture",
            ),
            ObjectDescription(
                name="red bicycle",
                detail="a red bicycle leaning against a white fence next to the path",
            ),
            ObjectDescription(
                name="green tree",
                detail="a tall dark green tree with a dense oval crown standing right of the house",
            ),
            ObjectDescription(
                name="yellow sun",
                detail="a bright yellow round sun high in the blue sky in the upper right corner",
            ),
        ),
        overall=(
            "a quiet countryside scene on a clear day with a red house and a tall green tree standing on a "
            "flat green meadow under a wide blue sky that gets lighter towards the horizon while a bright "
            "yellow sun shines in the upper right corner"
        ),
    ),
    boxes={
        "red house": (DetectionBox(0.15, 0.40, 0.40, 0.80, 0.91),),
        "green tree": (DetectionBox(0.55, 0.37, 0.69, 0.73, 0.84), DetectionBox(0.50, 0.30, 0.75, 0.80, 0.22)),
        "yellow sun": (DetectionBox(0.74, 0.11, 0.86, 0.29, 0.77),),
    },
)


def synthetic_photo(width: int = 768, height: int = 512) -> Image:
    """
    Renders the DEFAULT_SCENE: sky gradient, meadow, house, tree and sun.

    Parameters:
        width (int, optional): Image width in pixels (default: 768).
        height (int, optional): Image height in pixels (default: 512).

    Returns:
        Image: Deterministic smooth test picture.
    """
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    u, v = (x + 0.5) / width, (y + 0.5) / height
    horizon = 0.62

    sky_top, sky_bottom = np.array([0.35, 0.55, 0.85]), np.array([0.75, 0.85, 0.95])
    ground_top, ground_bottom = np.array([0.25, 0.50, 0.20]), np.array([0.15, 0.35, 0.12])
    sky_mix = np.clip(v / horizon, 0.0, 1.0)[..., None]
    ground_mix = np.clip((v - horizon) / (1.0 - horizon), 0.0, 1.0)[..., None]
    samples = np.where(
        (v < horizon)[..., None],
        sky_top + (sky_bottom - sky_top) * sky_mix,
        ground_top + (ground_bottom - ground_top) * ground_mix,
    )

    sun = (x - 0.80 * width) ** 2 + (y - 0.20 * height) ** 2 <= (0.09 * height) ** 2
    house = (u >= 0.15) & (u < 0.40) & (v >= 0.40) & (v < 0.80)
    tree = ((u - 0.62) / 0.07) ** 2 + ((v - 0.55) / 0.18) ** 2 <= 1.0
    samples[sun] = (1.00, 0.85, 0.30)
    samples[house] = (0.70, 0.25, 0.20)
    samples[tree] = (0.10, 0.40, 0.15)
    return Image(samples)


# --- Captioner / detector / segmenter ---


class MockCaptioner:
    """Fixture-driven captioner that answers within the requested budgets."""

    def __init__(self, scene: MockScene = DEFAULT_SCENE):
        self.scene = scene

    def caption(self, image: Image, budgets: CaptionBudgets) -> CaptionResult:
        objects = tuple(
            ObjectDescription(
                name=truncate_words(description.name, budgets.l_n)[0],
                detail=truncate_words(description.detail, budgets.l_d)[0],
            )
            for description in self.scene.caption.objects[:budgets.max_objects]
        )
        return CaptionResult(objects=objects, overall=truncate_words(self.scene.caption.overall, budgets.l_all)[0])


class MockDetector:
    """
    Detector policies: 'fixture' answers with the scene boxes (unknown names are not
    found), 'always' answers one full-image box at confidence 1.0. Rejected names
    are never found.
    """

    def __init__(self, scene: MockScene = DEFAULT_SCENE, policy: str = "fixture", reject=()):
        if policy not in ("fixture", "always"):
            raise ValueError(f"unknown mock detector policy '{policy}'")
        self.scene = scene
        self.policy = policy
        self.reject = frozenset(reject)

    def detect(self, image: Image, name: str) -> list[DetectionBox]:
        if not name:
            raise ValueError("detection query must be a non-empty name")
        if name in self.reject:
            return []
        if self.policy == "always":
            return [DetectionBox(0.0, 0.0, 1.0, 1.0, 1.0)]
        return sorted(self.scene.boxes.get(name, ()), key=lambda box: box.confidence, reverse=True)


class MockSegmenter:
    """Segments a box as its filled rectangle, eroded by `erosion` pixels on every side."""

    def __init__(self, erosion: int = 0):
        self.erosion = erosion

    def segment(self, image: Image, box: DetectionBox) -> SemanticMask:
        mask = box_mask(image.width, image.height, box)
        if self.erosion:
            rows, cols = np.nonzero(mask.bits)
            bits = np.zeros_like(mask.bits)
            if rows.size:
                e = self.erosion
                bits[rows.min() + e:rows.max() + 1 - e, cols.min() + e:cols.max() + 1 - e] = True
            mask = SemanticMask(image.width, image.height, bits)
        if mask.area == 0:
            raise EmptyMask(f"box {box} yields an empty mask on a {image.width}x{image.height} image")
        return mask


# --- Denoiser ---


def _hash_seed(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")


class MockDenoiser:
    """
    Contractive mock of the VAE + controllable denoiser.

        encode_condition: 8x average pool into RGB + luma channels
        attention:        A = softmax over locations of Z W^T / sqrt(C)
        denoise_step:     z' = (1 - g) z + g (condition + psi(text)), g = 1 / (t + 1)
        noised_reference: sqrt(a) condition + sqrt(1 - a) eps, a = 1 / (t + 1)
    """

    def __init__(self, channels: int = LATENT_CHANNELS, factor: int = LATENT_FACTOR):
        self.channels = channels
        self.factor = factor

    def latent_shape(self, width: int, height: int) -> tuple[int, int, int]:
        return (-(-height // self.factor), -(-width // self.factor), self.channels)

    def encode_condition(self, image: Image) -> np.ndarray:
        f = self.factor
        samples = image.samples
        h, w = samples.shape[:2]
        samples = np.pad(samples, ((0, -h % f), (0, -w % f), (0, 0)), mode="edge")
        pooled = samples.reshape(samples.shape[0] // f, f, samples.shape[1] // f, f, 3).mean(axis=(1, 3))
        luma = pooled @ np.array([0.299, 0.587, 0.114])
        channels = [pooled, luma[..., None]]
        if self.channels > 4:
            channels.append(np.zeros(pooled.shape[:2] + (self.channels - 4,)))
        return np.concatenate(channels, axis=-1)[..., :self.channels]

    def text_embed(self, text: str) -> TextEmbedding:
        tokens = text.split() or [""]
        vectors = np.stack([np.random.default_rng(_hash_seed(token)).standard_normal(self.channels) for token in tokens])
        return TextEmbedding(text=text, vectors=vectors, key=_hash_seed(text))

    def attention(self, z: np.ndarray, embedding: TextEmbedding) -> AttentionResult:
        scale = np.sqrt(self.channels)
        flat = z.reshape(-1, self.channels)
        logits = flat @ embedding.vectors.T / scale
        weights = np.exp(logits - logits.max(axis=0, keepdims=True))
        attention = weights / weights.sum(axis=0, keepdims=True)

        def backward(grad_attention: np.ndarray) -> np.ndarray:
            grad_logits = attention * (grad_attention - np.sum(grad_attention * attention, axis=0, keepdims=True))
            return (grad_logits @ embedding.vectors / scale).reshape(z.shape)

        return AttentionResult(attention=attention, backward=backward)

    def text_field(self, embedding: TextEmbedding, shape: tuple[int, ...]) -> np.ndarray:
        """Seeded unit-norm perturbation field psi(text)."""
        psi = np.random.default_rng(embedding.key).standard_normal(shape)
        return psi / np.linalg.norm(psi)

    def denoise_step(self, z: np.ndarray, t: int, condition: np.ndarray, embedding: TextEmbedding) -> np.ndarray:
        gamma = 1.0 / (t + 1)
        target = condition + self.text_field(embedding, z.shape)
        return (1.0 - gamma) * z + gamma * target

    def decode(self, z: np.ndarray, width: int, height: int) -> Image:
        rgb = np.repeat(np.repeat(z[..., :3], self.factor, axis=0), self.factor, axis=1)
        return Image(np.clip(rgb[:height, :width], 0.0, 1.0))

    def noised_reference(self, condition: np.ndarray, t: int, seed: int) -> np.ndarray:
        alpha = 1.0 / (t + 1)
        noise = np.random.default_rng([seed, 2, t]).standard_normal(condition.shape)
        return np.sqrt(alpha) * condition + np.sqrt(1.0 - alpha) * noise


def create_mock_backends(
    scene: MockScene = DEFAULT_SCENE, policy: str = "fixture", reject=(), erosion: int = 0
) -> Backends:
    """Deterministic offline backends sharing one fixture scene."""
    return Backends(
        captioner=MockCaptioner(scene),
        detector=MockDetector(scene, policy=policy, reject=reject),
        segmenter=MockSegmenter(erosion=erosion),
        denoiser=MockDenoiser(),
        mode="mock",
    )
