import numpy as np
import pytest

from sedic.api.backends import create_backends
from sedic.codecs.container import ObjectEntry, SemanticContainer
from sedic.codecs.mask_codec import SemanticMask, mask_encode
from sedic.codecs.ref_codec import ref_encode
from sedic.codecs.text_codec import text_encode
from sedic.machine_learning.mock_models import synthetic_photo
from sedic.utils.image_io import Image


def gradient_image(width: int, height: int) -> Image:
    y, x = np.mgrid[0:height, 0:width]
    u, v = x / max(width - 1, 1), y / max(height - 1, 1)
    return Image(np.stack([0.2 + 0.6 * u, 0.3 + 0.4 * v, 0.5 + 0.3 * u * v], axis=-1))


def latent_box(width: int, height: int, x0: int, y0: int, x1: int, y1: int) -> SemanticMask:
    bits = np.zeros((height, width), dtype=bool)
    bits[y0:y1, x0:x1] = True
    return SemanticMask(width, height, bits)


def small_container(n_objects: int = 2, reference: bool = True, overall: str | None = "a calm lake under a grey sky") -> SemanticContainer:
    """64x64 container whose masks sit on the 8x8 latent grid."""
    image = gradient_image(64, 64)
    boxes = [(0, 0, 5, 4), (3, 3, 8, 8), (1, 5, 4, 8)]
    details = ["a white sailing boat", "dark pine trees on the shore", "a wooden jetty"]
    objects = tuple(
        ObjectEntry(detail=text_encode(details[i % 3]), mask=mask_encode(latent_box(8, 8, *boxes[i % 3])))
        for i in range(n_objects)
    )
    return SemanticContainer(
        width=64,
        height=64,
        reference=ref_encode(image, 8) if reference else None,
        overall_text=text_encode(overall) if overall is not None else None,
        objects=objects,
    )


@pytest.fixture(scope="session")
def photo() -> Image:
    return synthetic_photo(768, 512)


@pytest.fixture
def small_image() -> Image:
    return gradient_image(64, 64)


@pytest.fixture
def mock_backends():
    return create_backends("mock")
