import hashlib

import numpy as np

from ..errors import MalformedResponse
from ..utils.image_io import Image
from .api_utilities import (
    array_from_json,
    array_to_json,
    auth_headers,
    create_session,
    image_to_b64,
    retry_api,
    safe_requests_post,
)
from .backends import AttentionResult, BackendConfig, TextEmbedding


LATENT_FACTOR = 8
LATENT_CHANNELS = 4


class DenoiserClient:
    """
    Controllable denoiser served over HTTP. Every route takes and returns JSON; arrays
    travel as {shape, data_b64} with float64 little-endian samples.

    Routes: /encode_condition, /text_embed, /attention, /attention_backward,
    /denoise_step, /decode, /noised_reference.
    """

    def __init__(self, config: BackendConfig, session=None):
        self.config = config
        self.session = session or create_session()

    @retry_api()
    def _post(self, route: str, payload: dict, timeout: float) -> dict:
        url = self.config.endpoint.rstrip("/") + route
        return safe_requests_post(self.session, url, payload, auth_headers(self.config.token_env), timeout)

    def _array(self, route: str, payload: dict, key: str, shape: tuple[int, ...] | None = None) -> np.ndarray:
        body = self._post(route, payload)
        if not isinstance(body, dict) or key not in body:
            raise MalformedResponse(f"{route} answer lacks '{key}'")
        array = array_from_json(body[key])
        if shape is not None and array.shape != shape:
            raise MalformedResponse(f"{route} returned shape {array.shape}, expected {shape}")
        return array

    def latent_shape(self, width: int, height: int) -> tuple[int, int, int]:
        return (-(-height // LATENT_FACTOR), -(-width // LATENT_FACTOR), LATENT_CHANNELS)

    def encode_condition(self, image: Image) -> np.ndarray:
        shape = self.latent_shape(image.width, image.height)
        return self._array("/encode_condition", {"image_b64": image_to_b64(image)}, "condition", shape)

    def text_embed(self, text: str) -> TextEmbedding:
        vectors = self._array("/text_embed", {"text": text}, "embedding")
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise MalformedResponse(f"text embedding must be (tokens, channels), got {vectors.shape}")
        key = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
        return TextEmbedding(text=text, vectors=vectors, key=key)

    def attention(self, z: np.ndarray, embedding: TextEmbedding) -> AttentionResult:
        n_locations = z.shape[0] * z.shape[1]
        attention = self._array(
            "/attention", {"z": array_to_json(z), "text": embedding.text}, "attention",
            (n_locations, embedding.n_tokens),
        )

        def backward(grad_attention: np.ndarray) -> np.ndarray:
            payload = {"z": array_to_json(z), "text": embedding.text, "grad_attention": array_to_json(grad_attention)}
            return self._array("/attention_backward", payload, "grad_z", z.shape)

        return AttentionResult(attention=attention, backward=backward)

    def denoise_step(self, z: np.ndarray, t: int, condition: np.ndarray, embedding: TextEmbedding) -> np.ndarray:
        payload = {"z": array_to_json(z), "t": int(t), "condition": array_to_json(condition), "text": embedding.text}
        return self._array("/denoise_step", payload, "z", z.shape)

    def decode(self, z: np.ndarray, width: int, height: int) -> Image:
        samples = self._array(
            "/decode", {"z": array_to_json(z), "width": width, "height": height}, "image", (height, width, 3)
        )
        return Image(np.clip(samples, 0.0, 1.0))

    def noised_reference(self, condition: np.ndarray, t: int, seed: int) -> np.ndarray:
        payload = {"condition": array_to_json(condition), "t": int(t), "seed": int(seed)}
        return self._array("/noised_reference", payload, "z", condition.shape)
