"""
Contracts of the four model capabilities (captioner, detector, segmenter, denoiser),
the types they exchange, and the client-side caption budget enforcement.
"""

import logging
import warnings
from collections.abc import Callable
from dataclasses import dataclass, replace
from typing import Protocol

import numpy as np

from ..codecs.mask_codec import SemanticMask
from ..errors import BudgetViolationCorrected, MalformedResponse
from ..utils.image_io import Image


DEFAULT_TOKEN_ENV = "SEDIC_API_TOKEN"
NAME_WORDS = 3
MAX_WORDS = 50
SERVICES = ("captioner", "detector", "segmenter", "denoiser")


# --- Types ---


@dataclass(frozen=True)
class ObjectDescription:
    name: str
    detail: str


@dataclass(frozen=True)
class CaptionResult:
    objects: tuple[ObjectDescription, ...]
    overall: str

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))


@dataclass(frozen=True)
class CaptionBudgets:
    """Word caps sent to the captioner: object count, name, detail and overall description lengths."""
    max_objects: int
    l_d: int
    l_all: int
    l_n: int = NAME_WORDS


@dataclass(frozen=True)
class DetectionBox:
    """Normalized [0, 1] box with its detection confidence."""
    x0: float
    y0: float
    x1: float
    y1: float
    confidence: float = 1.0

    def __post_init__(self):
        coordinates = (self.x0, self.y0, self.x1, self.y1, self.confidence)
        if not all(0.0 <= float(c) <= 1.0 for c in coordinates):
            raise ValueError(f"box values must lie in [0, 1], got {coordinates}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {coordinates[:4]}")


@dataclass(frozen=True)
class BackendConfig:
    """
    Connection settings of one HTTP service.

    Parameters:
        endpoint (str | None): Base URL of the service.
        token_env (str): Environment variable holding the bearer token.
        timeout (float): Per-request timeout in seconds.
        retries (int): Retries after the first attempt.
        model (str | None): Model name sent to OpenAI-compatible captioners.
    """
    endpoint: str | None = None
    token_env: str = DEFAULT_TOKEN_ENV
    timeout: float = 30.0
    retries: int = 2
    model: str | None = None

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError(f"timeout must be positive, got {self.timeout}")
        if self.retries < 0:
            raise ValueError(f"retries must be non-negative, got {self.retries}")


@dataclass(frozen=True, eq=False)
class TextEmbedding:
    """Token vectors (K, C) of a text plus a deterministic key derived from it."""
    text: str
    vectors: np.ndarray
    key: int

    @property
    def n_tokens(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True, eq=False)
class AttentionResult:
    """Attention map A (S, K) and the hook mapping dE/dA to dE/dz."""
    attention: np.ndarray
    backward: Callable[[np.ndarray], np.ndarray]


# --- Protocols ---


class Captioner(Protocol):
    def caption(self, image: Image, budgets: CaptionBudgets) -> CaptionResult: ...


class Detector(Protocol):
    def detect(self, image: Image, name: str) -> list[DetectionBox]: ...


class Segmenter(Protocol):
    def segment(self, image: Image, box: DetectionBox) -> SemanticMask: ...


class Denoiser(Protocol):
    def latent_shape(self, width: int, height: int) -> tuple[int, int, int]: ...

    def encode_condition(self, image: Image) -> np.ndarray: ...

    def text_embed(self, text: str) -> TextEmbedding: ...

    def attention(self, z: np.ndarray, embedding: TextEmbedding) -> AttentionResult: ...

    def denoise_step(self, z: np.ndarray, t: int, condition: np.ndarray, embedding: TextEmbedding) -> np.ndarray: ...

    def decode(self, z: np.ndarray, width: int, height: int) -> Image: ...

    def noised_reference(self, condition: np.ndarray, t: int, seed: int) -> np.ndarray: ...


@dataclass
class Backends:
    captioner: Captioner
    detector: Detector
    segmenter: Segmenter
    denoiser: Denoiser
    mode: str = "mock"


# --- Budgets ---


def truncate_words(text: str, n_words: int) -> tuple[str, bool]:
    """Keeps the first `n_words` whitespace-separated words; returns (text, truncated)."""
    words = text.split()
    return " ".join(words[:n_words]), len(words) > n_words


def _corrected(message: str) -> None:
    warnings.warn(message, BudgetViolationCorrected, stacklevel=3)
    logging.warning(message)


def enforce_caption_budgets(result: CaptionResult, budgets: CaptionBudgets) -> CaptionResult:
    """
    Applies every word cap and the object count cap client-side.

    Parameters:
        result (CaptionResult): Raw captioner answer.
        budgets (CaptionBudgets): Caps to enforce.

    Returns:
        CaptionResult: Capped result. Each correction emits a BudgetViolationCorrected warning.

    Raises:
        MalformedResponse: If the overall description is empty.
    """
    objects = list(result.objects)
    if len(objects) > budgets.max_objects:
        _corrected(f"Captioner returned {len(objects)} objects, keeping the first {budgets.max_objects}")
        objects = objects[:budgets.max_objects]

    capped = []
    for description in objects:
        name, name_cut = truncate_words(description.name, budgets.l_n)
        detail, detail_cut = truncate_words(description.detail, budgets.l_d)
        if name_cut:
            _corrected(f"Object name '{description.name}' exceeds {budgets.l_n} words, truncated")
        if detail_cut:
            _corrected(f"Detail of '{name}' exceeds {budgets.l_d} words, truncated")
        if not name:
            raise MalformedResponse("captioner returned an object without a name")
        capped.append(ObjectDescription(name=name, detail=detail))

    overall, overall_cut = truncate_words(result.overall, budgets.l_all)
    if overall_cut:
        _corrected(f"Overall description exceeds {budgets.l_all} words, truncated")
    if not overall:
        raise MalformedResponse("captioner returned an empty overall description")
    return replace(result, objects=tuple(capped), overall=overall)


# --- Factory ---


def create_backends(mode: str = "mock", configs: dict[str, BackendConfig] | None = None, **mock_options) -> Backends:
    """
    Builds the four backends.

    Parameters:
        mode (str): 'mock' (deterministic, offline) or 'http'.
        configs (dict, optional): Per-service BackendConfig keyed by 'captioner', 'detector',
            'segmenter', 'denoiser'; required in http mode.
        **mock_options: Forwarded to the mock backends (scene, reject, policy).

    Returns:
        Backends: The backend bundle.
    """
    if mode == "mock":
        from ..machine_learning.mock_models import create_mock_backends
        return create_mock_backends(**mock_options)
    if mode == "http":
        from .captioner_api import CaptionerClient
        from .denoiser_api import DenoiserClient
        from .grounding_api import DetectorClient, SegmenterClient

        configs = configs or {}
        missing = [service for service in SERVICES if service not in configs or not configs[service].endpoint]
        if missing:
            raise ValueError(f"http backend mode requires endpoints for: {', '.join(missing)}")
        return Backends(
            captioner=CaptionerClient(configs["captioner"]),
            detector=DetectorClient(configs["detector"]),
            segmenter=SegmenterClient(configs["segmenter"]),
            denoiser=DenoiserClient(configs["denoiser"]),
            mode="http",
        )
    raise ValueError(f"unknown backend mode '{mode}' (expected 'mock' or 'http')")
