"""
Multi-stage semantic decoding.

Stage j < J restores object j: its detail text drives guided denoising inside the
object's mask while the latent outside the mask is copied, step by step, from the
trajectory of stage j - 1. The last stage denoises the whole latent with the
overall description. Each stage is conditioned on the image produced by the stage
before it, starting from the reference image.
"""

import datetime
import json
import logging
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..api.backends import Backends, Denoiser, TextEmbedding, create_backends
from ..codecs.container import ObjectEntry, SemanticContainer, parse
from ..codecs.mask_codec import SemanticMask, downsample_mask, mask_decode
from ..codecs.ref_codec import ref_decode
from ..codecs.text_codec import text_decode
from ..errors import CorruptPayload, EmptyContainer, MaskResolutionError
from ..machine_learning.guidance import (
    GuidanceConfig,
    TokenSelection,
    attention_energy,
    attention_energy_grad,
    blend_latents,
    guided_update,
)
from ..utils.generate_reports import report_decoding
from ..utils.image_io import Image, write_image
from ..utils.manage_warnings import install_dedup_filter


# --- Configuration and state ---


@dataclass(frozen=True)
class DecodeConfig:
    """
    Parameters:
        T (int): Denoising steps per stage.
        t_threshold (int | None): Guidance runs at t > t_threshold; None means T // 2.
        eta (float): Guidance step size.
        seed (int): Seed of every initial latent and of the noised reference trajectory.
        record_trace (bool): Keep the per-stage images and guidance energies.
        token_index (int | Sequence[int] | None): Guided token(s) of each detail text.
        record_trajectories (bool): Keep every stage's latent trajectory in the trace.
        progress (bool): Show a progress bar over stages.
    """
    T: int = 50
    t_threshold: int | None = None
    eta: float = 1.0
    seed: int = 0
    token_index: TokenSelection = 0
    record_trace: bool = True
    record_trajectories: bool = False
    progress: bool = False

    def __post_init__(self):
        if self.T < 1:
            raise ValueError(f"T must be at least 1, got {self.T}")
        if self.t_threshold is not None and not 0 <= self.t_threshold <= self.T:
            raise ValueError(f"guidance threshold must satisfy 0 <= T' <= T, got T'={self.t_threshold}, T={self.T}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def threshold(self) -> int:
        return self.T // 2 if self.t_threshold is None else self.t_threshold

    @property
    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(eta=self.eta, t_threshold=self.threshold, token_index=self.token_index)


@dataclass
class DecodeState:
    """
    Latent state of one decoding stage.

    `previous_trajectory[t]` is the previous stage's latent at timestep t (t = 0..T);
    `trajectory` fills the same way while the stage runs.
    """
    stage: int
    width: int
    height: int
    latent: np.ndarray
    previous_trajectory: list[np.ndarray]
    condition: np.ndarray
    embedding: TextEmbedding | None = None
    trajectory: list[np.ndarray | None] = field(default_factory=list)


@dataclass
class DecodeTrace:
    """Stage images, per-step energies, guided-step counts and timings of one decode."""
    stage_images: list[Image] = field(default_factory=list)
    energies: list[dict] = field(default_factory=list)
    guided_steps: list[int] = field(default_factory=list)
    stage_seconds: list[float] = field(default_factory=list)
    stage_kinds: list[str] = field(default_factory=list)
    trajectories: list[list[np.ndarray]] = field(default_factory=list)

    @property
    def n_stages(self) -> int:
        return len(self.stage_images)

    def energy_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.energies, columns=["stage", "t", "energy"])

    def summary(self) -> dict:
        return {
            "n_stages": self.n_stages,
            "stage_kinds": list(self.stage_kinds),
            "guided_steps": list(self.guided_steps),
            "stage_seconds": [round(s, 6) for s in self.stage_seconds],
            "n_energies": len(self.energies),
        }


# --- Helpers ---


def mask_to_latent(mask: SemanticMask, width: int, height: int, latent_shape: tuple[int, ...]) -> SemanticMask:
    """
    Maps a transmitted mask onto the latent grid.

    Accepts the latent grid itself, any integer multiple of it, or a full-resolution
    mask whose image dimensions are not multiples of the latent factor (zero-padded first).

    Raises:
        MaskResolutionError: For any other mask size.
    """
    latent_h, latent_w = latent_shape[:2]
    if (mask.height, mask.width) == (latent_h, latent_w):
        return mask
    if mask.height % latent_h == 0 and mask.width % latent_w == 0 and mask.height // latent_h == mask.width // latent_w:
        return downsample_mask(mask, mask.height // latent_h)
    if (mask.width, mask.height) == (width, height):
        factor = -(-height // latent_h)
        if -(-width // factor) == latent_w:
            bits = np.zeros((latent_h * factor, latent_w * factor), dtype=bool)
            bits[:height, :width] = mask.bits
            return downsample_mask(SemanticMask(latent_w * factor, latent_h * factor, bits), factor)
    raise MaskResolutionError(
        f"mask of {mask.width}x{mask.height} cannot be mapped to the {latent_w}x{latent_h} latent grid "
        f"of a {width}x{height} image"
    )


def initial_latent(shape: tuple[int, ...], seed: int, stage: int) -> np.ndarray:
    """Standard normal z_T of a stage, sub-seeded by the stage index."""
    return np.random.default_rng([seed, 1, stage]).standard_normal(shape)


def _text(blob) -> str:
    return text_decode(blob).decode("utf-8", errors="replace")


# --- Stages ---


def run_object_stage(
    state: DecodeState, entry: ObjectEntry, config: DecodeConfig, denoiser: Denoiser, trace: DecodeTrace | None = None
) -> DecodeState:
    """
    Restores one object: guided denoising inside its mask, blending with the previous
    stage's trajectory outside it.

    For t = T..1: if t > T', z <- z - eta * dE/dz; then z <- denoise_step(z, t); then
    z <- M * z + (1 - M) * previous[t - 1]. The initial latent `state.latent` is blended
    the same way with previous[T].

    Parameters:
        state (DecodeState): Stage index, condition and previous trajectory.
        entry (ObjectEntry): Detail text and mask of the object.
        config (DecodeConfig): Decoding parameters.
        denoiser (Denoiser): Denoiser backend.
        trace (DecodeTrace, optional): Receives energies and guided-step counts.

    Returns:
        DecodeState: The state with `latent` = z_{j,0} and the full `trajectory`.
    """
    T = config.T
    guidance = config.guidance
    shape = denoiser.latent_shape(state.width, state.height)
    mask = mask_to_latent(mask_decode(entry.mask), state.width, state.height, shape)
    embedding = denoiser.text_embed(_text(entry.detail))

    trajectory = [None] * (T + 1)
    z = blend_latents(state.latent, state.previous_trajectory[T], mask)
    trajectory[T] = z
    guided = 0
    for t in range(T, 0, -1):
        if t > guidance.t_threshold:
            result = denoiser.attention(z, embedding)
            energy = attention_energy(result.attention, mask, guidance.token_index)
            grad_z = result.backward(attention_energy_grad(result.attention, mask, guidance.token_index))
            z = guided_update(z, grad_z, guidance.eta)
            guided += 1
            logging.info(f"Stage {state.stage}, t={t}: energy {energy:.6f}")
            if trace is not None:
                trace.energies.append({"stage": state.stage, "t": t, "energy": energy})
        z = denoiser.denoise_step(z, t, state.condition, embedding)
        z = blend_latents(z, state.previous_trajectory[t - 1], mask)
        trajectory[t - 1] = z

    if trace is not None:
        trace.guided_steps.append(guided)
    return replace(state, latent=z, embedding=embedding, trajectory=trajectory)


def run_final_stage(state: DecodeState, overall_text: str, config: DecodeConfig, denoiser: Denoiser) -> np.ndarray:
    """T plain denoising steps from the state's latent under the overall description; no guidance, no blending."""
    embedding = denoiser.text_embed(overall_text)
    z = state.latent
    for t in range(config.T, 0, -1):
        z = denoiser.denoise_step(z, t, state.condition, embedding)
    return z


# --- Decode ---


def reference_image(container: SemanticContainer) -> Image:
    """Decoded reference, or a mid-grey canvas when the container carries none."""
    if container.reference is None:
        return Image.solid(container.width, container.height)
    image = ref_decode(container.reference)
    if (image.width, image.height) != (container.width, container.height):
        raise CorruptPayload(
            f"reference is {image.width}x{image.height}, container declares {container.width}x{container.height}"
        )
    return image


def decode(
    container: SemanticContainer, config: DecodeConfig | None = None, denoiser: Denoiser | None = None
) -> tuple[Image, DecodeTrace]:
    """
    Reconstructs an image from a container in J + 1 stages.

    Parameters:
        container (SemanticContainer): Parsed container.
        config (DecodeConfig, optional): Decoding parameters (default: DecodeConfig()).
        denoiser (Denoiser, optional): Denoiser backend (default: mock denoiser).

    Returns:
        tuple[Image, DecodeTrace]: Final image and the decoding trace (J + 1 stage images).

    Raises:
        EmptyContainer: If the container has no reference, no overall text and no objects.
        MaskResolutionError: If a mask cannot be mapped to the latent grid.
        BackendUnavailable: If the denoiser cannot be reached.
    """
    config = config or DecodeConfig()
    denoiser = denoiser or create_backends("mock").denoiser
    if container.reference is None and container.overall_text is None and not container.objects:
        raise EmptyContainer("container has no reference image, no overall text and no objects")

    width, height = container.width, container.height
    T = config.T
    image = reference_image(container)
    overall = _text(container.overall_text) if container.overall_text is not None else ""
    trace = DecodeTrace()

    condition = denoiser.encode_condition(image)
    previous = [denoiser.noised_reference(condition, t, config.seed) for t in range(T + 1)]
    n_stages = len(container.objects) + 1
    logging.info(f"Decoding {width}x{height} container in {n_stages} stage(s), T={T}, T'={config.threshold}")

    for stage in tqdm(range(n_stages), desc="Decoding", disable=not config.progress):
        started = time.perf_counter()
        if stage > 0:
            condition = denoiser.encode_condition(image)
        shape = denoiser.latent_shape(width, height)
        state = DecodeState(
            stage=stage, width=width, height=height, latent=initial_latent(shape, config.seed, stage),
            previous_trajectory=previous, condition=condition,
        )
        if stage < len(container.objects):
            state = run_object_stage(state, container.objects[stage], config, denoiser, trace)
            previous = state.trajectory
            latent = state.latent
            kind = "object"
        else:
            latent = run_final_stage(state, overall, config, denoiser)
            kind = "overall"
        image = denoiser.decode(latent, width, height)

        if config.record_trace:
            trace.stage_images.append(image)
            trace.stage_seconds.append(time.perf_counter() - started)
            trace.stage_kinds.append(kind)
            if config.record_trajectories and kind == "object":
                trace.trajectories.append(list(previous))
        logging.info(f"Stage {stage} ({kind}) done")

    return image, trace


# --- Entry point ---


def write_trace(trace: DecodeTrace, trace_folder: str) -> None:
    """Dumps energies.json, trace.json and one stage_XX.png per stage."""
    os.makedirs(trace_folder, exist_ok=True)
    with open(os.path.join(trace_folder, "energies.json"), "w", encoding="utf-8") as handle:
        json.dump(trace.energies, handle, indent=2)
    with open(os.path.join(trace_folder, "trace.json"), "w", encoding="utf-8") as handle:
        json.dump(trace.summary(), handle, indent=2)
    for index, image in enumerate(trace.stage_images):
        write_image(image, os.path.join(trace_folder, f"stage_{index:02d}.png"))


def run_decoding(
    input_path: str,
    output_path: str,
    config: DecodeConfig | None = None,
    backends: Backends | None = None,
    trace_folder: str | None = None,
    report: bool = False,
) -> DecodeTrace:
    """
    Decodes a .sdc container file into a PNG image.

    Parameters:
        input_path (str): Container file.
        output_path (str): PNG output path.
        config (DecodeConfig, optional): Decoding parameters.
        backends (Backends, optional): Model backends (default: mock backends).
        trace_folder (str, optional): Folder receiving the per-stage images and energies.
        report (bool, optional): Whether to generate an HTML report (default: False).

    Returns:
        DecodeTrace: The decoding trace.
    """
    if not os.path.isfile(input_path):
        raise FileNotFoundError(f"cannot read container file {input_path}")
    output_folder = os.path.dirname(os.path.abspath(output_path))
    os.makedirs(output_folder, exist_ok=True)

    # Initialize logging
    os.makedirs(os.path.join(output_folder, "logs"), exist_ok=True)
    timestamp = datetime.datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
    filename = f"logs/decode_{timestamp}.log"
    install_dedup_filter()
    logging.basicConfig(filename=os.path.join(output_folder, filename), encoding='utf-8', level=logging.INFO, force=True)

    with open(input_path, "rb") as handle:
        container = parse(handle.read())
    backends = backends or create_backends("mock")
    image, trace = decode(container, config, backends.denoiser)
    write_image(image, output_path)
    logging.info(f"Reconstruction saved to '{output_path}'")

    if trace_folder:
        write_trace(trace, trace_folder)
    if report:
        report_decoding(trace, output_folder)
    return trace
