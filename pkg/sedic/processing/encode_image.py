import datetime
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

from tqdm import tqdm

from ..api.backends import (
    MAX_WORDS,
    NAME_WORDS,
    Backends,
    CaptionBudgets,
    CaptionResult,
    DetectionBox,
    Detector,
    ObjectDescription,
    Segmenter,
    create_backends,
    enforce_caption_budgets,
    truncate_words,
)
from ..codecs.container import SECTION_OVERHEAD, ObjectEntry, SemanticContainer, bpp, serialize
from ..codecs.mask_codec import downsample_mask, mask_encode
from ..codecs.ref_codec import TINY_CODEC_ID, fit_quality, ref_encode
from ..codecs.text_codec import text_encode
from ..errors import BudgetInfeasible, EmptyMask, NonPositiveTarget
from ..utils.generate_reports import report_encoding
from ..utils.image_io import Image, read_image
from ..utils.manage_warnings import install_dedup_filter


IMAGE_SUFFIXES = (".png", ".ppm")
MASK_FACTORS = (8, 4, 2, 1)


# --- Rate control ---


@dataclass(frozen=True)
class RatePolicy:
    """Object count J and word budgets chosen for a target bitrate."""
    J: int
    l_d: int
    l_all: int
    target_bpp: float
    l_n: int = NAME_WORDS

    def __post_init__(self):
        if self.J < 0:
            raise ValueError(f"object count must be non-negative, got {self.J}")
        if self.l_n != NAME_WORDS:
            raise ValueError(f"object names are capped at {NAME_WORDS} words")
        if not 0 <= self.l_d <= MAX_WORDS or not 1 <= self.l_all <= MAX_WORDS:
            raise ValueError(f"word budgets must satisfy 0 <= l_d <= {MAX_WORDS} and 1 <= l_all <= {MAX_WORDS}")


def rate_control(target_bpp: float) -> RatePolicy:
    """
    Piecewise rate policy.

        target < 0.02            J=0, l_d=0,  l_all=20
        0.02 <= target <= 0.035  J=1, l_d=20, l_all=30
        target > 0.035           J=3, l_d=30, l_all=50

    Raises:
        NonPositiveTarget: If target_bpp is not strictly positive.
    """
    if not target_bpp > 0:
        raise NonPositiveTarget(f"target bpp must be positive, got {target_bpp}")
    if target_bpp < 0.02:
        return RatePolicy(J=0, l_d=0, l_all=20, target_bpp=target_bpp)
    if target_bpp <= 0.035:
        return RatePolicy(J=1, l_d=20, l_all=30, target_bpp=target_bpp)
    return RatePolicy(J=3, l_d=30, l_all=50, target_bpp=target_bpp)


# --- Options and report ---


@dataclass(frozen=True)
class EncodeOptions:
    """
    Parameters:
        include_reference (bool): Transmit the reference image.
        include_overall_text (bool): Transmit the overall description.
        J, l_d, l_all (int | None): Overrides of the rate policy.
        detection_threshold (float): Minimum confidence for an object to count as detected.
        mask_factor (int): Downsampling of transmitted masks (8 = latent grid); 1, 2, 4 or 8.
        codec_id (int): Reference codec.
        max_workers (int): Concurrent detect/segment requests.
    """
    include_reference: bool = True
    include_overall_text: bool = True
    J: int | None = None
    l_d: int | None = None
    l_all: int | None = None
    detection_threshold: float = 0.35
    mask_factor: int = 8
    codec_id: int = TINY_CODEC_ID
    max_workers: int = 4

    def __post_init__(self):
        if self.mask_factor not in MASK_FACTORS:
            raise ValueError(f"mask factor must be one of {MASK_FACTORS}, got {self.mask_factor}")
        if not 0.0 <= self.detection_threshold <= 1.0:
            raise ValueError(f"detection threshold must lie in [0, 1], got {self.detection_threshold}")


@dataclass
class EncodeReport:
    width: int
    height: int
    target_bpp: float
    final_bpp: float
    total_bits: int
    reference_bits: int
    overall_text_bits: int
    object_text_bits: list[int]
    object_mask_bits: list[int]
    overhead_bits: int
    quality: int | None
    policy: RatePolicy
    encoded_objects: list[str] = field(default_factory=list)
    dropped_objects: list[str] = field(default_factory=list)
    skipped_objects: list[str] = field(default_factory=list)

    @property
    def n_objects(self) -> int:
        return len(self.object_text_bits)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["n_objects"] = self.n_objects
        return data


# --- Textualization ---


@dataclass(frozen=True)
class FilterResult:
    kept: list[ObjectDescription]
    dropped: list[str]
    boxes: dict[str, list[DetectionBox]]


def filter_hallucinations(
    objects: list[ObjectDescription], image: Image, detector: Detector, threshold: float = 0.35, max_workers: int = 4
) -> FilterResult:
    """
    Keeps the objects the detector finds at confidence >= threshold, in caption order.

    Parameters:
        objects (list[ObjectDescription]): Captioned objects.
        image (Image): Original image.
        detector (Detector): Open-set detector.
        threshold (float, optional): Confidence threshold (default: 0.35).

    Returns:
        FilterResult: Kept objects, dropped (hallucinated) names and the confident boxes per kept name.
    """
    objects = list(objects)
    if not objects:
        return FilterResult(kept=[], dropped=[], boxes={})

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        detections = list(pool.map(lambda description: detector.detect(image, description.name), objects))

    kept, dropped, boxes = [], [], {}
    for description, found in zip(objects, detections):
        confident = [box for box in found if box.confidence >= threshold]
        if confident:
            kept.append(description)
            boxes[description.name] = sorted(confident, key=lambda box: box.confidence, reverse=True)
        else:
            logging.warning(f"Object '{description.name}' not detected, dropped as hallucination")
            dropped.append(description.name)
    return FilterResult(kept=kept, dropped=dropped, boxes=boxes)


def transmit_factor(width: int, height: int, mask_factor: int) -> int:
    """Largest factor <= mask_factor dividing both dimensions and mapping exactly onto the latent grid."""
    if width % 8 == 0 and height % 8 == 0:
        return max(f for f in MASK_FACTORS if f <= mask_factor and width % f == 0 and height % f == 0)
    return 1


@dataclass(frozen=True)
class BuiltObjects:
    entries: list[ObjectEntry]
    names: list[str]
    skipped: list[str]


def build_objects(
    image: Image,
    policy: RatePolicy,
    caption: CaptionResult,
    detector: Detector,
    segmenter: Segmenter,
    boxes: dict[str, list[DetectionBox]] | None = None,
    mask_factor: int = 8,
    max_workers: int = 4,
) -> BuiltObjects:
    """
    Detects and segments each candidate, then keeps the J largest masks.

    Entries are ordered by descending full-resolution mask area (stable for ties), carry the
    detail truncated to l_d words and the mask at the transmission resolution. Object names
    never enter an entry. Candidates whose mask is empty are skipped with a warning.

    Returns:
        BuiltObjects: Entries in decoding order, their names (encoder side only) and the skipped names.
    """
    candidates = list(caption.objects)
    if policy.J == 0 or not candidates:
        return BuiltObjects(entries=[], names=[], skipped=[])
    boxes = boxes or {}

    def segment(description: ObjectDescription):
        found = boxes.get(description.name) or detector.detect(image, description.name)
        if not found:
            return None
        try:
            return segmenter.segment(image, found[0])
        except EmptyMask as e:
            logging.warning(f"Object '{description.name}' skipped: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        masks = list(pool.map(segment, candidates))

    skipped = [d.name for d, mask in zip(candidates, masks) if mask is None]
    survivors = [(d, mask) for d, mask in zip(candidates, masks) if mask is not None]
    survivors.sort(key=lambda item: item[1].area, reverse=True)
    survivors = survivors[:policy.J]

    factor = transmit_factor(image.width, image.height, mask_factor)
    entries = []
    for description, mask in survivors:
        detail, _ = truncate_words(description.detail, policy.l_d)
        entries.append(ObjectEntry(detail=text_encode(detail), mask=mask_encode(downsample_mask(mask, factor))))
    return BuiltObjects(entries=entries, names=[d.name for d, _ in survivors], skipped=skipped)


# --- Encode ---


def _policy_for(target_bpp: float, options: EncodeOptions) -> RatePolicy:
    policy = rate_control(target_bpp)
    overrides = {key: getattr(options, key) for key in ("J", "l_d", "l_all") if getattr(options, key) is not None}
    return replace(policy, **overrides) if overrides else policy


def encode(
    image: Image, target_bpp: float, backends: Backends | None = None, options: EncodeOptions | None = None
) -> tuple[bytes, EncodeReport]:
    """
    Encodes an image into a SEDIC container at a target bitrate.

    Text and masks are fixed commitments; the reference codec gets the remaining budget
    floor(target_bpp * w * h) - 8 * (container bytes without reference + section header + codec id).

    Parameters:
        image (Image): Image to compress.
        target_bpp (float): Target bits per pixel.
        backends (Backends, optional): Model backends (default: mock backends).
        options (EncodeOptions, optional): Ablation and tuning options.

    Returns:
        tuple[bytes, EncodeReport]: Container bytes and the bit accounting report.

    Raises:
        NonPositiveTarget: If target_bpp <= 0.
        BudgetInfeasible: If the text and masks alone exceed the target (carries suggested_target_bpp).
        BackendUnavailable: If a backend cannot be reached.
    """
    options = options or EncodeOptions()
    backends = backends or create_backends("mock")
    policy = _policy_for(target_bpp, options)
    logging.info(f"Rate policy for {target_bpp} bpp: J={policy.J}, l_d={policy.l_d}, l_all={policy.l_all}")

    budgets = CaptionBudgets(max_objects=policy.J + 2 if policy.J else 0, l_d=policy.l_d, l_all=policy.l_all)
    caption = enforce_caption_budgets(backends.captioner.caption(image, budgets), budgets)

    filtered = filter_hallucinations(
        caption.objects if policy.J else [], image, backends.detector, options.detection_threshold, options.max_workers
    )
    built = build_objects(
        image, policy, replace(caption, objects=tuple(filtered.kept)), backends.detector, backends.segmenter,
        boxes=filtered.boxes, mask_factor=options.mask_factor, max_workers=options.max_workers,
    )

    overall = text_encode(caption.overall) if options.include_overall_text else None
    container = SemanticContainer(width=image.width, height=image.height, overall_text=overall, objects=tuple(built.entries))
    area = image.width * image.height
    total_budget = math.floor(target_bpp * area)

    quality = None
    if options.include_reference:
        fixed_bytes = len(serialize(container)) + SECTION_OVERHEAD + 1
        try:
            quality = fit_quality(image, total_budget - 8 * fixed_bytes, options.codec_id)
        except BudgetInfeasible as e:
            minimum_bits = 8 * fixed_bytes + e.minimum_bits
            suggested = bpp(-(-minimum_bits // 8), image.width, image.height)
            raise BudgetInfeasible(
                minimum_bits,
                f"target {target_bpp} bpp infeasible: text, masks and the coarsest reference need "
                f"{minimum_bits} bits (try --target-bpp {suggested:.6f})",
                suggested_target_bpp=suggested,
            ) from e
        container = replace(container, reference=ref_encode(image, quality, options.codec_id))
    else:
        minimum_bits = 8 * len(serialize(container))
        if minimum_bits > total_budget:
            suggested = bpp(minimum_bits // 8, image.width, image.height)
            raise BudgetInfeasible(
                minimum_bits,
                f"target {target_bpp} bpp infeasible: text and masks need {minimum_bits} bits",
                suggested_target_bpp=suggested,
            )

    stream = serialize(container)
    report = build_report(container, stream, policy, quality, target_bpp, built, filtered.dropped)
    logging.info(f"Encoded {image.width}x{image.height} image at {report.final_bpp:.6f} bpp (q={quality})")
    return stream, report


def build_report(
    container: SemanticContainer,
    stream: bytes,
    policy: RatePolicy,
    quality: int | None,
    target_bpp: float,
    built: BuiltObjects,
    dropped: list[str],
) -> EncodeReport:
    """Per-component bit accounting; components and overhead sum to 8 * len(stream)."""
    total_bits = 8 * len(stream)
    reference_bits = 8 * len(container.reference.data) if container.reference else 0
    overall_bits = 8 * len(container.overall_text.to_bytes()) if container.overall_text else 0
    text_bits = [8 * len(entry.detail.to_bytes()) for entry in container.objects]
    mask_bits = [8 * len(entry.mask.to_bytes()) for entry in container.objects]
    return EncodeReport(
        width=container.width,
        height=container.height,
        target_bpp=target_bpp,
        final_bpp=bpp(len(stream), container.width, container.height),
        total_bits=total_bits,
        reference_bits=reference_bits,
        overall_text_bits=overall_bits,
        object_text_bits=text_bits,
        object_mask_bits=mask_bits,
        overhead_bits=total_bits - reference_bits - overall_bits - sum(text_bits) - sum(mask_bits),
        quality=quality,
        policy=policy,
        encoded_objects=list(built.names),
        dropped_objects=list(dropped),
        skipped_objects=list(built.skipped),
    )


# --- Entry points ---


def _write_outputs(stream: bytes, report: EncodeReport, output_path: str) -> None:
    with open(output_path, "wb") as handle:
        handle.write(stream)
    report_path = os.path.splitext(output_path)[0] + ".json"
    with open(report_path, "w", encoding="utf-8") as handle:
        json.dump(report.to_dict(), handle, indent=2)
    logging.info(f"Container saved to '{output_path}', report to '{report_path}'")


def run_encoding(
    input_path: str,
    output_path: str,
    target_bpp: float,
    backends: Backends | None = None,
    options: EncodeOptions | None = None,
    report: bool = False,
) -> EncodeReport:
    """
    Encodes an image file into a .sdc container and writes the JSON bit report next to it.

    Parameters:
        input_path (str): PNG or PPM image.
        output_path (str): Container path; the report is saved with a .json suffix.
        target_bpp (float): Target bits per pixel.
        backends (Backends, optional): Model backends (default: mock backends).
        options (EncodeOptions, optional): Encoder options.
        report (bool, optional): Whether to generate an HTML report (default: False).

    Returns:
        EncodeReport: The bit accounting report.
    """
    output_folder = os.path.dirname(os.path.abspath(output_path))
    os.makedirs(output_folder, exist_ok=True)

    # Initialize logging
    os.makedirs(os.path.join(output_folder, "logs"), exist_ok=True)
    timestamp = datetime.datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
    filename = f"logs/encode_{timestamp}.log"
    install_dedup_filter()
    logging.basicConfig(filename=os.path.join(output_folder, filename), encoding='utf-8', level=logging.INFO, force=True)

    image = read_image(input_path)
    stream, encode_report = encode(image, target_bpp, backends, options)
    _write_outputs(stream, encode_report, output_path)

    if report:
        report_encoding(encode_report, output_folder)
    return encode_report


def run_batch_encoding(
    input_folder: str,
    output_folder: str,
    target_bpp: float,
    backends: Backends | None = None,
    options: EncodeOptions | None = None,
    max_workers: int = 4,
    progress: bool = False,
) -> dict[str, EncodeReport | Exception]:
    """
    Encodes every PNG/PPM image of a folder concurrently into `output_folder/<name>.sdc`.

    Returns:
        dict: File name -> EncodeReport, or the exception that stopped that file.
    """
    if not os.path.isdir(input_folder):
        raise FileNotFoundError(f"cannot read input folder {input_folder}")
    os.makedirs(output_folder, exist_ok=True)

    # Initialize logging
    os.makedirs(os.path.join(output_folder, "logs"), exist_ok=True)
    timestamp = datetime.datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
    filename = f"logs/encode_batch_{timestamp}.log"
    install_dedup_filter()
    logging.basicConfig(filename=os.path.join(output_folder, filename), encoding='utf-8', level=logging.INFO, force=True)

    backends = backends or create_backends("mock")
    names = sorted(name for name in os.listdir(input_folder) if name.lower().endswith(IMAGE_SUFFIXES))

    def encode_file(name: str):
        try:
            stream, encode_report = encode(read_image(os.path.join(input_folder, name)), target_bpp, backends, options)
            _write_outputs(stream, encode_report, os.path.join(output_folder, os.path.splitext(name)[0] + ".sdc"))
            return encode_report
        except Exception as e:
            logging.error(f"Encoding '{name}' failed: {e}")
            return e

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(tqdm(pool.map(encode_file, names), total=len(names), desc="Encoding", disable=not progress))
    return dict(zip(names, results))
