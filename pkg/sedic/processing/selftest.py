"""
Property suites runnable without network or model weights: container framing,
text and mask codecs, the reference codec, guidance mathematics and the rate policy.
"""

import logging
from collections import Counter
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from ..codecs.container import HEADER_SIZE, MAGIC, ObjectEntry, SemanticContainer, parse, serialize, size_report
from ..codecs.mask_codec import MaskEncoding, SemanticMask, mask_decode, mask_encode
from ..codecs.ref_codec import fit_quality, payload_bits, quality_ladder, ref_decode, ref_encode
from ..codecs.text_codec import text_decode, text_encode
from ..errors import ContainerError, SedicError
from ..machine_learning.guidance import (
    attention_energy,
    attention_energy_grad,
    blend_latents,
    finite_difference_check,
)
from ..machine_learning.mock_models import MockDenoiser
from ..utils.image_io import Image, psnr
from .encode_image import rate_control


PROSE = (
    "the old harbour town wakes up slowly on a grey morning in late autumn. fishing boats "
    "rock against the wooden pier while gulls circle above the market, where the first "
    "traders are already setting out crates of fish, bread and apples. a narrow street "
    "climbs from the water towards the church on the hill, lined with small houses painted "
    "in faded shades of blue, yellow and green. behind the windows, lamps are switched on "
    "one after another, and the smell of coffee drifts into the cold air. an old man in a "
    "heavy coat walks his dog along the sea wall, stopping now and then to look at the "
    "waves breaking on the rocks below. further out, a ferry leaves the bay and turns "
    "north, its white hull bright against the dark water. by noon the clouds begin to "
    "break, and for a short while the whole town is covered in a soft and pale light that "
    "makes the wet stones of the square shine like glass."
)
FD_TOLERANCE = 1.0e-5
FUZZ_CASES = 2000


@dataclass(frozen=True)
class PropertyResult:
    suite: str
    name: str
    passed: bool
    message: str = ""


# --- Container ---


def _sample_container(rng: np.random.Generator) -> SemanticContainer:
    masks = [SemanticMask(16, 8, rng.random((8, 16)) < 0.3) for _ in range(2)]
    return SemanticContainer(
        width=128,
        height=64,
        overall_text=text_encode("a red house under a blue sky"),
        objects=tuple(ObjectEntry(detail=text_encode(f"object number {i}"), mask=mask_encode(m)) for i, m in enumerate(masks)),
    )


def check_container_round_trip() -> None:
    stream = serialize(_sample_container(np.random.default_rng(1)))
    assert serialize(parse(stream)) == stream, "re-serialized container differs"


def check_container_truncation() -> None:
    stream = serialize(_sample_container(np.random.default_rng(2)))
    for cut in range(len(stream)):
        try:
            parse(stream[:cut])
        except ContainerError:
            continue
        raise AssertionError(f"prefix of {cut} bytes parsed without error")


def check_size_accounting() -> None:
    container = _sample_container(np.random.default_rng(3))
    assert int(size_report(container)["bytes"].sum()) == len(serialize(container)), "section bytes do not sum"


def parse_and_decode(stream: bytes) -> SemanticContainer:
    """Parses a stream and decodes every text and mask blob it carries."""
    container = parse(stream)
    if container.overall_text is not None:
        text_decode(container.overall_text)
    for entry in container.objects:
        text_decode(entry.detail)
        mask_decode(entry.mask)
    return container


def mutate(stream: bytes, rng: np.random.Generator) -> bytes:
    """One random corruption of `stream`: bit flips, byte overwrite, cut, insertion or fresh bytes."""
    data = bytearray(stream)
    kind = int(rng.integers(7))
    if kind == 0:
        return rng.integers(0, 256, int(rng.integers(0, 64)), dtype=np.uint8).tobytes()
    if kind == 1:
        return MAGIC + rng.integers(0, 256, int(rng.integers(0, 64)), dtype=np.uint8).tobytes()
    if kind == 2:
        for _ in range(int(rng.integers(1, 9))):
            position = int(rng.integers(len(data)))
            data[position] ^= 1 << int(rng.integers(8))
    elif kind == 3:
        for _ in range(int(rng.integers(1, 5))):
            data[int(rng.integers(len(data)))] = int(rng.integers(256))
    elif kind == 4:
        del data[int(rng.integers(len(data))):]
    elif kind == 5:
        position = int(rng.integers(len(data) + 1))
        data[position:position] = rng.integers(0, 256, int(rng.integers(1, 16)), dtype=np.uint8).tobytes()
    else:
        data[14] = int(rng.integers(256))
        data[HEADER_SIZE:] = rng.integers(0, 256, int(rng.integers(0, 96)), dtype=np.uint8).tobytes()
    return bytes(data)


def fuzz_parse(n_cases: int, seed: int = 0, progress: bool = False) -> Counter:
    """
    Feeds `n_cases` corrupted streams to the parser and the blob decoders.

    Structured errors are counted by class name, accepted streams as 'ok'. Any
    other exception propagates with the offending case attached.

    Returns:
        Counter: Outcome counts.
    """
    rng = np.random.default_rng(seed)
    seeds = [serialize(_sample_container(np.random.default_rng(i))) for i in range(4)]
    seeds.append(serialize(SemanticContainer(width=16, height=16, reference=ref_encode(_gradient(16, 16), 20))))
    outcomes = Counter()
    for case in tqdm(range(n_cases), desc="Fuzzing", disable=not progress):
        stream = mutate(seeds[case % len(seeds)], rng)
        try:
            parse_and_decode(stream)
            outcomes["ok"] += 1
        except SedicError as e:
            outcomes[type(e).__name__] += 1
        except Exception as e:
            raise AssertionError(f"case {case} crashed the parser with {type(e).__name__}: {e} (stream {stream.hex()})") from e
    return outcomes


def check_container_fuzz() -> None:
    outcomes = fuzz_parse(FUZZ_CASES)
    assert sum(outcomes.values()) == FUZZ_CASES, "fuzz cases went missing"


# --- Text ---


def check_text_round_trip() -> None:
    rng = np.random.default_rng(4)
    for _ in range(200):
        data = rng.integers(0, 256, size=int(rng.integers(0, 300)), dtype=np.uint8).tobytes()
        assert text_decode(text_encode(data)) == data, "random byte string did not round-trip"
    for text in ("", "a" * 100, PROSE, "café über 日本"):
        assert text_decode(text_encode(text)) == text.encode("utf-8"), f"text {text[:20]!r} did not round-trip"


def check_text_compression() -> None:
    size = len(text_encode(PROSE).to_bytes())
    assert size <= 0.75 * len(PROSE), f"prose compressed to {size} of {len(PROSE)} bytes"


# --- Mask ---


def check_mask_round_trip() -> None:
    rng = np.random.default_rng(5)
    for _ in range(100):
        width, height = int(rng.integers(1, 40)), int(rng.integers(1, 40))
        mask = SemanticMask(width, height, rng.random((height, width)) < rng.random())
        assert mask_decode(mask_encode(mask)) == mask, "random mask did not round-trip"


def check_mask_size() -> None:
    blob = mask_encode(SemanticMask.zeros(768, 512))
    assert blob.encoding == MaskEncoding.RLE and len(blob.data) <= 6, f"all-zero mask used {len(blob.data)} bytes"


# --- Reference codec ---


def _gradient(width: int = 64, height: int = 48) -> Image:
    y, x = np.mgrid[0:height, 0:width] / max(width, height)
    return Image(np.stack([x, y, 0.5 * (x + y)], axis=-1))


def check_reference_round_trip() -> None:
    image = _gradient()
    decoded = ref_decode(ref_encode(image, 1))
    assert (decoded.width, decoded.height) == (image.width, image.height), "reference dimensions changed"
    assert psnr(image, decoded) > 25.0, "finest reference quality is too lossy"


def check_quality_fit() -> None:
    image = _gradient()
    budget = payload_bits(image, 16)
    q = fit_quality(image, budget)
    assert payload_bits(image, q) <= budget, "fitted quality overflows the budget"
    assert q <= 16, f"fitted quality {q} is coarser than needed"
    assert q == 1 or payload_bits(image, q - 1) > budget, f"quality {q - 1} also fits the budget"


def check_reference_size_monotone() -> None:
    sizes = [len(payload.data) for payload in quality_ladder(_gradient())]
    for q in range(1, len(sizes)):
        assert sizes[q] <= sizes[q - 1], f"payload grows from q={q} to q={q + 1}: {sizes[q - 1]} -> {sizes[q]} bytes"


# --- Guidance ---


def check_energy_gradient() -> None:
    rng = np.random.default_rng(6)
    for _ in range(20):
        n_locations, n_tokens = int(rng.integers(2, 30)), int(rng.integers(1, 5))
        mask = rng.random(n_locations) < 0.5
        mask[0], mask[-1] = True, False
        k = int(rng.integers(n_tokens))
        attention = rng.random((n_locations, n_tokens)) + 0.01
        error = finite_difference_check(
            lambda a: attention_energy(a, mask, k), lambda a: attention_energy_grad(a, mask, k), attention
        )
        assert error <= FD_TOLERANCE, f"dE/dA relative error {error:.2e}"


def check_latent_gradient() -> None:
    rng = np.random.default_rng(7)
    denoiser = MockDenoiser()
    embedding = denoiser.text_embed("a tall green tree")
    for _ in range(5):
        z = rng.standard_normal((3, 4, denoiser.channels))
        mask = rng.random((3, 4)) < 0.5
        mask[0, 0], mask[-1, -1] = True, False

        def energy(latent):
            return attention_energy(denoiser.attention(latent, embedding).attention, mask, 0)

        def gradient(latent):
            result = denoiser.attention(latent, embedding)
            return result.backward(attention_energy_grad(result.attention, mask, 0))

        error = finite_difference_check(energy, gradient, z)
        assert error <= FD_TOLERANCE, f"dE/dz relative error {error:.2e}"


def check_blending() -> None:
    rng = np.random.default_rng(8)
    z_cur, z_prev = rng.standard_normal((2, 6, 5, 4))
    mask = rng.random((6, 5)) < 0.4
    blended = blend_latents(z_cur, z_prev, mask)
    assert np.array_equal(blended[~mask], z_prev[~mask]), "outside-mask latent altered"
    assert np.array_equal(blended[mask], z_cur[mask]), "inside-mask latent altered"


# --- Policy ---


def check_policy_rows() -> None:
    for target, expected in ((0.01, (0, 0, 20)), (0.025, (1, 20, 30)), (0.045, (3, 30, 50))):
        policy = rate_control(target)
        assert (policy.J, policy.l_d, policy.l_all) == expected, f"policy for {target} is {policy}"


def check_policy_monotone() -> None:
    previous = None
    for target in np.linspace(0.001, 0.1, 200):
        policy = rate_control(float(target))
        current = (policy.J, policy.l_d, policy.l_all)
        if previous is not None:
            assert all(c >= p for c, p in zip(current, previous)), f"policy decreases at {target:.4f}"
        assert policy.l_n == 3 and policy.l_d <= 50 and policy.l_all <= 50, f"word caps exceeded at {target:.4f}"
        previous = current


SUITES: dict[str, dict[str, Callable[[], None]]] = {
    "container": {
        "container round-trip": check_container_round_trip,
        "truncated stream rejected": check_container_truncation,
        "section bytes sum to stream length": check_size_accounting,
        "corrupted streams raise structured errors": check_container_fuzz,
    },
    "text": {
        "text round-trip": check_text_round_trip,
        "prose compression": check_text_compression,
    },
    "mask": {
        "mask round-trip": check_mask_round_trip,
        "all-zero mask size": check_mask_size,
    },
    "ref": {
        "reference round-trip": check_reference_round_trip,
        "quality fits budget": check_quality_fit,
        "reference size non-increasing in q": check_reference_size_monotone,
    },
    "guidance": {
        "energy gradient matches finite differences": check_energy_gradient,
        "latent gradient matches finite differences": check_latent_gradient,
        "blending exactness": check_blending,
    },
    "policy": {
        "published policy rows": check_policy_rows,
        "policy monotonicity": check_policy_monotone,
    },
}


def run_selftest(suites: list[str] | None = None, stop_at_first: bool = True) -> list[PropertyResult]:
    """
    Runs the selected property suites.

    Parameters:
        suites (list[str], optional): Suite names; None runs every suite.
        stop_at_first (bool, optional): Stop at the first failing property (default: True).

    Returns:
        list[PropertyResult]: One result per property run.

    Raises:
        ValueError: If a suite name is unknown.
    """
    names = list(SUITES) if not suites else list(suites)
    unknown = [name for name in names if name not in SUITES]
    if unknown:
        raise ValueError(f"unknown selftest suite(s): {', '.join(unknown)}; choose from {', '.join(SUITES)}")

    results = []
    for suite in names:
        for name, check in SUITES[suite].items():
            try:
                check()
                results.append(PropertyResult(suite, name, True))
            except Exception as e:
                logging.error(f"Selftest property '{name}' failed: {e}")
                results.append(PropertyResult(suite, name, False, str(e) or type(e).__name__))
                if stop_at_first:
                    return results
    return results


def first_failure(results: list[PropertyResult]) -> PropertyResult | None:
    return next((result for result in results if not result.passed), None)
