import logging

from ..codecs.mask_codec import SemanticMask, rle_counts_to_mask
from ..errors import EmptyMask, MalformedResponse, MaskCodecError
from ..utils.image_io import Image
from .api_utilities import auth_headers, create_session, image_to_b64, retry_api, safe_requests_post
from .backends import BackendConfig, DetectionBox


# --- Detector ---


def parse_boxes(body: dict) -> list[DetectionBox]:
    """
    Reads {boxes: [{x0, y0, x1, y1, confidence}, ...]} into boxes sorted by confidence.

    Raises:
        MalformedResponse: On missing fields or invalid coordinates.
    """
    if not isinstance(body, dict) or not isinstance(body.get("boxes"), list):
        raise MalformedResponse("detector answer lacks a 'boxes' list")
    boxes = []
    for entry in body["boxes"]:
        try:
            boxes.append(
                DetectionBox(
                    float(entry["x0"]), float(entry["y0"]), float(entry["x1"]), float(entry["y1"]),
                    float(entry.get("confidence", 1.0)),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedResponse(f"invalid detection box {entry!r}: {e}") from e
    return sorted(boxes, key=lambda box: box.confidence, reverse=True)


class DetectorClient:
    """Open-set detector contract: POST {image_b64, query} -> {boxes}."""

    def __init__(self, config: BackendConfig, session=None):
        self.config = config
        self.session = session or create_session()

    @retry_api()
    def _post(self, payload: dict, timeout: float) -> dict:
        url = self.config.endpoint.rstrip("/") + "/detect"
        return safe_requests_post(self.session, url, payload, auth_headers(self.config.token_env), timeout)

    def detect(self, image: Image, name: str) -> list[DetectionBox]:
        if not name:
            raise ValueError("detection query must be a non-empty name")
        boxes = parse_boxes(self._post({"image_b64": image_to_b64(image), "query": name}))
        logging.info(f"Detector found {len(boxes)} box(es) for '{name}'")
        return boxes


# --- Segmenter ---


class SegmenterClient:
    """
    Promptable segmenter contract: POST {image_b64, box} -> {mask_rle: {counts, size: [h, w]}}.

    Counts alternate zero and one runs over the row-major raster, starting with zeros.
    """

    def __init__(self, config: BackendConfig, session=None):
        self.config = config
        self.session = session or create_session()

    @retry_api()
    def _post(self, payload: dict, timeout: float) -> dict:
        url = self.config.endpoint.rstrip("/") + "/segment"
        return safe_requests_post(self.session, url, payload, auth_headers(self.config.token_env), timeout)

    def segment(self, image: Image, box: DetectionBox) -> SemanticMask:
        payload = {
            "image_b64": image_to_b64(image),
            "box": {"x0": box.x0, "y0": box.y0, "x1": box.x1, "y1": box.y1},
        }
        body = self._post(payload)
        try:
            rle = body["mask_rle"]
            height, width = (int(n) for n in rle["size"])
            counts = list(rle["counts"])
        except (KeyError, TypeError, ValueError) as e:
            raise MalformedResponse(f"segmenter answer lacks a valid 'mask_rle': {e}") from e
        if (width, height) != (image.width, image.height):
            raise MalformedResponse(f"segmenter mask is {width}x{height}, image is {image.width}x{image.height}")
        try:
            mask = rle_counts_to_mask(counts, width, height)
        except (MaskCodecError, TypeError, ValueError) as e:
            raise MalformedResponse(f"segmenter mask counts invalid: {e}") from e
        if mask.area == 0:
            raise EmptyMask(f"segmenter returned an empty mask for box {box}")
        return mask
