import json
import logging
import re

from ..errors import MalformedResponse
from ..utils.image_io import Image
from .api_utilities import auth_headers, create_session, image_to_b64, retry_api, safe_requests_post
from .backends import BackendConfig, CaptionBudgets, CaptionResult, ObjectDescription, enforce_caption_budgets


DEFAULT_MODEL = "gpt-4o"

SYSTEM_PROMPT = (
    "You describe images for an image compression system. Answer with strict JSON only, "
    'of the form {{"objects": [{{"name": "...", "detail": "..."}}], "overall": "..."}}. '
    "List at most {max_objects} salient objects that are clearly visible, largest first. "
    "Each name has at most {l_n} words. Each detail has at most {l_d} words and describes "
    "the object's appearance, color, texture and position. The overall description has at "
    "most {l_all} words and describes the whole scene, its layout, lighting and colors. "
    "Do not add any text outside the JSON object."
)

_FENCE = re.compile(r"^\s*```(?:json)?\s*(.*?)\s*```\s*$", re.DOTALL)


def parse_caption_json(content: str) -> CaptionResult:
    """
    Parses the captioner's JSON answer (an optional ```json fence is tolerated).

    Raises:
        MalformedResponse: If the content is not JSON of the expected shape.
    """
    match = _FENCE.match(content or "")
    text = match.group(1) if match else (content or "")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedResponse(f"captioner answer is not JSON: {e}") from e
    if not isinstance(data, dict) or not isinstance(data.get("overall"), str):
        raise MalformedResponse("captioner answer lacks a string 'overall' field")
    objects = data.get("objects", [])
    if not isinstance(objects, list):
        raise MalformedResponse("captioner 'objects' field is not a list")

    descriptions = []
    for entry in objects:
        if not isinstance(entry, dict) or not isinstance(entry.get("name"), str):
            raise MalformedResponse(f"captioner object entry without a name: {entry!r}")
        detail = entry.get("detail", "")
        if not isinstance(detail, str):
            raise MalformedResponse(f"captioner detail for '{entry['name']}' is not a string")
        descriptions.append(ObjectDescription(name=entry["name"], detail=detail))
    return CaptionResult(objects=tuple(descriptions), overall=data["overall"])


class CaptionerClient:
    """OpenAI-compatible chat-completions captioner (image sent as a base64 data URL)."""

    def __init__(self, config: BackendConfig, session=None):
        self.config = config
        self.session = session or create_session()

    @property
    def url(self) -> str:
        return self.config.endpoint.rstrip("/") + "/chat/completions"

    @retry_api()
    def _complete(self, payload: dict, timeout: float) -> dict:
        return safe_requests_post(self.session, self.url, payload, auth_headers(self.config.token_env), timeout)

    def caption(self, image: Image, budgets: CaptionBudgets) -> CaptionResult:
        """
        Captions an image and enforces every word cap client-side.

        Parameters:
            image (Image): Image to describe.
            budgets (CaptionBudgets): Object count and word caps.

        Returns:
            CaptionResult: Capped captions.

        Raises:
            BackendUnavailable: If the service cannot be reached.
            MalformedResponse: If the answer cannot be parsed.
        """
        prompt = SYSTEM_PROMPT.format(
            max_objects=budgets.max_objects, l_n=budgets.l_n, l_d=budgets.l_d, l_all=budgets.l_all
        )
        payload = {
            "model": self.config.model or DEFAULT_MODEL,
            "temperature": 0,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": prompt},
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": "Describe this image."},
                        {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{image_to_b64(image)}"}},
                    ],
                },
            ],
        }
        body = self._complete(payload)
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise MalformedResponse(f"unexpected chat-completions answer shape: {e}") from e
        result = parse_caption_json(content)
        logging.info(f"Captioner returned {len(result.objects)} object(s)")
        return enforce_caption_budgets(result, budgets)
