import base64
import json
import logging
import os
from functools import wraps
from time import monotonic, sleep

import numpy as np
import requests
from requests import Session
from requests.adapters import HTTPAdapter

from ..errors import BackendUnavailable, MalformedResponse
from ..utils.image_io import Image, image_to_png_bytes


RETRY_STATUSES = {429, 500, 502, 503, 504}
ELIDE_ABOVE = 256


def retry_api(backoff_factor=2, initial_delay=0.5):
    """
    Retries a client method on connection errors, timeouts and transient HTTP statuses.

    The wrapped method receives a `timeout` keyword and its instance must carry a
    BackendConfig as `self.config`. All attempts and waits fit in
    config.timeout * (config.retries + 1) seconds.

    Raises:
        BackendUnavailable: When every attempt failed or the deadline passed.
    """
    def decorator(func):
        @wraps(func)
        def wrapper(self, *args, **kwargs):
            config = self.config
            attempts = config.retries + 1
            deadline = monotonic() + config.timeout * attempts
            delay = initial_delay
            for attempt in range(attempts):
                remaining = deadline - monotonic()
                if remaining <= 0:
                    break
                try:
                    return func(self, *args, timeout=min(config.timeout, remaining), **kwargs)

                except (requests.exceptions.ConnectionError, requests.exceptions.Timeout) as e:
                    logging.warning(f"Connection error ({e}), retry {attempt + 1}/{attempts}")

                except requests.exceptions.HTTPError as e:
                    status = e.response.status_code if e.response is not None else None
                    if status in RETRY_STATUSES:
                        logging.warning(f"HTTP {status} error, retry {attempt + 1}/{attempts}")
                    else:
                        logging.error(f"HTTP error (no retry): {e}")
                        raise BackendUnavailable(f"{config.endpoint}: HTTP error {status}") from e

                if attempt + 1 < attempts:
                    sleep(max(0.0, min(delay, deadline - monotonic())))
                    delay *= backoff_factor

            logging.error(f"Request to {config.endpoint} failed after {attempts} attempts.")
            raise BackendUnavailable(f"{config.endpoint} unavailable after {attempts} attempts")

        return wrapper
    return decorator


# --- Session and payloads ---


def create_session(user_agent: str = "sedic-client") -> Session:
    """Shared HTTP session; retries are handled by `retry_api`, not by the adapter."""
    session = Session()
    adapter = HTTPAdapter(pool_connections=4, pool_maxsize=16, max_retries=0)
    session.mount("http://", adapter)
    session.mount("https://", adapter)
    session.headers.update({"User-Agent": user_agent})
    return session


def auth_headers(token_env: str) -> dict[str, str]:
    token = os.getenv(token_env)
    return {"Authorization": f"Bearer {token}"} if token else {}


def elide(value):
    """Copy of a JSON-like value with long strings (base64 images, arrays) replaced by a marker."""
    if isinstance(value, dict):
        return {key: elide(item) for key, item in value.items()}
    if isinstance(value, list):
        return [elide(item) for item in value]
    if isinstance(value, str) and len(value) > ELIDE_ABOVE:
        return f"<elided {len(value)} chars>"
    return value


def safe_requests_post(session: Session, url: str, payload: dict, headers: dict, timeout: float) -> dict:
    """
    POSTs a JSON body and returns the decoded JSON answer.

    Raises:
        requests.exceptions.HTTPError: On error statuses (handled by `retry_api`).
        MalformedResponse: If the body is not JSON.
    """
    logging.debug(f"POST {url} {json.dumps(elide(payload))}")
    response = session.post(url, json=payload, headers=headers, timeout=timeout)
    response.raise_for_status()
    try:
        body = response.json()
    except ValueError as e:
        raise MalformedResponse(f"{url} answered with a non-JSON body") from e
    logging.debug(f"Response {url} {json.dumps(elide(body))}")
    return body


def image_to_b64(image: Image) -> str:
    return base64.b64encode(image_to_png_bytes(image)).decode("ascii")


def array_to_json(array: np.ndarray) -> dict:
    """Encodes an array as {shape, data_b64} with float64 little-endian samples."""
    array = np.ascontiguousarray(array, dtype="<f8")
    return {"shape": list(array.shape), "data_b64": base64.b64encode(array.tobytes()).decode("ascii")}


def array_from_json(value) -> np.ndarray:
    """
    Inverse of `array_to_json`.

    Raises:
        MalformedResponse: If the value is not a well-formed encoded array.
    """
    try:
        shape = tuple(int(n) for n in value["shape"])
        data = base64.b64decode(value["data_b64"], validate=True)
        array = np.frombuffer(data, dtype="<f8").reshape(shape)
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedResponse(f"malformed array in response: {e}") from e
    if not np.all(np.isfinite(array)):
        raise MalformedResponse("array in response contains non-finite values")
    return array.astype(np.float64)
