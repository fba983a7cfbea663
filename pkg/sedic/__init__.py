from .processing.encode_image import run_encoding
from .processing.decode_image import run_decoding
from .processing.inspect_container import run_inspection
from .processing.selftest import run_selftest
