from sedic import run_encoding, run_decoding, run_inspection, run_selftest
from sedic.machine_learning.mock_models import synthetic_photo
from sedic.processing.decode_image import DecodeConfig
from sedic.utils.image_io import write_image


if __name__ == "__main__":
    # Fixture image
    write_image(synthetic_photo(768, 512), "output/photo.png")

    # Selftest
    run_selftest(["container", "text", "mask", "policy"])

    # Encoding
    run_encoding(
        input_path="output/photo.png",
        output_path="output/photo.sdc",
        target_bpp=0.045,
        report=True
    )

    # Inspection
    run_inspection(input_path="output/photo.sdc")

    # Decoding
    run_decoding(
        input_path="output/photo.sdc",
        output_path="output/photo_restored.png",
        config=DecodeConfig(T=50, eta=1.0, seed=0),
        trace_folder="output/trace",
        report=True
    )
