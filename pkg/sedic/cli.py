import json
from contextlib import contextmanager

import typer
from dotenv import load_dotenv

from sedic import run_decoding, run_encoding, run_inspection, run_selftest
from sedic.api.backends import create_backends
from sedic.errors import (
    BackendError,
    BudgetInfeasible,
    ContainerError,
    CorruptPayload,
    MaskCodecError,
    TextCodecError,
    Truncated,
    UnknownCodec,
)
from sedic.processing.decode_image import DecodeConfig
from sedic.processing.encode_image import EncodeOptions, run_batch_encoding
from sedic.processing.inspect_container import format_inspection, inspection_to_dict
from sedic.processing.selftest import first_failure
from sedic.utils.config import apply_overrides, load_config


load_dotenv()

__version__ = "0.1.0"

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_BUDGET = 2
EXIT_BACKEND = 3
EXIT_PARSE = 4
EXIT_SELFTEST = 5

PARSE_ERRORS = (ContainerError, TextCodecError, MaskCodecError, CorruptPayload, UnknownCodec)

app = typer.Typer(help="SEDIC CLI - Encode images into ultra-low bitrate semantic containers and decode them back.")


def version_callback(value: bool):
    """Show the application's version and exit."""
    if value:
        typer.echo(f"SEDIC version: {__version__}")
        raise typer.Exit()


@app.callback()
def main(
    ctx: typer.Context,
    version: bool = typer.Option(
        False, "--version", callback=version_callback, is_eager=True,
        help="Show the application's version."
    )
):
    """Common CLI callback."""
    pass


def exit_code_for(error: Exception) -> int:
    """
    Exit-code taxonomy: 1 invalid input, 2 infeasible budget, 3 backend failure,
    4 unparsable container, 5 selftest failure.
    """
    if isinstance(error, BudgetInfeasible):
        return EXIT_BUDGET
    if isinstance(error, BackendError):
        return EXIT_BACKEND
    if isinstance(error, PARSE_ERRORS):
        return EXIT_PARSE
    return EXIT_INPUT


def describe_error(error: Exception) -> str:
    message = f"{type(error).__name__}: {error}"
    if isinstance(error, Truncated) and str(error.offset) not in str(error):
        message += f" (offset {error.offset})"
    if isinstance(error, BudgetInfeasible) and error.suggested_target_bpp is not None:
        message += f" [suggested minimum target {error.suggested_target_bpp:.6f} bpp]"
    return message


@contextmanager
def exit_on_error():
    """Maps pipeline errors onto exit codes; diagnostics go to standard error."""
    try:
        yield
    except (typer.Exit, typer.Abort):
        raise
    except (ValueError, OSError, BackendError) as e:
        typer.echo(f"Error: {describe_error(e)}", err=True)
        raise typer.Exit(exit_code_for(e))


@app.command()
def encode(
    input_path: str = typer.Option(..., "-i", "--input", help="Input PNG/PPM image (a folder with --batch)."),
    output_path: str = typer.Option(..., "-o", "--output", help="Output .sdc container (a folder with --batch)."),
    target_bpp: float = typer.Option(None, "--target-bpp", help="Target bits per pixel (default: 0.025)."),
    backend: str = typer.Option(None, "--backend", help="Backend mode: 'mock' or 'http'."),
    config: str = typer.Option(None, "--config", help="TOML configuration file."),
    batch: bool = typer.Option(False, "--batch", help="Encode every image of the input folder."),
    as_json: bool = typer.Option(False, "--json", help="Print the bit report as JSON."),
    report: bool = typer.Option(False, "--report", help="Generate an HTML report."),
):
    """
    Encodes an image into a SEDIC container and writes the JSON bit report next to it.

    Parameters:

        input_path (str): Input image, or input folder with --batch.

        output_path (str): Output container, or output folder with --batch.

        target_bpp (float, optional): Target bits per pixel.

        backend (str, optional): 'mock' (offline) or 'http' (configured endpoints).
    """
    with exit_on_error():
        settings = apply_overrides(load_config(config), mode=backend, target_bpp=target_bpp)
        backends = create_backends(settings.mode, settings.services)
        options = EncodeOptions(
            detection_threshold=settings.encode.detection_threshold, mask_factor=settings.encode.mask_factor
        )
        if batch:
            results = run_batch_encoding(
                input_path, output_path, settings.encode.target_bpp, backends, options, progress=True
            )
            failures = {name: result for name, result in results.items() if isinstance(result, Exception)}
            for name, error in failures.items():
                typer.echo(f"Error: {name}: {describe_error(error)}", err=True)
            typer.echo(f"Batch encoding finished: {len(results) - len(failures)}/{len(results)} image(s) encoded into {output_path}")
            if failures:
                raise typer.Exit(exit_code_for(next(iter(failures.values()))))
            return

        encode_report = run_encoding(input_path, output_path, settings.encode.target_bpp, backends, options, report)
        if as_json:
            typer.echo(json.dumps(encode_report.to_dict(), indent=2))
        else:
            typer.echo(
                f"Encoding finished: {encode_report.final_bpp:.6f} bpp ({encode_report.total_bits} bits, "
                f"J={encode_report.n_objects}). Output saved at {output_path}"
            )


@app.command()
def decode(
    input_path: str = typer.Option(..., "-i", "--input", help="Input .sdc container."),
    output_path: str = typer.Option(..., "-o", "--output", help="Output PNG image."),
    backend: str = typer.Option(None, "--backend", help="Backend mode: 'mock' or 'http'."),
    config: str = typer.Option(None, "--config", help="TOML configuration file."),
    seed: int = typer.Option(None, "--seed", help="Seed of the initial latents."),
    steps: int = typer.Option(None, "--steps", help="Denoising steps T (default: 50)."),
    guidance_threshold: int = typer.Option(None, "--guidance-threshold", help="Guidance runs at t > T' (default: T // 2)."),
    eta: float = typer.Option(None, "--eta", help="Guidance step size (default: 1.0)."),
    trace: str = typer.Option(None, "--trace", help="Folder receiving stage images and energies."),
    report: bool = typer.Option(False, "--report", help="Generate an HTML report."),
):
    """
    Decodes a SEDIC container into a PNG image, one stage per object then one overall stage.

    Parameters:

        input_path (str): Input container.

        output_path (str): Output PNG.

        trace (str, optional): Folder for stage_XX.png, energies.json and trace.json.
    """
    with exit_on_error():
        settings = apply_overrides(
            load_config(config), mode=backend, seed=seed, steps=steps, guidance_threshold=guidance_threshold, eta=eta
        )
        backends = create_backends(settings.mode, settings.services)
        decode_config = DecodeConfig(
            T=settings.decode.steps,
            t_threshold=settings.decode.guidance_threshold,
            eta=settings.decode.eta,
            seed=settings.decode.seed,
            token_index=settings.decode.token_index,
            progress=True,
        )
        decode_trace = run_decoding(input_path, output_path, decode_config, backends, trace, report)
        typer.echo(f"Decoding finished in {decode_trace.n_stages} stage(s). Output saved at {output_path}")


@app.command()
def inspect(
    input_path: str = typer.Option(..., "-i", "--input", help="Input .sdc container."),
    as_json: bool = typer.Option(False, "--json", help="Print the inspection as JSON."),
):
    """Prints the section table, per-component bpp breakdown and totals of a container."""
    with exit_on_error():
        info = run_inspection(input_path)
        if as_json:
            typer.echo(json.dumps(inspection_to_dict(info), indent=2))
        else:
            typer.echo(format_inspection(info))


@app.command()
def selftest(
    suite: list[str] = typer.Option(None, "--suite", help="Suite to run (repeatable): container, text, mask, ref, guidance, policy."),
):
    """Runs the property suites; exits 5 naming the first failing property."""
    with exit_on_error():
        results = run_selftest(suite or None)
    suites = dict.fromkeys(result.suite for result in results)
    for name in suites:
        suite_results = [result for result in results if result.suite == name]
        passed = sum(result.passed for result in suite_results)
        typer.echo(f"{name}: {passed}/{len(suite_results)} properties passed")
    failure = first_failure(results)
    if failure is not None:
        typer.echo(f"Error: property '{failure.name}' of suite '{failure.suite}' failed: {failure.message}", err=True)
        raise typer.Exit(EXIT_SELFTEST)
    typer.echo("All selftest suites passed.")


if __name__ == "__main__":
    app()
