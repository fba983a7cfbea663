import os

import pandas as pd

from ..codecs.container import SemanticContainer, parse, size_report
from ..codecs.mask_codec import MaskEncoding
from ..codecs.text_codec import text_decode


def component_bits(container: SemanticContainer, total_bits: int) -> dict[str, int]:
    """Bits per component; `overhead` (header, section framing, codec id, text lengths) closes the sum."""
    components = {
        "reference": 8 * len(container.reference.data) if container.reference else 0,
        "overall_text": 8 * len(container.overall_text.to_bytes()) if container.overall_text else 0,
        "object_text": sum(8 * len(entry.detail.to_bytes()) for entry in container.objects),
        "object_mask": sum(8 * len(entry.mask.to_bytes()) for entry in container.objects),
    }
    components["overhead"] = total_bits - sum(components.values())
    return components


def _describe(container: SemanticContainer, table: pd.DataFrame) -> list[str]:
    details = []
    for row in table.to_dict(orient="records"):
        if row["section"] == "REFERENCE":
            details.append(f"codec {container.reference.codec_id}")
        elif row["section"] == "OVERALL_TEXT":
            details.append(f"{container.overall_text.decoded_len} text bytes")
        elif row["section"] == "OBJECT":
            entry = container.objects[int(row["index"])]
            encoding = MaskEncoding(entry.mask.encoding).name
            details.append(f"mask {entry.mask.mask_w}x{entry.mask.mask_h} {encoding}, {entry.detail.decoded_len} text bytes")
        else:
            details.append("")
    return details


def inspect_bytes(stream: bytes) -> dict:
    """
    Parses a container and gathers its section table, component breakdown and totals.

    Parameters:
        stream (bytes): Serialized container.

    Returns:
        dict: width, height, flags, n_sections, total_bytes, total_bits, bpp, the
        `sections` table (pd.DataFrame), `components` (bits per component) and the
        decoded overall text.

    Raises:
        ContainerError: If the stream does not parse.
    """
    container = parse(stream)
    table = size_report(container)
    table["detail"] = _describe(container, table)
    total_bits = 8 * len(stream)
    overall = None
    if container.overall_text is not None:
        overall = text_decode(container.overall_text).decode("utf-8", errors="replace")
    return {
        "width": container.width,
        "height": container.height,
        "flags": container.flags,
        "n_sections": container.n_sections,
        "n_objects": len(container.objects),
        "total_bytes": len(stream),
        "total_bits": total_bits,
        "bpp": total_bits / (container.width * container.height),
        "sections": table,
        "components": component_bits(container, total_bits),
        "overall_text": overall,
    }


def inspection_to_dict(info: dict) -> dict:
    """JSON-ready copy of an inspection."""
    data = {key: value for key, value in info.items() if key != "sections"}
    data["sections"] = [
        {
            "section": row["section"],
            "index": None if pd.isna(row["index"]) else int(row["index"]),
            "bytes": int(row["bytes"]),
            "bits": int(row["bits"]),
            "bpp": float(row["bpp"]),
            "share": float(row["share"]),
            "detail": row["detail"],
        }
        for row in info["sections"].to_dict(orient="records")
    ]
    return data


def format_inspection(info: dict) -> str:
    """Human-readable section table, per-component bpp breakdown and totals."""
    area = info["width"] * info["height"]
    table = info["sections"].copy()
    table["bpp"] = table["bpp"].map(lambda value: f"{value:.6f}")
    table["share"] = table["share"].map(lambda value: f"{value:.1%}")
    lines = [
        f"SEDIC container {info['width']}x{info['height']}, {info['n_sections']} section(s), {info['n_objects']} object(s)",
        "",
        table.to_string(index=False, na_rep="-"),
        "",
        "Component breakdown:",
    ]
    for name, bits in info["components"].items():
        lines.append(f"  {name:<14}{bits:>10} bits  {bits / area:.6f} bpp")
    lines.append(f"  {'total':<14}{info['total_bits']:>10} bits  {info['bpp']:.6f} bpp")
    return "\n".join(lines)


def run_inspection(input_path: str) -> dict:
    """
    Inspects a .sdc container file.

    Parameters:
        input_path (str): Container file.

    Returns:
        dict: The inspection (see inspect_bytes).
    """
    if not os.path.isfile(input_path):
        raise FileNotFoundError(f"cannot read container file {input_path}")
    with open(input_path, "rb") as handle:
        return inspect_bytes(handle.read())
