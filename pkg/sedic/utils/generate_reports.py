import base64
import datetime
import html as html_lib
import logging
import os
from io import BytesIO

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import plotly.express as px
from matplotlib.ticker import MaxNLocator

from .image_io import image_to_png_bytes


def fig_to_base64(fig) -> str:
    """Renders a matplotlib figure into an inline <img>."""
    buf = BytesIO()
    fig.savefig(buf, format="png", bbox_inches="tight")
    buf.seek(0)
    encoded = base64.b64encode(buf.read()).decode("utf-8")
    plt.close(fig)
    return f'<div class="plot-container"><img src="data:image/png;base64,{encoded}"></div>'


def image_to_base64(image, caption: str) -> str:
    encoded = base64.b64encode(image_to_png_bytes(image)).decode("utf-8")
    return (
        f'<figure><img src="data:image/png;base64,{encoded}" alt="{caption}">'
        f"<figcaption>{caption}</figcaption></figure>"
    )


def _page(title: str, body: str) -> str:
    generated_time = datetime.datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    return f"""
    <!DOCTYPE html>
    <html lang="en">
    <head>
        <meta charset="UTF-8">
        <meta name="viewport" content="width=device-width, initial-scale=1.0">
        <title>{title}</title>
        {report_style()}
    </head>
    <body>
        <header>
            <div class="overlay">
                <h1>{title}</h1>
                <p>Generated on {generated_time}</p>
            </div>
        </header>
        <div class="container">
            {body}
        </div>
        <footer>SEDIC</footer>
    </body>
    </html>
    """


def _save(html: str, output_folder: str, name: str) -> str:
    os.makedirs(os.path.join(output_folder, "reports"), exist_ok=True)
    report_path = os.path.join(output_folder, "reports", name)
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(html)
    logging.info(f"HTML report saved to '{report_path}'")
    return report_path


def _stat(value, label: str) -> str:
    return f'<div class="stat-box"><h3>{value}</h3><p>{label}</p></div>'


def report_encoding(report, output_folder: str) -> str:
    """
    Generates an HTML report of an encoding: bit breakdown, rate policy and object outcome.

    Parameters:
        report (EncodeReport): Report returned by the encoder.
        output_folder (str): Folder receiving 'reports/encode_report.html'.

    Returns:
        str: Path of the saved report.
    """
    pie_data = {
        "Reference": report.reference_bits,
        "Overall text": report.overall_text_bits,
        "Object text": sum(report.object_text_bits),
        "Object masks": sum(report.object_mask_bits),
        "Overhead": report.overhead_bits,
    }
    pie_data = {k: v for k, v in pie_data.items() if v > 0}

    fig = px.pie(
        names=list(pie_data.keys()),
        values=list(pie_data.values()),
        color_discrete_sequence=["#2980b9", "#55bb55", "#ee9944", "#cc4455", "#999999"],
    )
    fig.update_traces(textinfo="percent+label", textfont_size=16)
    fig.update_layout(title="", showlegend=True)
    pie_chart_html = fig.to_html(full_html=False, include_plotlyjs="cdn")

    rows = "".join(
        f"<tr><td>{i}</td><td>{html_lib.escape(name)}</td><td>{text}</td><td>{mask}</td></tr>"
        for i, (name, text, mask) in enumerate(
            zip(report.encoded_objects, report.object_text_bits, report.object_mask_bits)
        )
    )
    dropped = ", ".join(html_lib.escape(name) for name in report.dropped_objects) or "none"
    skipped = ", ".join(html_lib.escape(name) for name in report.skipped_objects) or "none"
    policy = report.policy

    body = f"""
            <div class="card">
                <h2>Overview</h2>
                <div class="stats-grid">
                    {_stat(f"{report.width}x{report.height}", "Image size")}
                    {_stat(f"{report.target_bpp:.4f}", "Target bpp")}
                    {_stat(f"{report.final_bpp:.4f}", "Achieved bpp")}
                    {_stat(report.total_bits, "Total bits")}
                    {_stat(report.quality if report.quality is not None else "-", "Reference quality q")}
                </div>
            </div>
            <div class="card">
                <h2>Bit Allocation</h2>
                {pie_chart_html}
            </div>
            <div class="card">
                <h2>Rate Policy</h2>
                <div class="stats-grid">
                    {_stat(policy.J, "Objects J")}
                    {_stat(policy.l_d, "Detail words l<sub>d</sub>")}
                    {_stat(policy.l_all, "Overall words l<sub>all</sub>")}
                    {_stat(policy.l_n, "Name words l<sub>n</sub>")}
                </div>
            </div>
            <div class="card">
                <h2>Objects</h2>
                <table>
                    <tr><th>Stage</th><th>Name (not transmitted)</th><th>Text bits</th><th>Mask bits</th></tr>
                    {rows}
                </table>
                <p>Dropped as hallucinations: {dropped}</p>
                <p>Skipped (empty mask): {skipped}</p>
            </div>
    """
    return _save(_page("SEDIC Encoding Report", body), output_folder, "encode_report.html")


def report_decoding(trace, output_folder: str) -> str:
    """
    Generates an HTML report of a decoding: per-stage images, energy curves and timings.

    Parameters:
        trace (DecodeTrace): Trace returned by the decoder.
        output_folder (str): Folder receiving 'reports/decode_report.html'.

    Returns:
        str: Path of the saved report.
    """
    energies = trace.energy_frame()
    energy_html = "<p>No guided steps were run.</p>"
    if not energies.empty:
        fig, ax = plt.subplots(figsize=(12, 5))
        for stage, group in energies.groupby("stage"):
            ax.plot(group["t"], group["energy"], marker="o", label=f"Stage {stage}")
        ax.invert_xaxis()
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax.set_xlabel("Timestep t", fontsize=12)
        ax.set_ylabel("Energy", fontsize=12)
        ax.legend(frameon=False)
        ax.spines["top"].set_visible(False)
        ax.spines["right"].set_visible(False)
        ax.grid(True, which="major", axis="y", linestyle="--", linewidth=0.6, alpha=0.4)
        energy_html = fig_to_base64(fig)

    images = "".join(
        image_to_base64(image, f"Stage {index} ({kind})")
        for index, (image, kind) in enumerate(zip(trace.stage_images, trace.stage_kinds))
    )
    rows = "".join(
        f"<tr><td>{index}</td><td>{kind}</td><td>{seconds:.3f}</td></tr>"
        for index, (kind, seconds) in enumerate(zip(trace.stage_kinds, trace.stage_seconds))
    )

    body = f"""
            <div class="card">
                <h2>Overview</h2>
                <div class="stats-grid">
                    {_stat(trace.n_stages, "Stages")}
                    {_stat(sum(trace.guided_steps), "Guided steps")}
                    {_stat(f"{sum(trace.stage_seconds):.2f} s", "Decoding time")}
                </div>
            </div>
            <div class="card">
                <h2>Progression</h2>
                <div class="img-section">{images}</div>
            </div>
            <div class="card">
                <h2>Guidance Energy</h2>
                {energy_html}
            </div>
            <div class="card">
                <h2>Stage Timings</h2>
                <table>
                    <tr><th>Stage</th><th>Kind</th><th>Seconds</th></tr>
                    {rows}
                </table>
            </div>
    """
    return _save(_page("SEDIC Decoding Report", body), output_folder, "decode_report.html")


def report_style():
    """Return CSS script for report style."""
    return """
    <style>
        body {
            font-family: 'Segoe UI', Tahoma, Geneva, Verdana, sans-serif;
            font-size: 1rem;
            line-height: 1.7;
            background-color: #f4f6f9;
            margin: 0;
            padding: 0;
            color: #333;
        }
        header {
            width: 100%;
            height: 150px;
            display: flex;
            align-items: center;
            justify-content: center;
            color: #fff;
            text-align: center;
            background-color: #2980b9;
        }
        header h1 {
            margin: 0;
            font-size: 2.5rem;
            font-weight: bold;
        }
        header p {
            margin: 8px 0 0;
            font-size: 1.1rem;
        }
        .container {
            max-width: 1100px;
            margin: 30px auto;
            padding: 20px;
        }
        .card {
            background: #fff;
            border-radius: 12px;
            padding: 20px;
            margin-bottom: 20px;
            box-shadow: 0 2px 8px rgba(0,0,0,0.05);
        }
        .card h2 {
            margin-top: 0;
            color: #2980b9;
            border-bottom: 2px solid #e6e6e6;
            padding-bottom: 10px;
            font-size: 1.5rem;
        }
        .stats-grid {
            display: grid;
            grid-template-columns: repeat(auto-fit, minmax(180px, 1fr));
            gap: 15px;
            margin-top: 15px;
        }
        .stat-box {
            background: #f9fafc;
            border-radius: 8px;
            padding: 15px;
            text-align: center;
            border: 1px solid #e2e2e2;
        }
        table {
            width: 100%;
            border-collapse: collapse;
            margin-top: 20px;
            font-size: 0.95rem;
        }
        table th, table td {
            border: 1px solid #ddd;
            padding: 10px;
            text-align: left;
        }
        table th {
            background-color: #2980b9;
            color: #fff;
        }
        table tr:nth-child(even) {
            background-color: #f2f2f2;
        }
        .img-section {
            display: flex;
            flex-wrap: wrap;
            gap: 20px;
            justify-content: center;
        }
        .img-section img {
            max-width: 320px;
        }
        figure {
            margin: 0;
            text-align: center;
        }
        .plot-container img {
            max-width: 100%;
        }
        footer {
            text-align: center;
            font-size: 0.9rem;
            color: #777;
            padding: 15px;
            border-top: 1px solid #ddd;
        }
    </style>
    """
