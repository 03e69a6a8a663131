import io
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from utils.errors import SchemaError
from utils.harness import REPORT_COLUMNS, EvalReport, ReportCell

logger = logging.getLogger(__name__)

EXPORT_FORMATS = ("csv", "md", "xlsx")


def metadata_path(report_path):
    report_path = Path(report_path)
    return report_path.with_name(report_path.name + ".meta.json")


def write_report(report, path):
    """
    Write the report CSV and its metadata sidecar

    Args:
        report: EvalReport
        path: CSV path; metadata goes to <path>.meta.json

    Returns:
        Path of the CSV file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.to_frame().to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    metadata_path(path).write_text(json.dumps(report.metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Wrote report with %d cells to %s", len(report.cells), path)
    return path


def read_report(path):
    """
    Load a report written by write_report

    Returns:
        EvalReport
    """
    path = Path(path)
    frame = pd.read_csv(path)
    missing = [column for column in REPORT_COLUMNS if column not in frame.columns]
    if missing:
        raise SchemaError(path, "missing report column", field=missing[0])
    cells = [
        ReportCell(
            split=str(row.split),
            method=str(row.method),
            horizon=int(row.horizon),
            fde_mean_px=float(row.fde_mean_px),
            fde_std_px=float(row.fde_std_px),
            windows=int(row.windows),
        )
        for row in frame.itertuples(index=False)
    ]
    sidecar = metadata_path(path)
    metadata = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
    return EvalReport(cells=cells, metadata=metadata)


def export_to_markdown(report):
    """
    Render the report in the method x (split, setting) layout

    Returns:
        Markdown table as a string
    """
    table = report.table()
    header = ["Method"] + [f"{split} {setting} {metric}" for split, setting, metric in table.columns]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join([" --- "] + [" ---: "] * len(table.columns)) + "|",
    ]
    for method, row in table.iterrows():
        values = ["-" if np.isnan(value) else f"{value:.3f}" for value in row.to_numpy()]
        lines.append("| " + " | ".join([str(method)] + values) + " |")
    return "\n".join(lines) + "\n"


def export_to_excel(report):
    """
    Export the report to an Excel workbook

    Args:
        report: EvalReport

    Returns:
        Bytes of the .xlsx file
    """
    output = io.BytesIO()
    with pd.ExcelWriter(output, engine="openpyxl") as writer:
        report.to_frame().to_excel(writer, sheet_name="FDE", index=False)
        report.table().to_excel(writer, sheet_name="Table")
        metadata = pd.DataFrame(
            [(key, json.dumps(value)) for key, value in sorted(report.metadata.items())],
            columns=["key", "value"],
        )
        metadata.to_excel(writer, sheet_name="Metadata", index=False)
    output.seek(0)
    return output.getvalue()


def export_report(report, path, fmt):
    """Write the report in one of EXPORT_FORMATS"""
    if fmt not in EXPORT_FORMATS:
        raise ValueError(f"Unknown export format '{fmt}', expected one of {EXPORT_FORMATS}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        report.to_frame().to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    elif fmt == "md":
        path.write_text(export_to_markdown(report), encoding="utf-8")
    else:
        path.write_bytes(export_to_excel(report))
    return path
