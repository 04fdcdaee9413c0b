"""Report directory layout and table rendering.

Text outputs round every number to 6 significant digits; ``report.json``
keeps full precision and is the only input ``render`` needs.  Each CSV
starts with one ``# provenance: {...}`` comment line.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from pathlib import Path

import numpy as np

from .audit import TESTS, AuditReport, AuditRow

REPORT_FILES = ("report.json", "report.csv", "rows.csv", "plot_fidelity.csv",
                "plot_mmd_fidelity.csv", "report.md")

REPORT_CSV_COLUMNS = ("n", "test", "instances", "reject_count", "fail_count",
                      "reject_fraction", "mmd_mean", "mmd_std", "scaled_mean", "scaled_std",
                      "threshold", "pearson_mmd_fidelity", "fidelity_mean", "fidelity_std")
ROWS_CSV_COLUMNS = ("instance_id", "n", "data_mmd_b", "data_scaled_stat", "data_threshold",
                    "data_reject", "label_mmd_b", "label_scaled_stat", "label_threshold",
                    "label_reject", "fidelity", "f_y_at_x", "g_y_at_x", "loss")
PLOT_FIDELITY_COLUMNS = ("n", "fidelity_mean", "fidelity_std")
PLOT_MMD_FIDELITY_COLUMNS = ("instance_id", "n", "data_mmd_b", "label_mmd_b", "fidelity")

TEST_TITLES = {
    "data": "Data shift: H0: P_reference = P_Z",
    "label": "Label shift: H0: P_F(reference) = P_F(Z)",
}


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.6g}"


def table_row(n, reject, fail, mean, std) -> str:
    total = reject + fail
    return (f"| {n} | {reject} ({fmt(100.0 * reject / total)}%) | "
            f"{fail} ({fmt(100.0 * fail / total)}%) | {fmt(mean)} ± {fmt(std)} |")


def _csv_text(columns, records, provenance) -> str:
    buf = io.StringIO()
    buf.write("# provenance: " + json.dumps(provenance, sort_keys=True,
                                            separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for rec in records:
        w.writerow([fmt(rec[c]) for c in columns])
    return buf.getvalue()


def report_csv(report: AuditReport) -> str:
    records = []
    for agg in report.aggregates:
        for name in TESTS:
            t = agg[name]
            records.append({"n": agg["n"], "test": name, "instances": agg["instances"],
                            "fidelity_mean": agg["fidelity_mean"],
                            "fidelity_std": agg["fidelity_std"],
                            **{k: t[k] for k in REPORT_CSV_COLUMNS if k in t}})
    return _csv_text(REPORT_CSV_COLUMNS, records, report.provenance)


def _row_record(r: AuditRow) -> dict:
    return {"instance_id": r.instance_id, "n": r.n,
            "data_mmd_b": r.data_shift.mmd_b, "data_scaled_stat": r.data_shift.scaled_stat,
            "data_threshold": r.data_shift.threshold, "data_reject": r.data_shift.reject,
            "label_mmd_b": r.label_shift.mmd_b, "label_scaled_stat": r.label_shift.scaled_stat,
            "label_threshold": r.label_shift.threshold, "label_reject": r.label_shift.reject,
            "fidelity": r.fidelity, "f_y_at_x": r.f_y_at_x, "g_y_at_x": r.g_y_at_x,
            "loss": r.loss}


def rows_csv(rows, provenance) -> str:
    return _csv_text(ROWS_CSV_COLUMNS, [_row_record(r) for r in rows], provenance)


def plot_fidelity_csv(report: AuditReport) -> str:
    return _csv_text(PLOT_FIDELITY_COLUMNS, report.aggregates, report.provenance)


def plot_mmd_fidelity_csv(report: AuditReport) -> str:
    records = [{"instance_id": r.instance_id, "n": r.n, "data_mmd_b": r.data_shift.mmd_b,
                "label_mmd_b": r.label_shift.mmd_b, "fidelity": r.fidelity}
               for r in report.rows]
    return _csv_text(PLOT_MMD_FIDELITY_COLUMNS, records, report.provenance)


def report_md(report: AuditReport) -> str:
    prov = report.provenance
    alpha = prov.get("config", {}).get("alpha")
    lines = ["# Shift and fidelity audit", ""]
    for name in TESTS:
        lines += [f"## {TEST_TITLES[name]} (alpha={fmt(alpha)})", "",
                  "| n | Reject | Failed to reject | MMD |", "|---|---|---|---|"]
        for agg in report.aggregates:
            t = agg[name]
            lines.append(table_row(agg["n"], t["reject_count"], t["fail_count"],
                                   t["mmd_mean"], t["mmd_std"]))
        lines.append("")
    # MMD_b > t  is the same decision as  m * MMD_b^2 > m * t^2
    lines += ["## Scaled statistic m * MMD^2", "",
              "| n | Data shift | Label shift | Reject above m * t^2 |", "|---|---|---|---|"]
    for agg in report.aggregates:
        d, lb = agg["data"], agg["label"]
        lines.append(f"| {agg['n']} | {fmt(d['scaled_mean'])} ± {fmt(d['scaled_std'])} | "
                     f"{fmt(lb['scaled_mean'])} ± {fmt(lb['scaled_std'])} | "
                     f"{fmt(agg['n'] * d['threshold'] ** 2)} |")
    lines += ["", "## Fidelity and its correlation with MMD", "",
              "| n | Fidelity | Pearson (data MMD) | Pearson (label MMD) |", "|---|---|---|---|"]
    for agg in report.aggregates:
        pd_, pl = agg["data"]["pearson_mmd_fidelity"], agg["label"]["pearson_mmd_fidelity"]
        lines.append(f"| {agg['n']} | {fmt(agg['fidelity_mean'])} ± {fmt(agg['fidelity_std'])} | "
                     f"{fmt(pd_) or 'n/a'} | {fmt(pl) or 'n/a'} |")
    lines += ["", "## Provenance", "", "```json",
              json.dumps(prov, indent=1, sort_keys=True), "```", ""]
    return "\n".join(lines)


def render(report: AuditReport, fmt_name: str) -> str:
    if fmt_name == "md":
        return report_md(report)
    if fmt_name == "csv":
        return report_csv(report)
    if fmt_name == "json":
        return report.dumps()
    raise ValueError(f"unknown format {fmt_name!r}")


def _write(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_report_dir(report: AuditReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "report.json", report.dumps())
    _write(out / "report.csv", report_csv(report))
    _write(out / "rows.csv", rows_csv(report.rows, report.provenance))
    _write(out / "plot_fidelity.csv", plot_fidelity_csv(report))
    _write(out / "plot_mmd_fidelity.csv", plot_mmd_fidelity_csv(report))
    _write(out / "report.md", report_md(report))
    manifest = {"provenance": report.provenance,
                "files": {name: _sha256(out / name) for name in REPORT_FILES}}
    _write(out / "MANIFEST.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def write_partial(out_dir, rows, failures, provenance) -> Path:
    """Dump completed rows and the failure list after an aborted audit."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "rows_partial.csv", rows_csv(rows, provenance))
    errors = [{"instance_id": i, "n": n, "error": msg} for i, n, msg in failures]
    _write(out / "errors.json", json.dumps({"provenance": provenance, "failures": errors},
                                           indent=1, sort_keys=True) + "\n")
    return out


def load_report(in_dir) -> AuditReport:
    path = os.path.join(in_dir, "report.json")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return AuditReport.from_json(json.loads(text))
