"""
Run Report Generator for Agent Judge
Writes a PDF and a plain-text summary of a finished run directory
"""

import argparse
import os
import sys
from pathlib import Path
from typing import Optional

from utils.errors import AgentJudgeError
from utils.report_generator import ReportGenerator
from utils.result_store import open_run


def generate_run_report(run_dir: str, output_filename: Optional[str] = None) -> Optional[str]:
    """
    Generate the PDF report of a run

    Args:
        run_dir: Finished run directory (holds manifest.json)
        output_filename: PDF path; defaults to <run_dir>/report.pdf

    Returns:
        Path of the PDF, or None when reportlab is unavailable
    """

    store = open_run(run_dir)
    reporter = ReportGenerator()
    title, headline, tables = reporter.summarize_run(store)

    store.write_text("report.txt", reporter.generate_text_summary(title, headline, tables))
    for name, table in tables.items():
        slug = name.lower().replace(" ", "_").replace("-", "_")
        store.write_text(f"report_{slug}.csv", reporter.generate_csv_export(table, index=table.index.name is not None))

    pdf = reporter.generate_pdf_report(title, headline, tables)
    if pdf is None:
        return None
    output = Path(output_filename) if output_filename else Path(run_dir) / "report.pdf"
    output.write_bytes(pdf)
    print(f"✅ Report generated successfully: {output}")
    return str(output)


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="PDF summary of an agent-judge run")
    parser.add_argument("run_dir")
    parser.add_argument("--output")
    args = parser.parse_args()
    try:
        output_file = generate_run_report(args.run_dir, args.output)
    except AgentJudgeError as e:
        print(f"❌ {e}")
        sys.exit(2)
    if output_file:
        print(f"\n📄 PDF Report Location: {os.path.abspath(output_file)}")
        print(f"📊 File Size: {os.path.getsize(output_file) / 1024:.2f} KB")
