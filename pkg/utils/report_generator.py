"""
Report Generation Module
Handles text, CSV and PDF summaries of evaluation, Reflexion and agreement runs
"""

import io
import json
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import pandas as pd

from utils.errors import EmptyInput, MismatchedPolicySets
from utils.judges import RewardSequence
from utils.metrics import kendall_tau, relative_improvement
from utils.result_store import ResultStore, load_oracle, load_ranking

# PDF output is optional; text and CSV summaries only need pandas
try:
    from reportlab.lib import colors
    from reportlab.lib.pagesizes import A4
    from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
    from reportlab.lib.units import inch
    from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle
    REPORTLAB_AVAILABLE = True
except ImportError:
    REPORTLAB_AVAILABLE = False

logger = logging.getLogger(__name__)

HEADLINE_COLOR = "#2b5d7e"
SECTION_COLOR = "#4a4a4a"
BAND_COLOR = "#eef2f5"


class ReportGenerator:
    """Summaries of run directories"""

    def __init__(self):
        self.styles = self._create_styles()

    def _create_styles(self):
        """Paragraph styles keyed by the part of a run report they render"""

        if not REPORTLAB_AVAILABLE:
            return {}
        base = getSampleStyleSheet()
        return {
            'run_title': ParagraphStyle('run_title', parent=base['Title'], fontSize=16, leading=20,
                                        alignment=0, spaceAfter=6, textColor=colors.HexColor(HEADLINE_COLOR)),
            'section': ParagraphStyle('section', parent=base['Heading3'], fontSize=11, spaceBefore=10,
                                      spaceAfter=4, textColor=colors.HexColor(SECTION_COLOR)),
            'empty_table': ParagraphStyle('empty_table', parent=base['Italic'], fontSize=8,
                                          textColor=colors.grey),
            # Task ids and digests are long; wrap them in a fixed-width face
            'id_cell': ParagraphStyle('id_cell', parent=base['Code'], fontSize=7, leading=8.5,
                                      leftIndent=0, spaceBefore=0, spaceAfter=0),
        }

    # ===== Tables =====

    def evaluation_table(self, reward_payloads: Dict[str, Dict[str, Any]]) -> pd.DataFrame:
        """
        One row per evaluated task

        Args:
            reward_payloads: task_id -> rewards payload

        Returns:
            DataFrame with task_id, policy_id, granularity, steps, total_reward, judged_success
        """

        rows = []
        for task_id, payload in reward_payloads.items():
            rewards = RewardSequence.from_payload(payload)
            rows.append({
                "task_id": task_id,
                "policy_id": payload.get("policy_id", "unknown"),
                "granularity": rewards.granularity.value,
                "steps": len(rewards),
                "total_reward": round(sum(rewards.values), 6),
                "judged_success": rewards.judged_success,
            })
        columns = ["task_id", "policy_id", "granularity", "steps", "total_reward", "judged_success"]
        return pd.DataFrame(rows, columns=columns)

    def policy_table(self, evaluation: pd.DataFrame) -> pd.DataFrame:
        """Judged success rate per policy, best first"""

        if evaluation.empty:
            return pd.DataFrame(columns=["policy_id", "tasks", "success_rate"])
        grouped = evaluation.groupby("policy_id")["judged_success"].agg(["count", "mean"]).reset_index()
        grouped.columns = ["policy_id", "tasks", "success_rate"]
        grouped["success_rate"] = grouped["success_rate"].astype(float).round(6)
        return grouped.sort_values(["success_rate", "policy_id"], ascending=[False, True]).reset_index(drop=True)

    def reflexion_table(self, outcomes: Sequence[Dict[str, Any]], max_rounds: int) -> pd.DataFrame:
        """
        Per-round Reflexion summary

        success_rate at round k is the oracle success (judged when no oracle exists)
        of the trajectory each episode would end with if cut off after round k.
        False positives and false negatives count judged-vs-oracle disagreements
        among the episodes that actually ran round k.

        Args:
            outcomes: ReflexionOutcome records
            max_rounds: Round budget of the run

        Returns:
            DataFrame with round, episodes, success_rate, judged_success_rate, false_positives, false_negatives
        """

        rows = []
        completed = [o for o in outcomes if o["per_round"]]
        for k in range(max_rounds + 1):
            successes = judged = fp = fn = ran = 0
            for o in completed:
                rounds = o["per_round"]
                last = rounds[min(k, len(rounds) - 1)]
                is_judged = last["verdict"] == "success"
                truth = last["oracle_success"] if last["oracle_success"] is not None else is_judged
                successes += int(truth)
                judged += int(is_judged)
                if k < len(rounds):
                    ran += 1
                    if last["oracle_success"] is not None:
                        fp += int(is_judged and not last["oracle_success"])
                        fn += int(not is_judged and last["oracle_success"])
            n = len(completed)
            rows.append({
                "round": k,
                "episodes": ran,
                "success_rate": round(successes / n, 6) if n else 0.0,
                "judged_success_rate": round(judged / n, 6) if n else 0.0,
                "false_positives": fp,
                "false_negatives": fn,
            })
        return pd.DataFrame(rows, columns=["round", "episodes", "success_rate", "judged_success_rate",
                                           "false_positives", "false_negatives"])

    def confusion_table(self, agreement_payload: Dict[str, Any]) -> pd.DataFrame:
        """2x2 confusion matrix, rows are the oracle, columns the evaluator"""

        c = agreement_payload["confusion"]
        return pd.DataFrame(
            [[c["tp"], c["fn"]], [c["fp"], c["tn"]]],
            index=pd.Index(["oracle_success", "oracle_failure"], name="oracle"),
            columns=["judged_success", "judged_failure"],
        )

    # ===== Run summaries =====

    def summarize_run(self, store: ResultStore) -> Tuple[str, Dict[str, Any], Dict[str, pd.DataFrame]]:
        """
        Title, headline figures and tables of a run directory

        Everything is read back from the run's files, so reports of the same
        run are identical no matter when they are generated.
        """

        manifest = store.load_manifest()
        command = manifest.command
        title = f"agent-judge {command} run {manifest.run_id}"

        if command == "evaluate":
            rewards = {r.task_id: r.payload for r in store.iter_results("rewards")}
            evaluation = self.evaluation_table(rewards)
            headline = {
                "tasks": len(rewards) + store.error_count(),
                "errors": store.error_count(),
                "judged_success_rate": float(evaluation["judged_success"].mean()) if len(evaluation) else 0.0,
            }
            return title, headline, {"Per-policy judged success": self.policy_table(evaluation),
                                     "Per-task rewards": evaluation}

        if command == "reflexion":
            outcomes = [r.payload for r in store.iter_results("reflexion")]
            table = self.reflexion_table(outcomes, int(manifest.parameters.get("max_rounds", 0)))
            rates = success_by_round(table)
            headline = {
                "episodes": len(outcomes),
                "aborted": sum(1 for o in outcomes if o.get("aborted")),
                "success_round_0": rates[0] if rates else 0.0,
                "success_final": rates[-1] if rates else 0.0,
            }
            if rates and rates[0] > 0:
                headline["relative_improvement"] = relative_improvement(rates[0], rates[-1])
            return title, headline, {"Success by round": table}

        if command == "filter-bc":
            batches = [(r.task_id, len(r.payload.get("samples", []))) for r in store.iter_results("bc_batch")]
            table = pd.DataFrame(batches, columns=["task_id", "samples"])
            headline = {
                "trajectories": len(batches),
                "samples": int(table["samples"].sum()) if len(table) else 0,
                "threshold": manifest.parameters.get("threshold"),
            }
            return title, headline, {"Samples per trajectory": table}

        if command == "metrics":
            headline: Dict[str, Any] = {}
            tables: Dict[str, pd.DataFrame] = {}
            for record in store.iter_results("agreement"):
                headline.update({"accuracy": record.payload["accuracy"], "n": record.payload["n"]})
                tables["Confusion matrix"] = self.confusion_table(record.payload)
            tau = self.ranking_tau(store)
            if tau is not None:
                headline["kendall_tau"] = tau
            return title, headline, tables

        # sandbox-gen
        oracle = load_oracle(store.run_dir / "oracle.jsonl")
        table = pd.DataFrame(
            [{"task_id": r.task_id, "policy_id": r.policy_id, "judged_success": r.oracle_success}
             for r in oracle.values()],
            columns=["task_id", "policy_id", "judged_success"],
        )
        headline = {
            "tasks": len(oracle),
            "oracle_success_rate": float(table["judged_success"].mean()) if len(table) else 0.0,
        }
        policies = self.policy_table(table).rename(columns={"success_rate": "oracle_success_rate"})
        return title, headline, {"Per-policy oracle success": policies}

    @staticmethod
    def ranking_tau(store: ResultStore) -> Optional[float]:
        """Kendall tau between the run's evaluator and oracle rankings, when both exist"""

        evaluator_path = store.run_dir / "rankings" / "evaluator.json"
        oracle_path = store.run_dir / "rankings" / "oracle.json"
        if not (evaluator_path.exists() and oracle_path.exists()):
            return None
        try:
            return kendall_tau(load_ranking(evaluator_path), load_ranking(oracle_path))
        except (EmptyInput, MismatchedPolicySets) as e:
            logger.warning(f"⚠️ No rank correlation: {e}")
            return None

    # ===== Exports =====

    def generate_csv_export(self, table: pd.DataFrame, index: bool = False) -> str:
        buffer = io.StringIO()
        table.to_csv(buffer, index=index, lineterminator="\n")
        return buffer.getvalue()

    def summary_document(self, title: str, headline: Dict[str, Any],
                         tables: Dict[str, pd.DataFrame]) -> Dict[str, Any]:
        """JSON-ready summary; tables become lists of row objects"""

        return {
            "title": title,
            "headline": headline,
            "tables": {
                name: json.loads((table.reset_index() if table.index.name else table).to_json(orient="records"))
                for name, table in tables.items()
            },
        }

    def render_table(self, table: pd.DataFrame, index: bool = False) -> str:
        """Aligned plain-text rendering"""
        if table.empty:
            return "(no rows)"
        return table.to_string(index=index)

    def generate_text_summary(self, title: str, headline: Dict[str, Any],
                              tables: Optional[Dict[str, pd.DataFrame]] = None) -> str:
        """
        Plain-text run summary

        Args:
            title: First line
            headline: Key figures, printed in sorted key order
            tables: Named tables appended below the headline

        Returns:
            The summary text
        """

        lines = [title, "=" * len(title)]
        width = max((len(k) for k in headline), default=0)
        for key in sorted(headline):
            value = headline[key]
            if isinstance(value, float):
                value = f"{value:.4f}"
            lines.append(f"{key.ljust(width)} : {value}")
        for name, table in (tables or {}).items():
            lines.extend(["", name, "-" * len(name), self.render_table(table, index=table.index.name is not None)])
        return "\n".join(lines) + "\n"

    def generate_pdf_report(self, title: str, headline: Dict[str, Any],
                            tables: Optional[Dict[str, pd.DataFrame]] = None) -> Optional[bytes]:
        """
        PDF version of the text summary

        Returns:
            PDF bytes, or None without reportlab
        """

        if not REPORTLAB_AVAILABLE:
            logger.warning("⚠️ reportlab is not installed; skipping the PDF report")
            return None

        buffer = io.BytesIO()
        doc = SimpleDocTemplate(buffer, pagesize=A4, topMargin=0.5 * inch, invariant=1,
                                title=title)
        story = [Paragraph(escape(title), self.styles['run_title'])]

        headline_rows = [['Figure', 'Value']]
        headline_rows.extend([key, self._cell(headline[key])] for key in sorted(headline))
        headline_table = Table(headline_rows, colWidths=[2.5 * inch, 1.5 * inch], hAlign='LEFT')
        headline_table.setStyle(self._table_style(HEADLINE_COLOR, headline_rows))
        story.extend([headline_table, Spacer(1, 8)])

        for name, table in (tables or {}).items():
            story.append(Paragraph(escape(name), self.styles['section']))
            if table.empty:
                story.append(Paragraph("No rows.", self.styles['empty_table']))
                continue
            frame = table.reset_index() if table.index.name else table
            rows = [list(map(str, frame.columns))]
            for row in frame.itertuples(index=False):
                cells = [self._cell(v) for v in row]
                # first column holds the task, policy or round id
                cells[0] = Paragraph(escape(cells[0]), self.styles['id_cell'])
                rows.append(cells)
            pdf_table = Table(rows, repeatRows=1, hAlign='LEFT')
            pdf_table.setStyle(self._table_style(SECTION_COLOR, rows))
            story.extend([pdf_table, Spacer(1, 8)])

        doc.build(story)
        return buffer.getvalue()

    @staticmethod
    def _cell(value) -> str:
        if isinstance(value, float):
            return f"{value:.4f}"
        return str(value)

    @staticmethod
    def _table_style(header_color: str, rows: Sequence[Sequence[Any]]) -> "TableStyle":
        """Banded rows; numeric columns right-aligned"""

        commands = [
            ('BACKGROUND', (0, 0), (-1, 0), colors.HexColor(header_color)),
            ('TEXTCOLOR', (0, 0), (-1, 0), colors.white),
            ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
            ('FONTSIZE', (0, 0), (-1, -1), 8),
            ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
            ('LINEBELOW', (0, 0), (-1, 0), 0.75, colors.HexColor(header_color)),
            ('LINEBELOW', (0, -1), (-1, -1), 0.5, colors.grey),
            ('ROWBACKGROUNDS', (0, 1), (-1, -1), [colors.white, colors.HexColor(BAND_COLOR)]),
        ]
        for col in range(len(rows[0])):
            body = [r[col] for r in rows[1:]]
            if body and all(isinstance(v, str) and _is_number(v) for v in body):
                commands.append(('ALIGN', (col, 0), (col, -1), 'RIGHT'))
        return TableStyle(commands)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def success_by_round(table: pd.DataFrame) -> List[float]:
    return [float(v) for v in table["success_rate"]]
