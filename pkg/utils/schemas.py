"""
Record Schemas
Pydantic models for every JSONL record and JSON document the toolkit writes or reads
"""

import re
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SHA256_PATTERN = r"^[0-9a-f]{64}$"

DomainLiteral = Literal["web", "android", "ios", "sandbox"]
GranularityLiteral = Literal["trajectory_level", "per_step"]


class _Record(BaseModel):
    model_config = ConfigDict(extra="forbid")


class OcrTokenRecord(_Record):
    text: str
    bbox: Tuple[float, float, float, float]
    confidence: float = Field(ge=0.0, le=1.0)


class TrajectoryRecord(_Record):
    task_id: str = Field(min_length=1)
    instruction: str = Field(min_length=1)
    domain: DomainLiteral = "web"
    policy_id: str = "unknown"
    actions: List[str]
    screenshots: List[str]
    ocr: List[Optional[List[OcrTokenRecord]]] = Field(default_factory=list)
    captions: List[Optional[str]] = Field(default_factory=list)
    response: Optional[str] = None

    @field_validator("screenshots")
    @classmethod
    def _hashes(cls, value: List[str]) -> List[str]:
        for sha in value:
            if not re.match(SHA256_PATTERN, sha):
                raise ValueError(f"screenshot ref {sha!r} is not a sha256 hex digest")
        return value

    @model_validator(mode="after")
    def _per_state_lists(self):
        n = len(self.screenshots)
        if len(self.ocr) > n or len(self.captions) > n:
            raise ValueError("ocr/captions lists are longer than the screenshot list")
        return self


class CaptionRecordModel(_Record):
    screenshot: str = Field(pattern=SHA256_PATTERN)
    ocr: str
    caption: str
    domain: Literal["web", "android", "ios"]
    human_verified: bool

    @model_validator(mode="after")
    def _verified_needs_caption(self):
        if self.human_verified and not self.caption.strip():
            raise ValueError("a human-verified record needs a caption")
        return self


class RewardPayload(_Record):
    values: List[float]
    granularity: GranularityLiteral
    policy_id: str = "unknown"
    verdicts: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _shape(self):
        if not self.values:
            raise ValueError("reward sequence is empty")
        if self.granularity == "trajectory_level":
            if any(v != 0.0 for v in self.values[:-1]) or self.values[-1] not in (0.0, 1.0):
                raise ValueError("trajectory-level rewards must be zeros then 0 or 1")
        return self


class BCSampleRecord(_Record):
    screenshot: str = Field(pattern=SHA256_PATTERN)
    instruction: str
    action: str
    reward: float
    source: str
    step: int = Field(ge=0)


class RoundRecord(_Record):
    round: int = Field(ge=0)
    trajectory_ref: str = Field(pattern=SHA256_PATTERN)
    verdict: Literal["success", "failure"]
    oracle_success: Optional[bool] = None
    reflection: Optional[str] = None


class ReflexionOutcomeRecord(_Record):
    task_id: str
    rounds_used: int = Field(ge=0)
    judged_success: bool
    oracle_success: Optional[bool] = None
    final_trajectory: Optional[TrajectoryRecord] = None
    per_round: List[RoundRecord]
    aborted: Optional[str] = None

    @model_validator(mode="after")
    def _rounds(self):
        if self.aborted is None:
            if self.rounds_used < 1 or self.final_trajectory is None:
                raise ValueError("a completed episode needs at least one round and a final trajectory")
            if len(self.per_round) != self.rounds_used:
                raise ValueError("per_round must hold one entry per round used")
        return self


class ConfusionCounts(_Record):
    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    tn: int = Field(ge=0)
    fn: int = Field(ge=0)


class AgreementReportModel(_Record):
    accuracy: float = Field(ge=0.0, le=1.0)
    confusion: ConfusionCounts
    n: int = Field(ge=1)

    @model_validator(mode="after")
    def _counts(self):
        c = self.confusion
        if c.tp + c.fp + c.tn + c.fn != self.n:
            raise ValueError("confusion counts do not sum to n")
        if abs(self.accuracy - (c.tp + c.tn) / self.n) > 1e-12:
            raise ValueError("accuracy does not match the confusion counts")
        return self


class ErrorPayload(_Record):
    error: str
    line: Optional[int] = None
    step_index: Optional[int] = None


PAYLOAD_MODELS = {
    "rewards": RewardPayload,
    "reflexion": ReflexionOutcomeRecord,
    "agreement": AgreementReportModel,
    "error": ErrorPayload,
}


class ResultRecord(_Record):
    run_id: str
    task_id: str
    kind: Literal["rewards", "reflexion", "agreement", "bc_batch", "error"]
    payload: Dict[str, Any]

    @model_validator(mode="after")
    def _payload(self):
        if self.kind == "bc_batch":
            for sample in self.payload.get("samples", []):
                BCSampleRecord.model_validate(sample)
        else:
            PAYLOAD_MODELS[self.kind].model_validate(self.payload)
        return self


class RunManifest(_Record):
    model_config = ConfigDict(extra="forbid", frozen=True)

    run_id: str
    command: Literal["evaluate", "reflexion", "filter-bc", "metrics", "sandbox-gen"]
    evaluator_spec: Optional[Dict[str, Any]] = None
    endpoint_names: List[str] = Field(default_factory=list)
    seed: int = 0
    jobs: int = 1
    backend: Optional[str] = None
    template_hash: str
    inputs: Dict[str, str] = Field(default_factory=dict)
    parameters: Dict[str, Any] = Field(default_factory=dict)
    started_at: str
    finished_at: Optional[str] = None


class OracleRecord(_Record):
    task_id: str
    policy_id: str
    oracle_success: bool
    step_labels: List[Literal["towards-the-goal", "not-sure", "goal-reached", "away-from-the-goal"]]


# ===== Sandbox suite documents =====

class SuiteWidget(_Record):
    label: str = Field(min_length=1)
    bbox: Optional[Tuple[float, float, float, float]] = None
    target: Optional[str] = None
    slot: Optional[str] = None
    options: List[str] = Field(default_factory=list)
    fact: Optional[str] = None

    @model_validator(mode="after")
    def _one_role(self):
        roles = [r for r in (self.target, self.slot, self.fact) if r is not None]
        if len(roles) != 1:
            raise ValueError(f"widget {self.label!r} needs exactly one of target, slot or fact")
        if self.slot is not None and not self.options:
            raise ValueError(f"input widget {self.label!r} needs candidate options")
        return self


class SuiteScreen(_Record):
    title: str
    widgets: List[SuiteWidget] = Field(default_factory=list)
    back: Optional[str] = None

    @model_validator(mode="after")
    def _one_input(self):
        if sum(1 for w in self.widgets if w.slot is not None) > 1:
            raise ValueError(f"screen {self.title!r} has more than one input widget")
        return self


class SuiteGraph(_Record):
    archetype: Literal["navigation", "form-fill", "information-seeking"]
    initial_screen: str
    text_slots: Dict[str, str] = Field(default_factory=dict)
    screens: Dict[str, SuiteScreen]


class SuiteOracle(_Record):
    screen: Optional[str] = None
    slots: Dict[str, str] = Field(default_factory=dict)
    answer: Optional[str] = None


class SuiteTask(_Record):
    task_id: str = Field(min_length=1)
    graph: str
    instruction: str = Field(min_length=1)
    oracle: SuiteOracle
    optimal_path_length: Optional[int] = Field(default=None, ge=1)


class SuiteDocument(_Record):
    graphs: Dict[str, SuiteGraph]
    tasks: List[SuiteTask]
