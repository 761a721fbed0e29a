"""
Judges Module
End-to-end and caption-then-reason evaluators: prompt assembly, strict verdict
parsing and the mapping from verdicts to reward sequences
"""

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

from assets.prompt_templates import resolve_template
from utils.errors import (
    AgentJudgeError,
    MissingCaption,
    MissingResponse,
    MissingStatus,
    StepEvaluationError,
    UnrecognizedCategory,
    UnrecognizedStatus,
)
from utils.model_gateway import EVALUATION_PARAMS, Backend, ChatMessage, GenerationParams, ModelGateway, Role
from utils.trajectory_core import Action, DomainTag, Instruction, State, Trajectory, render_action, validate_trajectory

logger = logging.getLogger(__name__)


class VerdictStatus(str, Enum):
    SUCCESS = "success"
    FAILURE = "failure"


class StepLabel(str, Enum):
    TOWARDS_GOAL = "towards-the-goal"
    NOT_SURE = "not-sure"
    GOAL_REACHED = "goal-reached"
    AWAY_FROM_GOAL = "away-from-the-goal"


class Architecture(str, Enum):
    END_TO_END = "EndToEnd"
    MODULAR = "Modular"


class Granularity(str, Enum):
    TRAJECTORY_LEVEL = "trajectory_level"
    PER_STEP = "per_step"


@dataclass(frozen=True)
class Verdict:
    status: VerdictStatus
    thoughts: str = ""

    @property
    def is_success(self) -> bool:
        return self.status == VerdictStatus.SUCCESS


@dataclass(frozen=True)
class StepCategory:
    value: StepLabel
    thoughts: str = ""


@dataclass(frozen=True)
class RewardConfig:
    """Per-step reward values: progress p, detour d and the not-sure value"""

    p: float = 0.5
    d: float = -1.0
    not_sure_value: float = 0.0

    def __post_init__(self):
        if not (self.d < 0 <= self.not_sure_value <= self.p <= 1):
            raise ValueError(
                f"reward config needs d < 0 <= not_sure <= p <= 1, got "
                f"d={self.d}, not_sure={self.not_sure_value}, p={self.p}"
            )

    def value_for(self, label: StepLabel) -> float:
        return {
            StepLabel.GOAL_REACHED: 1.0,
            StepLabel.TOWARDS_GOAL: self.p,
            StepLabel.NOT_SURE: self.not_sure_value,
            StepLabel.AWAY_FROM_GOAL: self.d,
        }[StepLabel(label)]


@dataclass(frozen=True)
class RewardSequence:
    """
    One reward per action

    Trajectory-level sequences are all zeros except the last entry, which is
    1 for a judged success. `labels` keeps the verdict strings behind the values.
    """

    values: Tuple[float, ...]
    granularity: Granularity
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "granularity", Granularity(self.granularity))
        if not self.values:
            raise ValueError("a reward sequence needs at least one value")
        if self.granularity == Granularity.TRAJECTORY_LEVEL:
            if any(v != 0.0 for v in self.values[:-1]) or self.values[-1] not in (0.0, 1.0):
                raise ValueError(f"trajectory-level rewards must be zeros then 0 or 1, got {self.values}")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def judged_success(self) -> bool:
        """Final reward 1 at trajectory level; any goal-reached step per step"""
        if self.granularity == Granularity.TRAJECTORY_LEVEL:
            return self.values[-1] == 1.0
        return StepLabel.GOAL_REACHED.value in self.labels

    @classmethod
    def from_payload(cls, payload: dict) -> "RewardSequence":
        return cls(tuple(payload["values"]), payload["granularity"], tuple(payload.get("verdicts", ())))

    def to_payload(self, policy_id: str = "unknown") -> dict:
        return {
            "values": list(self.values),
            "granularity": self.granularity.value,
            "policy_id": policy_id,
            "verdicts": list(self.labels),
        }


@dataclass(frozen=True)
class EvaluatorSpec:
    """
    Evaluator wiring

    End-to-end evaluators need a vision backend and judge whole trajectories;
    caption-then-reason evaluators need a text backend and captioned states.
    A None domain_tag uses each trajectory's own domain.
    """

    architecture: Architecture
    granularity: Granularity
    domain_tag: Optional[DomainTag] = None
    vision_backend: Optional[Backend] = None
    text_backend: Optional[Backend] = None
    reward_config: RewardConfig = field(default_factory=RewardConfig)
    params: GenerationParams = EVALUATION_PARAMS
    max_workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        object.__setattr__(self, "granularity", Granularity(self.granularity))
        if self.domain_tag is not None:
            object.__setattr__(self, "domain_tag", DomainTag(self.domain_tag))
        if self.architecture == Architecture.END_TO_END:
            if self.vision_backend is None:
                raise ValueError("an end-to-end evaluator needs a vision backend")
            if self.granularity == Granularity.PER_STEP:
                raise ValueError("per-step evaluation is only available with the Modular architecture")
        if self.architecture == Architecture.MODULAR and self.text_backend is None:
            raise ValueError("a modular evaluator needs a text backend")
        if self.max_workers < 1:
            raise ValueError("max_workers must be >= 1")

    @property
    def backend(self) -> Backend:
        return self.vision_backend if self.architecture == Architecture.END_TO_END else self.text_backend

    def snapshot(self) -> dict:
        """Secret-free description for run manifests"""

        def describe(b: Optional[Backend]):
            if b is None:
                return None
            return {"model_name": b.model_name, "name": getattr(b, "label", b.model_name)}

        return {
            "architecture": self.architecture.value,
            "granularity": self.granularity.value,
            "domain_tag": self.domain_tag.value if self.domain_tag else None,
            "vision_backend": describe(self.vision_backend),
            "text_backend": describe(self.text_backend),
            "reward_config": {"p": self.reward_config.p, "d": self.reward_config.d,
                              "not_sure_value": self.reward_config.not_sure_value},
            "temperature": self.params.temperature,
            "max_tokens": self.params.max_tokens,
        }


# ===== Prompt assembly =====

def _template(domain_tag: DomainTag, architecture: Architecture, granularity: Granularity) -> dict:
    template = resolve_template(DomainTag(domain_tag).value, Architecture(architecture).value,
                                Granularity(granularity).value)
    if template is None:
        raise ValueError(f"no prompt template for ({domain_tag}, {architecture}, {granularity})")
    return template


def render_action_history(actions: Sequence[Action]) -> str:
    return "\n".join(render_action(a) for a in actions)


def build_e2e_trajectory_prompt(t: Trajectory, domain_tag: Optional[DomainTag] = None) -> List[ChatMessage]:
    """
    End-to-end judge prompt

    Only the final screenshot is attached; earlier frames are summarized by the
    action history.
    """

    template = _template(domain_tag or t.instruction.domain_tag, Architecture.END_TO_END,
                         Granularity.TRAJECTORY_LEVEL)
    user = template["user"].format(
        intent=t.instruction.text,
        last_actions=render_action_history(t.actions),
        response=t.agent_response if t.agent_response else "N/A",
    )
    return [
        ChatMessage(Role.SYSTEM, template["system"]),
        ChatMessage(Role.USER, user, (t.final_state.screenshot_ref,)),
    ]


def build_modular_trajectory_prompt(t: Trajectory, domain_tag: Optional[DomainTag] = None) -> List[ChatMessage]:
    """Text-only judge prompt with the final caption fenced as markdown"""

    final_caption = t.final_state.caption
    if final_caption is None:
        raise MissingCaption(len(t.states) - 1)

    template = _template(domain_tag or t.instruction.domain_tag, Architecture.MODULAR,
                         Granularity.TRAJECTORY_LEVEL)
    user = template["user"].format(
        intent=t.instruction.text,
        last_actions=render_action_history(t.actions),
        cap=final_caption,
    )
    return [ChatMessage(Role.SYSTEM, template["system"]), ChatMessage(Role.USER, user)]


def build_step_prompt(instruction: Instruction, action: Action, current: State, next_state: State,
                      step_index: int = 0) -> List[ChatMessage]:
    """
    Per-step evaluator prompt for one transition

    Args:
        instruction: Task instruction
        action: Action taken in `current`
        current: State before the action
        next_state: State after the action
        step_index: Index of the action, used to name a missing caption

    Returns:
        System and user messages (text only)
    """

    if current.caption is None:
        raise MissingCaption(step_index)
    if next_state.caption is None:
        raise MissingCaption(step_index + 1)

    template = _template(instruction.domain_tag, Architecture.MODULAR, Granularity.PER_STEP)
    user = template["user"].format(
        intent=instruction.text,
        current_state=current.caption,
        action=render_action(action),
        next_state=next_state.caption,
    )
    return [ChatMessage(Role.SYSTEM, template["system"]), ChatMessage(Role.USER, user)]


# ===== Verdict parsing =====

_STATUS_LINE = re.compile(r"^[\s*#>_-]*status[\s*_]*:(.*)$", re.IGNORECASE | re.MULTILINE)
_RESPONSE_LINE = re.compile(r"^[\s*#>_-]*response[\s*_]*:(.*)$", re.IGNORECASE | re.MULTILINE)
_THOUGHTS_MARK = re.compile(r"^[\s*#>_-]*thoughts?[\s*_]*:", re.IGNORECASE | re.MULTILINE)
_QUOTES = "\"'`“”‘’*[]() "


def _normalize_literal(raw: str) -> str:
    value = raw.strip().rstrip(".").strip(_QUOTES).rstrip(".").strip(_QUOTES)
    return value.lower()


def _thoughts_before(text: str, end: int) -> str:
    marks = [m for m in _THOUGHTS_MARK.finditer(text, 0, end)]
    if not marks:
        return ""
    return text[marks[-1].end():end].strip()


def parse_trajectory_verdict(text: str) -> Verdict:
    """
    Parse the two-line Thoughts/Status answer

    The last Status line wins; quotes, markdown emphasis, trailing periods and
    casing are tolerated. Anything other than success/failure is rejected.
    """

    matches = list(_STATUS_LINE.finditer(text))
    if not matches:
        raise MissingStatus(f"no Status line in judge output: {text[:120]!r}")
    last = matches[-1]
    value = _normalize_literal(last.group(1))
    try:
        status = VerdictStatus(value)
    except ValueError:
        raise UnrecognizedStatus(f"status {last.group(1).strip()!r} is neither success nor failure")
    return Verdict(status, _thoughts_before(text, last.start()))


def parse_step_verdict(text: str) -> StepCategory:
    """Parse the Thoughts/Response answer of the per-step evaluator (last Response wins)"""

    matches = list(_RESPONSE_LINE.finditer(text))
    if not matches:
        raise MissingResponse(f"no Response line in step evaluator output: {text[:120]!r}")
    last = matches[-1]
    value = _normalize_literal(last.group(1))
    try:
        label = StepLabel(value)
    except ValueError:
        raise UnrecognizedCategory(f"category {last.group(1).strip()!r} is not one of the four step labels")
    return StepCategory(label, _thoughts_before(text, last.start()))


# ===== Reward mappings =====

def rewards_from_verdict(verdict: Verdict, action_count: int) -> RewardSequence:
    if action_count < 1:
        raise ValueError("action_count must be >= 1")
    values = [0.0] * action_count
    values[-1] = 1.0 if verdict.is_success else 0.0
    return RewardSequence(tuple(values), Granularity.TRAJECTORY_LEVEL, (verdict.status.value,))


def rewards_from_categories(categories: Sequence[StepCategory], config: Optional[RewardConfig] = None) -> RewardSequence:
    if not categories:
        raise ValueError("rewards_from_categories needs at least one category")
    config = config or RewardConfig()
    return RewardSequence(
        tuple(config.value_for(c.value) for c in categories),
        Granularity.PER_STEP,
        tuple(StepLabel(c.value).value for c in categories),
    )


# ===== Evaluation =====

def judge_trajectory(t: Trajectory, spec: EvaluatorSpec, gateway: ModelGateway) -> Verdict:
    """One model call: the trajectory-level verdict for t"""

    if spec.architecture == Architecture.END_TO_END:
        messages = build_e2e_trajectory_prompt(t, spec.domain_tag)
    else:
        messages = build_modular_trajectory_prompt(t, spec.domain_tag)
    text = gateway.complete(messages, spec.params, spec.backend)
    return parse_trajectory_verdict(text)


def judge_steps(t: Trajectory, spec: EvaluatorSpec, gateway: ModelGateway) -> List[StepCategory]:
    """
    One model call per action, results in step order

    Raises:
        StepEvaluationError: wraps the first failing step's error
    """

    instruction = t.instruction
    if spec.domain_tag is not None:
        instruction = Instruction(instruction.text, instruction.task_id, spec.domain_tag)

    def judge_step(i: int) -> StepCategory:
        try:
            messages = build_step_prompt(instruction, t.actions[i], t.states[i], t.states[i + 1], i)
            return parse_step_verdict(gateway.complete(messages, spec.params, spec.backend))
        except AgentJudgeError as e:
            raise StepEvaluationError(i, e) from e

    steps = range(len(t.actions))
    if spec.max_workers == 1:
        return [judge_step(i) for i in steps]
    with ThreadPoolExecutor(max_workers=spec.max_workers) as pool:
        return list(pool.map(judge_step, steps))


def evaluate(t: Trajectory, spec: EvaluatorSpec, gateway: ModelGateway) -> RewardSequence:
    """
    Score a trajectory

    Trajectory-level evaluation issues exactly one model call; per-step
    evaluation issues one call per action.

    Args:
        t: A valid trajectory (captioned for the Modular architecture)
        spec: Evaluator wiring
        gateway: Model gateway

    Returns:
        The reward sequence, one value per action
    """

    violations = validate_trajectory(t)
    if violations:
        raise ValueError(f"invalid trajectory {t.task_id}: " + ", ".join(v.rule for v in violations))

    if spec.granularity == Granularity.TRAJECTORY_LEVEL:
        verdict = judge_trajectory(t, spec, gateway)
        logger.debug(f"{t.task_id}: {verdict.status.value}")
        return rewards_from_verdict(verdict, len(t.actions))

    categories = judge_steps(t, spec, gateway)
    return rewards_from_categories(categories, spec.reward_config)
