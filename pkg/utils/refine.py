"""
Refinement Module
Reflexion retry loop driven by any evaluator, and filtered behavior cloning
datasets built from per-step rewards
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from assets.prompt_templates import REFLECTION_TEMPLATE
from utils.errors import AgentJudgeError, EnvFailure, EvaluatorFailure, GranularityMismatch
from utils.judges import (
    EvaluatorSpec,
    Granularity,
    RewardConfig,
    RewardSequence,
    StepLabel,
    Verdict,
    VerdictStatus,
    judge_steps,
    judge_trajectory,
    render_action_history,
)
from utils.model_gateway import EVALUATION_PARAMS, Backend, ChatMessage, GenerationParams, ModelGateway, Role
from utils.schemas import BCSampleRecord
from utils.trajectory_core import (
    Action,
    Instruction,
    ScreenshotRef,
    Trajectory,
    dumps_record,
    render_action,
    trajectory_digest,
    trajectory_to_record,
)

logger = logging.getLogger(__name__)


def derive_seed(*parts: int) -> int:
    """Independent child seed for (episode seed, round, step, ...)"""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class ReflexionMemory:
    """Verbal reflections of one task, oldest first"""

    reflections: List[str] = field(default_factory=list)

    def add(self, reflection: str):
        self.reflections.append(reflection.strip())

    def __len__(self) -> int:
        return len(self.reflections)

    def render(self) -> str:
        return "\n".join(f"Reflection {i}: {r}" for i, r in enumerate(self.reflections, start=1))


# ===== Ports =====

class ActorPort(Protocol):
    def reset(self) -> None:
        ...

    def act(self, instruction: Instruction, memory: ReflexionMemory, observation: Any, rng_seed: int) -> Action:
        ...


class EnvironmentPort(Protocol):
    max_steps: int

    def reset(self, seed: int) -> Any:
        ...

    def step(self, action: Action) -> Tuple[Any, bool]:
        ...

    def to_trajectory(self) -> Trajectory:
        ...

    def oracle_success(self) -> Optional[bool]:
        ...


class JudgePort(Protocol):
    def judge(self, trajectory: Trajectory, env: EnvironmentPort, draw_seed: int) -> Verdict:
        ...


class ReflectorPort(Protocol):
    def reflect(self, task: Instruction, failed: Trajectory, memory: ReflexionMemory,
                env: EnvironmentPort) -> str:
        ...


class ModelJudge:
    """Model evaluator behind the judge port; per-step specs succeed on any goal-reached step"""

    def __init__(self, spec: EvaluatorSpec, gateway: ModelGateway):
        self.spec = spec
        self.gateway = gateway

    def judge(self, trajectory: Trajectory, env: EnvironmentPort, draw_seed: int) -> Verdict:
        if self.spec.granularity == Granularity.TRAJECTORY_LEVEL:
            return judge_trajectory(trajectory, self.spec, self.gateway)
        categories = judge_steps(trajectory, self.spec, self.gateway)
        reached = any(c.value == StepLabel.GOAL_REACHED for c in categories)
        return Verdict(VerdictStatus.SUCCESS if reached else VerdictStatus.FAILURE,
                       " | ".join(c.value.value for c in categories))


def build_reflection_request(task: Instruction, failed: Trajectory, memory: ReflexionMemory) -> List[ChatMessage]:
    """Self-reflection prompt: the task, earlier reflections and the failed attempt"""

    user = REFLECTION_TEMPLATE["user"].format(
        intent=task.text,
        reflections=memory.render(),
        last_actions=render_action_history(failed.actions),
        response=failed.agent_response if failed.agent_response else "N/A",
    )
    return [ChatMessage(Role.SYSTEM, REFLECTION_TEMPLATE["system"]), ChatMessage(Role.USER, user)]


class GatewayReflector:
    """Sends the reflection prompt to a model"""

    def __init__(self, gateway: ModelGateway, backend: Backend, params: GenerationParams = EVALUATION_PARAMS):
        self.gateway = gateway
        self.backend = backend
        self.params = params

    def reflect(self, task: Instruction, failed: Trajectory, memory: ReflexionMemory,
                env: EnvironmentPort) -> str:
        return self.gateway.complete(build_reflection_request(task, failed, memory), self.params, self.backend)


# ===== Reflexion =====

@dataclass
class RoundResult:
    round: int
    trajectory: Trajectory
    verdict: Verdict
    oracle_success: Optional[bool] = None
    reflection: Optional[str] = None

    @property
    def trajectory_ref(self) -> str:
        return trajectory_digest(self.trajectory)

    @property
    def effective_success(self) -> bool:
        """Oracle outcome when known, the judged one otherwise"""
        return self.verdict.is_success if self.oracle_success is None else self.oracle_success

    def to_record(self) -> Dict[str, Any]:
        return {
            "round": self.round,
            "trajectory_ref": self.trajectory_ref,
            "verdict": self.verdict.status.value,
            "oracle_success": self.oracle_success,
            "reflection": self.reflection,
        }


@dataclass
class ReflexionOutcome:
    task_id: str
    rounds_used: int
    final_trajectory: Optional[Trajectory]
    judged_success: bool
    oracle_success: Optional[bool]
    per_round: List[RoundResult] = field(default_factory=list)
    aborted: Optional[str] = None

    def success_at(self, k: int) -> bool:
        """Success of the trajectory the episode would end with if cut after round k"""
        if not self.per_round:
            return False
        return self.per_round[min(k, len(self.per_round) - 1)].effective_success

    def to_record(self) -> Dict[str, Any]:
        return {
            "task_id": self.task_id,
            "rounds_used": self.rounds_used,
            "judged_success": self.judged_success,
            "oracle_success": self.oracle_success,
            "final_trajectory": trajectory_to_record(self.final_trajectory) if self.final_trajectory else None,
            "per_round": [r.to_record() for r in self.per_round],
            "aborted": self.aborted,
        }


def run_attempt(actor: ActorPort, env: EnvironmentPort, task: Instruction,
                memory: ReflexionMemory, seed: int) -> Trajectory:
    """
    One attempt from a freshly reset environment

    Args:
        actor: Policy under test
        env: Environment, reset to its initial state here
        task: Task instruction
        memory: Reflections the actor may read
        seed: Attempt seed; each step gets its own child seed

    Returns:
        The recorded trajectory
    """

    observation = env.reset(seed)
    actor.reset()
    for step in range(env.max_steps):
        action = actor.act(task, memory, observation, derive_seed(seed, step))
        observation, done = env.step(action)
        if done:
            break
    return env.to_trajectory()


def reflexion_episode(task: Instruction, actor: ActorPort, env: EnvironmentPort,
                      evaluator: Union[EvaluatorSpec, JudgePort], max_rounds: int,
                      gateway: Optional[ModelGateway] = None,
                      reflector: Optional[ReflectorPort] = None,
                      seed: int = 0) -> ReflexionOutcome:
    """
    Attempt, judge, reflect and retry until a judged success or the round budget runs out

    Args:
        task: Task instruction
        actor: Policy; reads the reflection memory
        env: Environment, reset before every attempt
        evaluator: EvaluatorSpec (judged through the gateway) or any judge object
        max_rounds: Retries after the first attempt (0 means a single attempt)
        gateway: Needed for model evaluators and the default reflector
        reflector: Produces reflections; defaults to asking the evaluator's model
        seed: Episode seed

    Returns:
        The outcome with every round recorded. Environment and evaluator failures
        end the episode early and are recorded in `aborted`.
    """

    if max_rounds < 0:
        raise ValueError("max_rounds must be >= 0")

    if isinstance(evaluator, EvaluatorSpec):
        if gateway is None:
            raise ValueError("a model evaluator needs a gateway")
        judge: JudgePort = ModelJudge(evaluator, gateway)
    else:
        judge = evaluator

    if reflector is None and max_rounds > 0:
        if gateway is None or not isinstance(evaluator, EvaluatorSpec):
            raise ValueError("no reflector given and none can be built from the evaluator")
        reflector = GatewayReflector(gateway, evaluator.backend, evaluator.params)

    memory = ReflexionMemory()
    rounds: List[RoundResult] = []
    aborted: Optional[str] = None

    for r in range(max_rounds + 1):
        attempt_seed = derive_seed(seed, r)
        try:
            trajectory = run_attempt(actor, env, task, memory, attempt_seed)
            oracle = env.oracle_success()
        except Exception as e:
            aborted = f"{EnvFailure.__name__}: round {r}: {e}"
            logger.error(f"❌ {task.task_id}: environment failed in round {r}: {e}")
            break

        try:
            verdict = judge.judge(trajectory, env, attempt_seed)
        except AgentJudgeError as e:
            aborted = f"{EvaluatorFailure.__name__}: round {r}: {type(e).__name__}: {e}"
            logger.error(f"❌ {task.task_id}: evaluator failed in round {r}: {e}")
            break

        result = RoundResult(r, trajectory, verdict, oracle)
        rounds.append(result)
        if verdict.is_success or r == max_rounds:
            break

        try:
            result.reflection = reflector.reflect(task, trajectory, memory, env)
        except AgentJudgeError as e:
            aborted = f"{EvaluatorFailure.__name__}: reflection after round {r}: {e}"
            logger.error(f"❌ {task.task_id}: reflection failed after round {r}: {e}")
            break
        memory.add(result.reflection)

    last = rounds[-1] if rounds else None
    outcome = ReflexionOutcome(
        task_id=task.task_id,
        rounds_used=len(rounds),
        final_trajectory=last.trajectory if last else None,
        judged_success=bool(last and last.verdict.is_success),
        oracle_success=last.oracle_success if last else None,
        per_round=rounds,
        aborted=aborted,
    )
    logger.debug(f"{task.task_id}: {outcome.rounds_used} rounds, judged={outcome.judged_success}, "
                 f"oracle={outcome.oracle_success}")
    return outcome


# ===== Behavior cloning datasets =====

@dataclass(frozen=True)
class BCSample:
    screenshot_ref: ScreenshotRef
    instruction: str
    action: str
    reward: float
    source_trajectory_id: str
    step: int

    def to_record(self) -> Dict[str, Any]:
        return {
            "screenshot": self.screenshot_ref.sha256,
            "instruction": self.instruction,
            "action": self.action,
            "reward": self.reward,
            "source": self.source_trajectory_id,
            "step": self.step,
        }


def _samples(t: Trajectory, rewards: Sequence[float], threshold: float) -> List[BCSample]:
    return [
        BCSample(t.states[i].screenshot_ref, t.instruction.text, render_action(t.actions[i]),
                 float(rewards[i]), t.task_id, i)
        for i in range(len(t.actions))
        if rewards[i] >= threshold
    ]


def filter_bc(labeled: Sequence[Tuple[Trajectory, RewardSequence]], threshold: Optional[float] = None,
              reward_config: Optional[RewardConfig] = None) -> List[BCSample]:
    """
    Keep the (state, action) pairs whose per-step reward clears the threshold

    Args:
        labeled: Trajectories paired with their per-step reward sequences
        threshold: Lowest kept reward; defaults to the progress reward p
        reward_config: Supplies the default threshold

    Returns:
        Samples in trajectory order, then step order

    Raises:
        GranularityMismatch: a reward sequence is trajectory-level or the wrong length
    """

    if threshold is None:
        threshold = (reward_config or RewardConfig()).p

    samples: List[BCSample] = []
    for t, rewards in labeled:
        if rewards.granularity != Granularity.PER_STEP:
            raise GranularityMismatch(f"{t.task_id}: filtered BC needs per-step rewards, got {rewards.granularity.value}")
        if len(rewards.values) != len(t.actions):
            raise GranularityMismatch(
                f"{t.task_id}: {len(rewards.values)} rewards for {len(t.actions)} actions")
        samples.extend(_samples(t, rewards.values, threshold))
    return samples


def self_training_export(trajectories: Sequence[Trajectory],
                         rewards: Optional[Sequence[RewardSequence]] = None) -> List[BCSample]:
    """
    Unfiltered baseline dataset: every (state, action) pair

    With rewards this equals filter_bc at threshold -inf; without them each
    sample carries reward 0.0.
    """

    if rewards is not None:
        return filter_bc(list(zip(trajectories, rewards)), threshold=float("-inf"))
    samples: List[BCSample] = []
    for t in trajectories:
        samples.extend(_samples(t, [0.0] * len(t.actions), float("-inf")))
    return samples


def export_bc_samples(path: Union[str, Path], samples: Sequence[BCSample]) -> int:
    """Write BC samples as canonical JSONL; returns the count"""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for sample in samples:
            record = BCSampleRecord.model_validate(sample.to_record()).model_dump()
            fh.write(dumps_record(record) + "\n")
    logger.info(f"✅ Exported {len(samples)} BC samples to {path}")
    return len(samples)
