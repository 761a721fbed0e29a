"""
Sandbox Environment Module
Deterministic synthetic device-control environment: screen graphs, oracle task
predicates, scripted actors, noisy evaluators and per-step ground-truth labels
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from utils.errors import SuiteFormatError, UnreachableScreen
from utils.judges import (
    StepCategory,
    StepLabel,
    Verdict,
    VerdictStatus,
    build_e2e_trajectory_prompt,
    build_modular_trajectory_prompt,
    build_step_prompt,
)
from utils.model_gateway import EVALUATION_PARAMS, GenerationParams, request_digest
from utils.perception import build_caption_request
from utils.refine import ReflexionMemory, derive_seed, run_attempt
from utils.schemas import SuiteDocument, SuiteGraph
from utils.trajectory_core import (
    Action,
    ActionKind,
    BlobStore,
    DomainTag,
    Instruction,
    OcrToken,
    State,
    Trajectory,
    dumps_record,
    render_action,
    screenshot_ref_for,
)

logger = logging.getLogger(__name__)

DEFAULT_SUITE_PATH = Path(__file__).resolve().parent.parent / "data" / "sandbox_suite.json"

TITLE_BBOX = (0.05, 0.02, 0.95, 0.08)
INFINITY = math.inf


def _row_bbox(index: int) -> Tuple[float, float, float, float]:
    top = 0.12 + 0.08 * index
    return (0.1, round(top, 4), 0.9, round(top + 0.06, 4))


# ===== Screen graph =====

@dataclass(frozen=True)
class Widget:
    label: str
    bbox: Tuple[float, float, float, float]
    target: Optional[str] = None
    slot: Optional[str] = None
    options: Tuple[str, ...] = ()
    fact: Optional[str] = None

    @property
    def center(self) -> Tuple[float, float]:
        x0, y0, x1, y1 = self.bbox
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    def contains(self, point: Tuple[float, float]) -> bool:
        x0, y0, x1, y1 = self.bbox
        return x0 <= point[0] <= x1 and y0 <= point[1] <= y1


@dataclass(frozen=True)
class Screen:
    screen_id: str
    title: str
    widgets: Tuple[Widget, ...] = ()
    back: Optional[str] = None

    @property
    def input_widget(self) -> Optional[Widget]:
        return next((w for w in self.widgets if w.slot is not None), None)


@dataclass(frozen=True)
class SandboxState:
    """Screen, text slots and, once the agent stopped, its response"""

    screen: str
    slots: Tuple[Tuple[str, str], ...]
    done: bool = False
    response: Optional[str] = None

    @property
    def slot_map(self) -> Dict[str, str]:
        return dict(self.slots)


class ScreenGraph:
    """
    Directed graph of screens

    Clicking a navigation widget moves to its target; typing on a screen with an
    input widget sets that widget's slot; `press "Back"` follows the screen's
    back edge and `press "Home"` returns to the initial screen. Every other
    action leaves the state unchanged.
    """

    def __init__(self, graph_id: str, screens: Dict[str, Screen], initial_screen: str,
                 text_slots: Optional[Dict[str, str]] = None, archetype: str = "navigation"):
        self.graph_id = graph_id
        self.screens = screens
        self.initial_screen = initial_screen
        self.text_slots = dict(text_slots or {})
        self.archetype = archetype
        self._edges: Optional[Dict[SandboxState, List[Tuple[Action, SandboxState]]]] = None
        self._reverse: Optional[Dict[SandboxState, List[SandboxState]]] = None
        self._models: Dict[str, "TaskModel"] = {}
        self._check_edges()

    @classmethod
    def from_model(cls, graph_id: str, model: SuiteGraph) -> "ScreenGraph":
        screens = {}
        for screen_id, s in model.screens.items():
            widgets = tuple(
                Widget(w.label, tuple(w.bbox) if w.bbox else _row_bbox(i), w.target, w.slot,
                       tuple(w.options), w.fact)
                for i, w in enumerate(s.widgets)
            )
            screens[screen_id] = Screen(screen_id, s.title, widgets, s.back)
        return cls(graph_id, screens, model.initial_screen, model.text_slots, model.archetype)

    def _check_edges(self):
        if self.initial_screen not in self.screens:
            raise UnreachableScreen(f"{self.graph_id}: initial screen {self.initial_screen!r} does not exist")
        for screen in self.screens.values():
            targets = [w.target for w in screen.widgets if w.target is not None]
            if screen.back is not None:
                targets.append(screen.back)
            for target in targets:
                if target not in self.screens:
                    raise UnreachableScreen(f"{self.graph_id}: {screen.screen_id} links to missing screen {target!r}")
            for w in screen.widgets:
                if w.slot is not None and w.slot not in self.text_slots:
                    raise SuiteFormatError(f"{self.graph_id}: slot {w.slot!r} has no initial value")

    def screen(self, screen_id: str) -> Screen:
        try:
            return self.screens[screen_id]
        except KeyError:
            raise UnreachableScreen(f"{self.graph_id}: no screen {screen_id!r}")

    def initial_state(self) -> SandboxState:
        return SandboxState(self.initial_screen, tuple(sorted(self.text_slots.items())))

    # ----- dynamics -----

    def transition(self, state: SandboxState, action: Action) -> SandboxState:
        if state.done:
            raise ValueError("the episode already ended")
        screen = self.screen(state.screen)
        kind = action.kind

        if kind == ActionKind.CLICK:
            widget = next((w for w in screen.widgets if w.contains(action.coords)), None)
            if widget is not None and widget.target is not None:
                self.screen(widget.target)
                return replace(state, screen=widget.target)
            return state
        if kind == ActionKind.TYPE:
            widget = screen.input_widget
            if widget is None:
                return state
            slots = dict(state.slots)
            slots[widget.slot] = action.text
            return replace(state, slots=tuple(sorted(slots.items())))
        if kind == ActionKind.PRESS_BACK:
            return replace(state, screen=screen.back) if screen.back else state
        if kind == ActionKind.PRESS_HOME:
            return replace(state, screen=self.initial_screen)
        if kind == ActionKind.STOP:
            return replace(state, done=True, response=action.text)
        return state

    def available_actions(self, state: SandboxState) -> List[Action]:
        """Enumerated action set of a screen, in a fixed order"""

        screen = self.screen(state.screen)
        actions = []
        for w in screen.widgets:
            if w.target is not None:
                actions.append(Action.click(*w.center))
            elif w.slot is not None:
                actions.extend(Action.type_text(option) for option in w.options)
        if screen.back is not None:
            actions.append(Action.press_back())
        if state.screen != self.initial_screen:
            actions.append(Action.press_home())
        actions.append(Action.swipe("down"))
        actions.append(Action.stop())
        actions.extend(Action.stop(w.fact) for w in screen.widgets if w.fact is not None)
        return actions

    def edges(self) -> Dict[SandboxState, List[Tuple[Action, SandboxState]]]:
        """Non-terminal transitions of every state reachable from the initial one"""

        if self._edges is None:
            edges: Dict[SandboxState, List[Tuple[Action, SandboxState]]] = {}
            reverse: Dict[SandboxState, List[SandboxState]] = {}
            queue = deque([self.initial_state()])
            edges[self.initial_state()] = []
            while queue:
                s = queue.popleft()
                for action in self.available_actions(s):
                    if action.kind == ActionKind.STOP:
                        continue
                    t = self.transition(s, action)
                    edges[s].append((action, t))
                    if t != s:
                        reverse.setdefault(t, []).append(s)
                    if t not in edges:
                        edges[t] = []
                        queue.append(t)
            self._edges, self._reverse = edges, reverse
            logger.debug(f"{self.graph_id}: {len(edges)} reachable states")
        return self._edges

    def reverse_edges(self) -> Dict[SandboxState, List[SandboxState]]:
        self.edges()
        return self._reverse

    def task_model(self, task: "SandboxTask") -> "TaskModel":
        if task.task_id not in self._models:
            self._models[task.task_id] = TaskModel(task, self)
        return self._models[task.task_id]

    # ----- rendering -----

    def _widget_text(self, w: Widget, slots: Dict[str, str]) -> str:
        if w.slot is not None:
            return f"{w.label}: {slots.get(w.slot, '')}"
        return w.label

    def ocr_tokens(self, state: SandboxState) -> Tuple[OcrToken, ...]:
        screen = self.screen(state.screen)
        slots = state.slot_map
        tokens = [OcrToken(screen.title, TITLE_BBOX, 1.0)]
        tokens.extend(OcrToken(self._widget_text(w, slots), w.bbox, 1.0) for w in screen.widgets)
        return tuple(tokens)

    def caption(self, state: SandboxState) -> str:
        """Templated markdown summary of the visible screen"""

        screen = self.screen(state.screen)
        slots = state.slot_map
        lines = [f"# {screen.title}"]
        for w in screen.widgets:
            if w.target is not None:
                lines.append(f"- Button \"{w.label}\"")
            elif w.slot is not None:
                value = slots.get(w.slot) or "(empty)"
                lines.append(f"- Text field \"{w.label}\": {value}")
            else:
                lines.append(f"- Text \"{w.label}\"")
        if screen.back is not None:
            lines.append("- Back navigation available")
        return "\n".join(lines)

    def frame(self, state: SandboxState) -> bytes:
        """Synthetic screenshot: canonical JSON of the visible screen"""

        screen = self.screen(state.screen)
        doc = {
            "graph": self.graph_id,
            "screen": screen.screen_id,
            "title": screen.title,
            "widgets": [{"text": self._widget_text(w, state.slot_map), "bbox": list(w.bbox)}
                        for w in screen.widgets],
            "slots": state.slot_map,
        }
        return dumps_record(doc).encode("utf-8")

    def observe(self, state: SandboxState) -> State:
        return State(screenshot_ref_for(self.frame(state)), self.ocr_tokens(state), self.caption(state))


# ===== Tasks =====

@dataclass(frozen=True)
class SandboxOracle:
    screen: Optional[str] = None
    slots: Tuple[Tuple[str, str], ...] = ()
    answer: Optional[str] = None

    def check(self, state: SandboxState) -> bool:
        """Success needs a stopped episode on the right screen, slots and answer"""

        if not state.done:
            return False
        if self.screen is not None and state.screen != self.screen:
            return False
        slots = state.slot_map
        if any(slots.get(k) != v for k, v in self.slots):
            return False
        if self.answer is not None:
            response = (state.response or "").strip().casefold()
            if response != self.answer.strip().casefold():
                return False
        return True


@dataclass(frozen=True)
class SandboxTask:
    instruction: Instruction
    graph_id: str
    oracle: SandboxOracle
    optimal_path_length: int = 0

    @property
    def task_id(self) -> str:
        return self.instruction.task_id


class TaskModel:
    """Shortest-path distances to a successful stop, counting the Stop itself"""

    def __init__(self, task: SandboxTask, graph: ScreenGraph):
        self.task = task
        self.graph = graph
        self.distances: Dict[SandboxState, float] = {}
        self._compute()

    def _stop_succeeds(self, state: SandboxState) -> bool:
        return any(
            self.task.oracle.check(self.graph.transition(state, a))
            for a in self.graph.available_actions(state) if a.kind == ActionKind.STOP
        )

    def _compute(self):
        edges = self.graph.edges()
        reverse = self.graph.reverse_edges()
        queue = deque()
        for s in edges:
            if self._stop_succeeds(s):
                self.distances[s] = 1
                queue.append(s)
        while queue:
            s = queue.popleft()
            for p in reverse.get(s, []):
                if p not in self.distances:
                    self.distances[p] = self.distances[s] + 1
                    queue.append(p)

        start = self.graph.initial_state()
        if start not in self.distances:
            raise UnreachableScreen(f"{self.task.task_id}: no successful end state is reachable")

    def _search(self, start: SandboxState) -> float:
        # States outside the enumerated space (free-text typing) are searched on demand
        seen = {start}
        queue = deque([(start, 0)])
        while queue:
            s, depth = queue.popleft()
            if s in self.distances:
                return depth + self.distances[s]
            if self._stop_succeeds(s):
                return depth + 1
            for a in self.graph.available_actions(s):
                if a.kind == ActionKind.STOP:
                    continue
                t = self.graph.transition(s, a)
                if t not in seen:
                    seen.add(t)
                    queue.append((t, depth + 1))
        return INFINITY

    def distance(self, state: SandboxState) -> float:
        if state.done:
            return 0 if self.task.oracle.check(state) else INFINITY
        if state not in self.distances:
            self.distances[state] = self._search(state)
        return self.distances[state]

    @property
    def optimal_path_length(self) -> int:
        return int(self.distance(self.graph.initial_state()))

    def optimal_actions(self, state: SandboxState) -> List[Action]:
        here = self.distance(state)
        if here == INFINITY:
            return []
        return [a for a in self.graph.available_actions(state)
                if self.distance(self.graph.transition(state, a)) == here - 1]

    def label_step(self, before: SandboxState, after: SandboxState) -> StepLabel:
        if after.done and self.task.oracle.check(after):
            return StepLabel.GOAL_REACHED
        d0, d1 = self.distance(before), self.distance(after)
        if d1 < d0:
            return StepLabel.TOWARDS_GOAL
        if d1 > d0:
            return StepLabel.AWAY_FROM_GOAL
        return StepLabel.NOT_SURE

    def replay(self, actions: Sequence[Action]) -> List[SandboxState]:
        states = [self.graph.initial_state()]
        for action in actions:
            if states[-1].done:
                raise ValueError(f"{self.task.task_id}: action after Stop")
            states.append(self.graph.transition(states[-1], action))
        return states


@dataclass
class SandboxSuite:
    graphs: Dict[str, ScreenGraph]
    tasks: List[SandboxTask]

    def graph_for(self, task: SandboxTask) -> ScreenGraph:
        return self.graphs[task.graph_id]

    def task(self, task_id: str) -> SandboxTask:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(task_id)


def load_suite(path: Union[str, Path] = DEFAULT_SUITE_PATH) -> SandboxSuite:
    """
    Load and check a suite document

    Declared optimal path lengths must equal the shortest path the graph
    allows; graphs and tasks that disagree are rejected.

    Raises:
        SuiteFormatError: malformed document or inconsistent task
        UnreachableScreen: broken edges or an unreachable goal
    """

    path = Path(path)
    try:
        doc = SuiteDocument.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise SuiteFormatError(f"{path}: {e}")

    graphs = {gid: ScreenGraph.from_model(gid, g) for gid, g in doc.graphs.items()}
    tasks = []
    seen = set()
    for t in doc.tasks:
        if t.task_id in seen:
            raise SuiteFormatError(f"{path}: duplicate task id {t.task_id}")
        seen.add(t.task_id)
        if t.graph not in graphs:
            raise SuiteFormatError(f"{path}: task {t.task_id} uses unknown graph {t.graph!r}")
        graph = graphs[t.graph]
        if t.oracle.screen is not None and t.oracle.screen not in graph.screens:
            raise UnreachableScreen(f"{t.task_id}: oracle screen {t.oracle.screen!r} does not exist")
        task = SandboxTask(
            Instruction(t.instruction, t.task_id, DomainTag.SANDBOX),
            t.graph,
            SandboxOracle(t.oracle.screen, tuple(sorted(t.oracle.slots.items())), t.oracle.answer),
        )
        length = graph.task_model(task).optimal_path_length
        if t.optimal_path_length is not None and t.optimal_path_length != length:
            raise SuiteFormatError(
                f"{path}: task {t.task_id} declares optimal path {t.optimal_path_length}, graph gives {length}")
        tasks.append(replace(task, optimal_path_length=length))

    logger.info(f"✅ Loaded sandbox suite: {len(tasks)} tasks over {len(graphs)} graphs")
    return SandboxSuite(graphs, tasks)


# ===== Environment =====

class SandboxEnv:
    """One task in one graph; records every state for trajectories and labels"""

    def __init__(self, task: SandboxTask, graph: ScreenGraph, max_steps: int,
                 policy_id: str = "sandbox", blob_store: Optional[BlobStore] = None):
        if max_steps < task.optimal_path_length:
            raise ValueError(f"max_steps {max_steps} is shorter than the optimal path "
                             f"({task.optimal_path_length}) of {task.task_id}")
        self.task = task
        self.graph = graph
        self.model = graph.task_model(task)
        self.max_steps = max_steps
        self.policy_id = policy_id
        self.blob_store = blob_store
        self.states: List[SandboxState] = []
        self.actions: List[Action] = []

    def observation(self) -> Dict[str, Any]:
        state = self.states[-1]
        return {
            "screen": state.screen,
            "available": self.graph.available_actions(state),
            "optimal": self.model.optimal_actions(state),
        }

    def reset(self, seed: int) -> Dict[str, Any]:
        self.states = [self.graph.initial_state()]
        self.actions = []
        return self.observation()

    def step(self, action: Action) -> Tuple[Optional[Dict[str, Any]], bool]:
        state = self.graph.transition(self.states[-1], action)
        self.actions.append(action)
        self.states.append(state)
        if state.done:
            return None, True
        return self.observation(), False

    def oracle_success(self) -> bool:
        return bool(self.states) and self.task.oracle.check(self.states[-1])

    def step_labels(self) -> List[StepLabel]:
        return [self.model.label_step(a, b) for a, b in zip(self.states, self.states[1:])]

    def to_trajectory(self) -> Trajectory:
        states = []
        for s in self.states:
            if self.blob_store is not None:
                self.blob_store.put(self.graph.frame(s))
            states.append(self.graph.observe(s))
        final = self.states[-1]
        return Trajectory(
            instruction=self.task.instruction,
            actions=tuple(self.actions),
            states=tuple(states),
            agent_response=final.response if final.done else None,
            policy_id=self.policy_id,
        )


# ===== Actors, evaluators and reflection =====

AVOID_PREFIX = "Avoid: "
AVOID_SEPARATOR = " on screen "


def avoid_directive(action: Action, screen_id: str) -> str:
    return f"{AVOID_PREFIX}{render_action(action)}{AVOID_SEPARATOR}{screen_id}"


def forbidden_moves(memory: ReflexionMemory) -> Dict[str, set]:
    """Screen id -> rendered actions that earlier reflections ruled out"""

    moves: Dict[str, set] = {}
    for reflection in memory.reflections:
        for line in reflection.splitlines():
            if not line.startswith(AVOID_PREFIX) or AVOID_SEPARATOR not in line:
                continue
            action_text, screen_id = line[len(AVOID_PREFIX):].rsplit(AVOID_SEPARATOR, 1)
            moves.setdefault(screen_id.strip(), set()).add(action_text.strip())
    return moves


@dataclass
class ScriptedActor:
    """
    Synthetic policy

    With probability equal to the effective skill it takes an optimal action
    that no reflection ruled out; otherwise a non-optimal, non-terminal one.
    """

    skill: float
    reflection_boost: float = 0.0
    rng_seed: int = 0
    policy_id: str = "scripted-actor"

    def __post_init__(self):
        if not 0.0 <= self.skill <= 1.0:
            raise ValueError("skill must be in [0, 1]")
        if self.reflection_boost < 0:
            raise ValueError("reflection_boost must be >= 0")

    def effective_skill(self, memory_size: int) -> float:
        return min(1.0, self.skill + self.reflection_boost * memory_size)

    def reset(self) -> None:
        pass

    def act(self, instruction: Instruction, memory: ReflexionMemory, observation: Dict[str, Any],
            rng_seed: int) -> Action:
        rng = np.random.default_rng(derive_seed(self.rng_seed, rng_seed))
        ruled_out = forbidden_moves(memory).get(observation["screen"], set())
        optimal_all = observation["optimal"]
        optimal = [a for a in optimal_all if render_action(a) not in ruled_out]
        others = [a for a in observation["available"]
                  if a not in optimal_all and a.kind != ActionKind.STOP and render_action(a) not in ruled_out]

        draw = rng.random()
        if optimal and draw < self.effective_skill(len(memory)):
            return optimal[int(rng.integers(len(optimal)))]
        if others:
            return others[int(rng.integers(len(others)))]
        if optimal:
            return optimal[int(rng.integers(len(optimal)))]
        return Action.swipe("down")


@dataclass(frozen=True)
class NoisyOracleEvaluator:
    fp_rate: float = 0.0
    fn_rate: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("fp_rate", "fn_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")


def judge_with_noise(oracle_success: bool, evaluator: NoisyOracleEvaluator, draw_seed: int) -> Verdict:
    """Oracle verdict flipped with the configured false-positive / false-negative rate"""

    draw = np.random.default_rng(derive_seed(evaluator.rng_seed, draw_seed)).random()
    if oracle_success:
        success = draw >= evaluator.fn_rate
    else:
        success = draw < evaluator.fp_rate
    status = VerdictStatus.SUCCESS if success else VerdictStatus.FAILURE
    flipped = success != oracle_success
    return Verdict(status, "noisy oracle (flipped)" if flipped else "noisy oracle")


class OracleJudge:
    def judge(self, trajectory: Trajectory, env: SandboxEnv, draw_seed: int) -> Verdict:
        success = env.oracle_success()
        return Verdict(VerdictStatus.SUCCESS if success else VerdictStatus.FAILURE, "oracle")


class NoisyJudge:
    def __init__(self, evaluator: NoisyOracleEvaluator):
        self.evaluator = evaluator

    def judge(self, trajectory: Trajectory, env: SandboxEnv, draw_seed: int) -> Verdict:
        return judge_with_noise(env.oracle_success(), self.evaluator, draw_seed)


class SandboxReflector:
    """
    Deterministic self-reflection for sandbox episodes

    A failed attempt yields an Avoid directive for its first non-progressing
    step. An attempt that actually succeeded (a false negative) has no such
    step, so the directive names its opening move and the plan is abandoned.
    """

    def reflect(self, task: Instruction, failed: Trajectory, memory: ReflexionMemory, env: SandboxEnv) -> str:
        if not env.actions:
            return "The attempt took no actions. Act before stopping."
        if env.oracle_success():
            return avoid_directive(env.actions[0], env.states[0].screen)
        for i, label in enumerate(env.step_labels()):
            if label in (StepLabel.AWAY_FROM_GOAL, StepLabel.NOT_SURE):
                return avoid_directive(env.actions[i], env.states[i].screen)
        return "The attempt made progress but ran out of steps. Move more directly toward the goal."


# ===== Rollouts and labels =====

def rollout(actor, task: SandboxTask, graph: ScreenGraph, seed: int, max_steps: int,
            blob_store: Optional[BlobStore] = None) -> Tuple[Trajectory, bool]:
    """
    Run one attempt of a task

    Args:
        actor: Any actor (ScriptedActor or a model-backed one)
        task: Sandbox task
        graph: The task's screen graph
        seed: Attempt seed; equal seeds give identical trajectories
        max_steps: Step budget, at least the optimal path length
        blob_store: Where synthetic frames are written, if anywhere

    Returns:
        (trajectory, oracle success)
    """

    env = SandboxEnv(task, graph, max_steps, getattr(actor, "policy_id", "sandbox"), blob_store)
    trajectory = run_attempt(actor, env, task.instruction, ReflexionMemory(), seed)
    return trajectory, env.oracle_success()


def synth_per_step_labels(trajectory: Trajectory, task: SandboxTask, graph: ScreenGraph) -> List[StepCategory]:
    """Ground-truth step categories from shortest-path distances"""

    model = graph.task_model(task)
    states = model.replay(trajectory.actions)
    return [StepCategory(model.label_step(a, b), "distance to goal")
            for a, b in zip(states, states[1:])]


def oracle_of(trajectory: Trajectory, task: SandboxTask, graph: ScreenGraph) -> bool:
    states = graph.task_model(task).replay(trajectory.actions)
    return task.oracle.check(states[-1])


def scripted_judge_table(trajectory: Trajectory, judged_success: bool, labels: Sequence[StepLabel],
                         params: GenerationParams = EVALUATION_PARAMS,
                         domain_tag: Optional[DomainTag] = None) -> Dict[str, str]:
    """
    Scripted responses for every request an evaluator can make about a trajectory

    Covers caption requests, both trajectory-level prompts and every per-step
    prompt, keyed by request digest. domain_tag must match the evaluator's
    override; None keys the prompts on the trajectory's own domain.
    """

    table: Dict[str, str] = {}
    for state in trajectory.states:
        request = build_caption_request(state)
        table[request_digest(request.to_messages(), params)] = state.caption

    status = "success" if judged_success else "failure"
    verdict_text = f"Thoughts: Sandbox judgment for {trajectory.task_id}.\nStatus: \"{status}\""
    table[request_digest(build_e2e_trajectory_prompt(trajectory, domain_tag), params)] = verdict_text
    table[request_digest(build_modular_trajectory_prompt(trajectory, domain_tag), params)] = verdict_text

    instruction = trajectory.instruction
    if domain_tag is not None:
        instruction = Instruction(instruction.text, instruction.task_id, DomainTag(domain_tag))
    for i, label in enumerate(labels):
        messages = build_step_prompt(instruction, trajectory.actions[i],
                                     trajectory.states[i], trajectory.states[i + 1], i)
        text = f"Thoughts: Step {i} of {trajectory.task_id}.\nResponse: \"{StepLabel(label).value}\""
        table.setdefault(request_digest(messages, params), text)
    return table
