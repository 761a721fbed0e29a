"""
Trajectory Core Module
Data model for agent trajectories: instructions, the action grammar with its
canonical string form, screen states, validation and the iOS swipe remapping
"""

import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)


class DomainTag(str, Enum):
    WEB = "web"
    ANDROID = "android"
    IOS = "ios"
    SANDBOX = "sandbox"


class ActionKind(str, Enum):
    CLICK = "Click"
    TYPE = "Type"
    SWIPE = "Swipe"
    PRESS_HOME = "PressHome"
    PRESS_BACK = "PressBack"
    PRESS_ENTER = "PressEnter"
    STOP = "Stop"
    RAW = "Raw"


class SwipeDirection(str, Enum):
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"


class RemapMode(str, Enum):
    COLLECTION = "collection"
    EVALUATION = "evaluation"


# Canonical key names rendered by `press "<Key>"`
PRESS_KEYS = {
    ActionKind.PRESS_HOME: "Home",
    ActionKind.PRESS_BACK: "Back",
    ActionKind.PRESS_ENTER: "Enter",
}


@dataclass(frozen=True)
class Instruction:
    text: str
    task_id: str
    domain_tag: DomainTag = DomainTag.WEB


@dataclass(frozen=True)
class Action:
    """
    One agent action

    Coordinates are normalized to [0, 1] and kept at two decimals so that the
    canonical string form round-trips exactly.
    """

    kind: ActionKind
    coords: Optional[Tuple[float, float]] = None
    text: Optional[str] = None
    direction: Optional[SwipeDirection] = None

    def __post_init__(self):
        kind = self.kind
        if kind == ActionKind.CLICK:
            if self.coords is None:
                raise ValueError("Click requires coords")
            x, y = self.coords
            if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
                raise ValueError(f"Click coords out of range: {self.coords}")
            object.__setattr__(self, "coords", (round(float(x), 2), round(float(y), 2)))
        elif self.coords is not None:
            raise ValueError(f"{kind.value} does not take coords")

        if kind in (ActionKind.TYPE, ActionKind.RAW) and self.text is None:
            raise ValueError(f"{kind.value} requires text")
        if kind not in (ActionKind.TYPE, ActionKind.RAW, ActionKind.STOP) and self.text is not None:
            raise ValueError(f"{kind.value} does not take text")

        if kind == ActionKind.SWIPE:
            if self.direction is None:
                raise ValueError("Swipe requires direction")
            object.__setattr__(self, "direction", SwipeDirection(self.direction))
        elif self.direction is not None:
            raise ValueError(f"{kind.value} does not take a direction")

    # ----- factories -----

    @classmethod
    def click(cls, x: float, y: float) -> "Action":
        return cls(ActionKind.CLICK, coords=(x, y))

    @classmethod
    def type_text(cls, text: str) -> "Action":
        return cls(ActionKind.TYPE, text=text)

    @classmethod
    def swipe(cls, direction: Union[str, SwipeDirection]) -> "Action":
        return cls(ActionKind.SWIPE, direction=SwipeDirection(direction))

    @classmethod
    def press_home(cls) -> "Action":
        return cls(ActionKind.PRESS_HOME)

    @classmethod
    def press_back(cls) -> "Action":
        return cls(ActionKind.PRESS_BACK)

    @classmethod
    def press_enter(cls) -> "Action":
        return cls(ActionKind.PRESS_ENTER)

    @classmethod
    def stop(cls, answer: Optional[str] = None) -> "Action":
        return cls(ActionKind.STOP, text=answer)

    @classmethod
    def raw(cls, text: str) -> "Action":
        return cls(ActionKind.RAW, text=text)

    def __str__(self) -> str:
        return render_action(self)


@dataclass(frozen=True)
class OcrToken:
    text: str
    bbox: Tuple[float, float, float, float]
    confidence: float

    @property
    def center(self) -> Tuple[float, float]:
        x0, y0, x1, y1 = self.bbox
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)


@dataclass(frozen=True)
class ScreenshotRef:
    """Content-addressed screenshot: sha256 of the bytes plus where they live"""

    sha256: str
    locator: str = ""

    def __post_init__(self):
        if not self.locator:
            object.__setattr__(self, "locator", blob_locator(self.sha256))


@dataclass(frozen=True)
class State:
    screenshot_ref: ScreenshotRef
    ocr: Optional[Tuple[OcrToken, ...]] = None
    caption: Optional[str] = None


@dataclass(frozen=True)
class Trajectory:
    instruction: Instruction
    actions: Tuple[Action, ...]
    states: Tuple[State, ...]
    agent_response: Optional[str] = None
    policy_id: str = "unknown"

    @property
    def task_id(self) -> str:
        return self.instruction.task_id

    @property
    def final_state(self) -> State:
        return self.states[-1]

    def with_captions(self, captions: Sequence[Optional[str]]) -> "Trajectory":
        """Copy with `caption` replaced state by state"""
        states = tuple(replace(s, caption=c) for s, c in zip(self.states, captions))
        return replace(self, states=states)


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str
    message: str = ""


# ===== Action grammar =====

_CLICK_RE = re.compile(r"^click\s*\[\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\]$", re.IGNORECASE)
_TYPE_RE = re.compile(r'^type\s+(".*")$', re.IGNORECASE | re.DOTALL)
_SWIPE_RE = re.compile(r'^swipe\s+"?(up|down|left|right)"?$', re.IGNORECASE)
_PRESS_RE = re.compile(r'^press\s+"?(home|back|enter)"?$', re.IGNORECASE)
_STOP_RE = re.compile(r'^stop(?:\s+(".*"))?$', re.IGNORECASE | re.DOTALL)

_PRESS_BY_NAME = {name.lower(): kind for kind, name in PRESS_KEYS.items()}


def _quote(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


def _unquote(quoted: str) -> Optional[str]:
    try:
        value = json.loads(quoted)
    except json.JSONDecodeError:
        return None
    return value if isinstance(value, str) else None


def parse_action(text: str) -> Action:
    """
    Parse an action string

    Any string outside the canonical grammar becomes Raw(text); this never raises.

    Args:
        text: Action string produced by an agent or by render_action

    Returns:
        The matching Action
    """

    stripped = text.strip()

    match = _CLICK_RE.match(stripped)
    if match:
        x, y = float(match.group(1)), float(match.group(2))
        if 0.0 <= x <= 1.0 and 0.0 <= y <= 1.0:
            return Action.click(x, y)
        return Action.raw(text)

    match = _TYPE_RE.match(stripped)
    if match:
        value = _unquote(match.group(1))
        if value is not None:
            return Action.type_text(value)
        return Action.raw(text)

    match = _SWIPE_RE.match(stripped)
    if match:
        return Action.swipe(match.group(1).lower())

    match = _PRESS_RE.match(stripped)
    if match:
        return Action(_PRESS_BY_NAME[match.group(1).lower()])

    match = _STOP_RE.match(stripped)
    if match:
        if match.group(1) is None:
            return Action.stop()
        answer = _unquote(match.group(1))
        if answer is not None:
            return Action.stop(answer)

    return Action.raw(text)


def render_action(action: Action) -> str:
    """Canonical string form of an action (inverse of parse_action)"""

    kind = action.kind
    if kind == ActionKind.CLICK:
        x, y = action.coords
        return f"click [{x:.2f}, {y:.2f}]"
    if kind == ActionKind.TYPE:
        return f"Type {_quote(action.text)}"
    if kind == ActionKind.SWIPE:
        return f'swipe "{action.direction.value}"'
    if kind in PRESS_KEYS:
        return f'press "{PRESS_KEYS[kind]}"'
    if kind == ActionKind.STOP:
        return "stop" if action.text is None else f"stop {_quote(action.text)}"
    return action.text


def remap_ios_action(action: Action, mode: Union[str, RemapMode], rng_seed: int) -> Action:
    """
    Bridge the Android swipe-up gesture to the iOS home screen

    Swipe up opens the app drawer on Android; iOS has no drawer, so the gesture
    becomes a horizontal swipe: always right during evaluation, left or right
    with equal probability during data collection.

    Args:
        action: Action in the Android-aligned action space
        mode: 'collection' or 'evaluation'
        rng_seed: Seed of the generator used in collection mode

    Returns:
        The remapped action (every other action passes through unchanged)
    """

    if action.kind != ActionKind.SWIPE or action.direction != SwipeDirection.UP:
        return action
    if RemapMode(mode) == RemapMode.EVALUATION:
        return Action.swipe(SwipeDirection.RIGHT)
    rng = np.random.default_rng(rng_seed)
    return Action.swipe(SwipeDirection.RIGHT if rng.random() < 0.5 else SwipeDirection.LEFT)


# ===== Validation =====

def _validate_ocr(tokens: Sequence[OcrToken], where: str) -> List[Violation]:
    violations = []
    for j, token in enumerate(tokens):
        x0, y0, x1, y1 = token.bbox
        in_range = all(0.0 <= v <= 1.0 for v in token.bbox)
        if not in_range or not (x0 < x1 and y0 < y1):
            violations.append(Violation(f"{where}.ocr[{j}]", "InvalidOcrBox",
                                        f"bbox {token.bbox} is not a normalized box"))
        if not 0.0 <= token.confidence <= 1.0:
            violations.append(Violation(f"{where}.ocr[{j}]", "InvalidOcrConfidence",
                                        f"confidence {token.confidence} outside [0, 1]"))
    return violations


def validate_trajectory(t: Trajectory) -> List[Violation]:
    """
    Check the Trajectory invariants

    Args:
        t: Trajectory to check

    Returns:
        List of violations; empty iff every invariant holds
    """

    violations = []

    if not t.instruction.text.strip():
        violations.append(Violation("instruction.text", "EmptyInstruction", "instruction text is empty"))
    if not t.instruction.task_id:
        violations.append(Violation("instruction.task_id", "EmptyTaskId", "task id is empty"))

    if len(t.actions) == 0:
        violations.append(Violation("actions", "EmptyActionSequence", "a trajectory needs at least one action"))
    if len(t.states) != len(t.actions) + 1:
        violations.append(Violation("states", "LengthMismatch",
                                    f"{len(t.actions)} actions need {len(t.actions) + 1} states, got {len(t.states)}"))

    for i, state in enumerate(t.states):
        if state.caption is not None and not state.caption.strip():
            violations.append(Violation(f"states[{i}].caption", "EmptyCaption", "caption present but empty"))
        if state.ocr:
            violations.extend(_validate_ocr(state.ocr, f"states[{i}]"))

    return violations


def validate_trajectories(trajectories: Sequence[Trajectory]) -> List[Violation]:
    """Run-level validation: per-trajectory invariants plus task id uniqueness"""

    violations = []
    seen = set()
    for t in trajectories:
        for v in validate_trajectory(t):
            violations.append(replace(v, field=f"{t.task_id}.{v.field}"))
        if t.task_id in seen:
            violations.append(Violation(f"{t.task_id}.instruction.task_id", "DuplicateTaskId",
                                        f"task id {t.task_id} appears more than once"))
        seen.add(t.task_id)
    return violations


# ===== Content-addressed blobs =====

def blob_locator(sha256: str) -> str:
    return f"blobs/{sha256}.png"


def screenshot_ref_for(data: bytes) -> ScreenshotRef:
    """Content address of screenshot bytes (equal bytes give equal refs)"""
    return ScreenshotRef(hashlib.sha256(data).hexdigest())


class BlobStore:
    """Directory of screenshot bytes named `<sha256>.png`"""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def put(self, data: bytes) -> ScreenshotRef:
        ref = screenshot_ref_for(data)
        path = self.root / f"{ref.sha256}.png"
        if not path.exists():
            self.root.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(f"{path.name}.{threading.get_ident()}.tmp")
            tmp.write_bytes(data)
            os.replace(tmp, path)
        return ref

    def get(self, ref: ScreenshotRef) -> bytes:
        data = (self.root / f"{ref.sha256}.png").read_bytes()
        if hashlib.sha256(data).hexdigest() != ref.sha256:
            raise ValueError(f"blob {ref.sha256} does not match its content hash")
        return data

    def exists(self, ref: ScreenshotRef) -> bool:
        return (self.root / f"{ref.sha256}.png").exists()


# ===== JSONL codec =====

def trajectory_to_record(t: Trajectory) -> Dict[str, Any]:
    """JSONL record for one trajectory"""

    return {
        "task_id": t.instruction.task_id,
        "instruction": t.instruction.text,
        "domain": t.instruction.domain_tag.value,
        "policy_id": t.policy_id,
        "actions": [render_action(a) for a in t.actions],
        "screenshots": [s.screenshot_ref.sha256 for s in t.states],
        "ocr": [
            None if s.ocr is None else [
                {"text": tok.text, "bbox": list(tok.bbox), "confidence": tok.confidence}
                for tok in s.ocr
            ]
            for s in t.states
        ],
        "captions": [s.caption for s in t.states],
        "response": t.agent_response,
    }


def trajectory_from_record(record: Dict[str, Any]) -> Trajectory:
    """
    Build a Trajectory from a JSONL record

    The record is validated against the trajectory schema first; pydantic's
    ValidationError propagates for malformed records.
    """

    from utils.schemas import TrajectoryRecord

    rec = TrajectoryRecord.model_validate(record)
    n_states = len(rec.screenshots)
    ocr = list(rec.ocr) + [None] * (n_states - len(rec.ocr))
    captions = list(rec.captions) + [None] * (n_states - len(rec.captions))

    states = []
    for sha, tokens, caption in zip(rec.screenshots, ocr, captions):
        ocr_tokens = None
        if tokens is not None:
            ocr_tokens = tuple(OcrToken(tok.text, tuple(tok.bbox), tok.confidence) for tok in tokens)
        states.append(State(ScreenshotRef(sha), ocr_tokens, caption))

    return Trajectory(
        instruction=Instruction(rec.instruction, rec.task_id, DomainTag(rec.domain)),
        actions=tuple(parse_action(a) for a in rec.actions),
        states=tuple(states),
        agent_response=rec.response,
        policy_id=rec.policy_id,
    )


def dumps_record(record: Dict[str, Any]) -> str:
    """Canonical JSON line (sorted keys, no whitespace) for byte-stable files"""
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def trajectory_digest(t: Trajectory) -> str:
    return hashlib.sha256(dumps_record(trajectory_to_record(t)).encode("utf-8")).hexdigest()


def write_trajectories(path: Union[str, Path], trajectories: Sequence[Trajectory]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for t in trajectories:
            fh.write(dumps_record(trajectory_to_record(t)) + "\n")
    return len(trajectories)


@dataclass
class LoadedLine:
    """One line of a trajectory file: the parsed trajectory or the reason it failed"""

    line_no: int
    trajectory: Optional[Trajectory] = None
    error: Optional[str] = None
    task_id: Optional[str] = None
    violations: List[Violation] = field(default_factory=list)


def iter_trajectory_file(path: Union[str, Path]) -> Iterator[LoadedLine]:
    """
    Read a trajectory JSONL file line by line

    Malformed lines are reported, not raised, so one bad record does not sink
    the rest of a run.
    """

    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                yield LoadedLine(line_no, error=f"invalid JSON: {e.msg}")
                continue
            task_id = record.get("task_id") if isinstance(record, dict) else None
            try:
                trajectory = trajectory_from_record(record)
            except Exception as e:
                yield LoadedLine(line_no, error=f"schema: {e}", task_id=task_id)
                continue
            violations = validate_trajectory(trajectory)
            if violations:
                rules = ", ".join(v.rule for v in violations)
                yield LoadedLine(line_no, error=f"invalid trajectory: {rules}",
                                 task_id=task_id, violations=violations)
                continue
            yield LoadedLine(line_no, trajectory=trajectory, task_id=task_id)


def load_trajectories(path: Union[str, Path]) -> List[Trajectory]:
    """Strict loader: every line must parse and validate"""

    trajectories = []
    for loaded in iter_trajectory_file(path):
        if loaded.error:
            raise ValueError(f"{path}:{loaded.line_no}: {loaded.error}")
        trajectories.append(loaded.trajectory)
    return trajectories
