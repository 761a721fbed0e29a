import json

import numpy as np
import pytest

from utils.trajectory_core import (Action, ActionKind, BlobStore, DomainTag, Instruction, OcrToken, ScreenshotRef,
                                   State, SwipeDirection, Trajectory, dumps_record, iter_trajectory_file,
                                   load_trajectories, parse_action, remap_ios_action, render_action,
                                   screenshot_ref_for, trajectory_from_record, trajectory_to_record,
                                   validate_trajectories, validate_trajectory, write_trajectories)


def make_trajectory(task_id="t-1", actions=None, captions=True, response=None):
    actions = actions or [Action.click(0.5, 0.2), Action.stop()]
    states = []
    for i in range(len(actions) + 1):
        ref = screenshot_ref_for(f"{task_id}-frame-{i}".encode())
        ocr = (OcrToken(f"token{i}", (0.1, 0.1, 0.3, 0.2), 0.9),)
        states.append(State(ref, ocr, f"# Screen {i}" if captions else None))
    return Trajectory(Instruction("Open settings", task_id, DomainTag.ANDROID), tuple(actions), tuple(states),
                      response, "policy-a")


@pytest.mark.parametrize("text,expected", [
    ("click [0.50, 0.25]", Action.click(0.5, 0.25)),
    ("CLICK[0.5,0.25]", Action.click(0.5, 0.25)),
    ('Type "hello world"', Action.type_text("hello world")),
    ('type "say \\"hi\\""', Action.type_text('say "hi"')),
    ('swipe "up"', Action.swipe("up")),
    ("swipe left", Action.swipe("left")),
    ('press "Home"', Action.press_home()),
    ("press back", Action.press_back()),
    ('press "ENTER"', Action.press_enter()),
    ("stop", Action.stop()),
    ('stop "42 GB"', Action.stop("42 GB")),
])
def test_parse_action_grammar(text, expected):
    assert parse_action(text) == expected


@pytest.mark.parametrize("text", [
    "click [1.50, 0.25]",
    "scroll down",
    'Type "unterminated',
    "",
    "press Tab",
])
def test_parse_action_falls_back_to_raw(text):
    action = parse_action(text)
    assert action.kind == ActionKind.RAW
    assert action.text == text


def test_render_is_canonical():
    assert render_action(Action.click(0.5, 0.25)) == "click [0.50, 0.25]"
    assert render_action(Action.type_text("x")) == 'Type "x"'
    assert render_action(Action.swipe("down")) == 'swipe "down"'
    assert render_action(Action.press_home()) == 'press "Home"'
    assert render_action(Action.stop()) == "stop"
    assert render_action(Action.stop("a")) == 'stop "a"'
    assert render_action(Action.raw("open the app")) == "open the app"


ALPHABET = list("abcXYZ019 .,:;!?-_/") + ['"', "\\", "\n", "\t", "\u00e9", "\u2192", "\u4e2d"]
RAW_WORDS = ["open", "the", "app", "scroll", "down", "wait", "long-press", "menu", "3"]


def random_text(rng, alphabet=ALPHABET):
    return "".join(str(c) for c in rng.choice(alphabet, size=int(rng.integers(1, 12))))


def random_action(rng):
    kind = ActionKind(str(rng.choice([k.value for k in ActionKind])))
    if kind == ActionKind.CLICK:
        return Action.click(*(rng.integers(0, 101, size=2) / 100))
    if kind == ActionKind.TYPE:
        return Action.type_text(random_text(rng))
    if kind == ActionKind.SWIPE:
        return Action.swipe(str(rng.choice([d.value for d in SwipeDirection])))
    if kind == ActionKind.STOP:
        return Action.stop(random_text(rng) if rng.random() < 0.5 else None)
    if kind == ActionKind.RAW:
        return Action.raw(" ".join(str(w) for w in rng.choice(RAW_WORDS, size=int(rng.integers(2, 5)))))
    return Action(kind)


def test_render_then_parse_is_identity_on_generated_actions():
    rng = np.random.default_rng(11)
    seen = set()
    for _ in range(5000):
        action = random_action(rng)
        seen.add(action.kind)
        assert parse_action(render_action(action)) == action
    assert seen == set(ActionKind)


def test_click_coords_rounded_and_checked():
    assert Action.click(0.123, 0.456).coords == (0.12, 0.46)
    with pytest.raises(ValueError):
        Action.click(1.2, 0.1)
    with pytest.raises(ValueError):
        Action(ActionKind.SWIPE)


def test_ios_remap_evaluation_is_always_right():
    for seed in range(20):
        assert remap_ios_action(Action.swipe("up"), "evaluation", seed) == Action.swipe("right")


def test_ios_remap_collection_uses_both_directions():
    directions = {remap_ios_action(Action.swipe("up"), "collection", seed).direction for seed in range(64)}
    assert directions == {SwipeDirection.LEFT, SwipeDirection.RIGHT}
    assert remap_ios_action(Action.swipe("up"), "collection", 7) == remap_ios_action(Action.swipe("up"), "collection", 7)


def test_ios_remap_collection_is_a_fair_coin():
    rights = sum(remap_ios_action(Action.swipe("up"), "collection", seed).direction == SwipeDirection.RIGHT
                 for seed in range(10_000))
    assert 0.48 <= rights / 10_000 <= 0.52


def test_ios_remap_leaves_other_actions():
    for action in (Action.swipe("down"), Action.click(0.1, 0.1), Action.press_home()):
        assert remap_ios_action(action, "collection", 0) == action


def test_validate_trajectory_accepts_well_formed():
    assert validate_trajectory(make_trajectory()) == []


def test_validate_trajectory_reports_violations():
    t = make_trajectory()
    broken = Trajectory(Instruction("  ", "", DomainTag.WEB), (), t.states[:1])
    rules = {v.rule for v in validate_trajectory(broken)}
    assert {"EmptyInstruction", "EmptyTaskId", "EmptyActionSequence"} <= rules

    mismatch = Trajectory(t.instruction, t.actions, t.states[:2])
    assert [v.rule for v in validate_trajectory(mismatch)] == ["LengthMismatch"]

    bad_ocr = State(t.states[0].screenshot_ref, (OcrToken("x", (0.5, 0.5, 0.4, 0.6), 1.5),), "cap")
    rules = {v.rule for v in validate_trajectory(Trajectory(t.instruction, t.actions, (bad_ocr,) + t.states[1:]))}
    assert rules == {"InvalidOcrBox", "InvalidOcrConfidence"}


def test_validate_trajectories_flags_duplicate_task_ids():
    rules = [v.rule for v in validate_trajectories([make_trajectory("a"), make_trajectory("a")])]
    assert rules == ["DuplicateTaskId"]


def test_blob_store_is_content_addressed(tmp_path):
    store = BlobStore(tmp_path / "blobs")
    ref = store.put(b"frame bytes")
    assert ref == screenshot_ref_for(b"frame bytes")
    assert ref.locator == f"blobs/{ref.sha256}.png"
    assert store.put(b"frame bytes") == ref
    assert store.get(ref) == b"frame bytes"
    assert store.exists(ref)
    assert not store.exists(ScreenshotRef("0" * 64))


def test_record_round_trip_preserves_trajectory():
    t = make_trajectory(actions=[Action.type_text("ä \"q\""), Action.swipe("up"), Action.stop("done")],
                        response="done")
    record = trajectory_to_record(t)
    assert trajectory_from_record(json.loads(dumps_record(record))) == t


def test_dumps_record_is_canonical():
    line = dumps_record({"b": 1, "a": "é"})
    assert line == '{"a":"é","b":1}'


def test_iter_trajectory_file_reports_bad_lines(tmp_path):
    path = tmp_path / "trajectories.jsonl"
    write_trajectories(path, [make_trajectory("a"), make_trajectory("b")])
    with path.open("a", encoding="utf-8") as fh:
        fh.write("{not json\n")
        record = trajectory_to_record(make_trajectory("c"))
        record["screenshots"] = record["screenshots"][:1]
        fh.write(dumps_record(record) + "\n")

    loaded = list(iter_trajectory_file(path))
    assert [x.line_no for x in loaded] == [1, 2, 3, 4]
    assert [x.trajectory is not None for x in loaded] == [True, True, False, False]
    assert loaded[2].error.startswith("invalid JSON")
    assert loaded[3].task_id == "c"

    with pytest.raises(ValueError, match=":3:"):
        load_trajectories(path)
