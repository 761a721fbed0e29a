from pathlib import Path

import numpy as np
import pytest

from utils.errors import (MissingCaption, MissingResponse, MissingStatus, StepEvaluationError, UnrecognizedCategory,
                          UnrecognizedStatus)
from utils.judges import (Architecture, EvaluatorSpec, Granularity, RewardConfig, RewardSequence, StepCategory,
                          StepLabel, Verdict, VerdictStatus, build_e2e_trajectory_prompt,
                          build_modular_trajectory_prompt, build_step_prompt, evaluate, parse_step_verdict,
                          parse_trajectory_verdict, rewards_from_categories, rewards_from_verdict)
from utils.model_gateway import EVALUATION_PARAMS, ModelGateway, ScriptedBackend, request_digest
from utils.trajectory_core import Action, DomainTag, Instruction, State, Trajectory, screenshot_ref_for

GOLDEN_DIR = Path(__file__).parent / "golden"

HOME = '# Home\n- Button "Settings"\n- Button "Clock"'
SETTINGS = '# Settings\n- Button "Network & internet"\n- Back navigation available'
WIFI = '# Wi-Fi\n- Button "Saved networks"\n- Back navigation available'


def render(messages):
    return "".join(f"[{m.role.value}]\n{m.text}\n" for m in messages)


def golden(name):
    return (GOLDEN_DIR / name).read_text(encoding="utf-8")


def wifi_trajectory(domain=DomainTag.ANDROID, final_caption=WIFI, response="Opened Wi-Fi"):
    actions = (Action.click(0.5, 0.2), Action.type_text("wifi"), Action.press_enter(), Action.stop("Opened Wi-Fi"))
    captions = [HOME, SETTINGS, SETTINGS, WIFI, final_caption]
    states = tuple(State(screenshot_ref_for(f"wifi-{i}".encode()), (), c) for i, c in enumerate(captions))
    return Trajectory(Instruction("Open the Wi-Fi settings", "wifi-1", domain), actions, states, response, "policy-a")


def modular_spec(granularity=Granularity.TRAJECTORY_LEVEL, backend=None, **kwargs):
    backend = backend or ScriptedBackend(default_response='Thoughts: fine\nStatus: "success"')
    return EvaluatorSpec(Architecture.MODULAR, granularity, text_backend=backend, **kwargs)


# ===== Prompt goldens =====

@pytest.mark.parametrize("domain,name", [
    (DomainTag.WEB, "web_end_to_end.txt"),
    (DomainTag.ANDROID, "android_end_to_end.txt"),
    (DomainTag.IOS, "android_end_to_end.txt"),
    (DomainTag.SANDBOX, "android_end_to_end.txt"),
])
def test_end_to_end_prompt_matches_golden(domain, name):
    t = wifi_trajectory(domain)
    messages = build_e2e_trajectory_prompt(t)
    assert render(messages) == golden(name)
    assert messages[0].image_refs == ()
    assert messages[1].image_refs == (t.final_state.screenshot_ref,)


@pytest.mark.parametrize("domain,name", [
    (DomainTag.WEB, "web_modular.txt"),
    (DomainTag.ANDROID, "android_modular.txt"),
    (DomainTag.IOS, "android_modular.txt"),
    (DomainTag.SANDBOX, "android_modular.txt"),
])
def test_modular_prompt_matches_golden(domain, name):
    messages = build_modular_trajectory_prompt(wifi_trajectory(domain))
    assert render(messages) == golden(name)
    assert all(not m.image_refs for m in messages)


def test_domain_override_picks_template():
    messages = build_modular_trajectory_prompt(wifi_trajectory(DomainTag.ANDROID), DomainTag.WEB)
    assert render(messages) == golden("web_modular.txt")


def test_step_prompt_matches_golden():
    current = State(screenshot_ref_for(b"home"), (), HOME)
    after = State(screenshot_ref_for(b"settings"), (), SETTINGS)
    instruction = Instruction("Open the Wi-Fi settings", "wifi-1", DomainTag.WEB)
    assert render(build_step_prompt(instruction, Action.click(0.5, 0.2), current, after)) == golden("step_evaluator.txt")


def test_missing_response_renders_as_na():
    user = build_e2e_trajectory_prompt(wifi_trajectory(response=None))[1].text
    assert user.endswith("Bot response to the user: N/A.")


def test_modular_prompt_needs_final_caption():
    with pytest.raises(MissingCaption) as info:
        build_modular_trajectory_prompt(wifi_trajectory(final_caption=None))
    assert info.value.state_index == 4


def test_step_prompt_names_missing_caption():
    captioned = State(screenshot_ref_for(b"a"), (), "# A")
    blank = State(screenshot_ref_for(b"b"), (), None)
    instruction = Instruction("x", "t", DomainTag.ANDROID)
    with pytest.raises(MissingCaption) as info:
        build_step_prompt(instruction, Action.stop(), captioned, blank, step_index=3)
    assert info.value.state_index == 4


# ===== Verdict parsing =====

@pytest.mark.parametrize("text,expected", [
    ('Thoughts: ok\nStatus: "success"', "success"),
    ("Status: success", "success"),
    ('Status: "failure"', "failure"),
    ("STATUS: SUCCESS", "success"),
    ('**Status:** "success"', "success"),
    ("**Status**: failure", "failure"),
    ("Status: success.", "success"),
    ('Status: "success".', "success"),
    ("Status: 'failure'", "failure"),
    ("Status: `success`", "success"),
    ("  Status:   success  ", "success"),
    ("- Status: failure", "failure"),
    ("> Status: success", "success"),
    ("## Status: failure", "failure"),
    ("Status: “success”", "success"),
    ("Status : success", "success"),
    ("Status: failure\nThoughts: on second look it worked\nStatus: success", "success"),
    ("Thoughts: The status: unclear\nStatus: failure", "failure"),
    ("status:success", "success"),
    ("Status: [success]", "success"),
    ('Status: "Success"', "success"),
    ('Thoughts: done\n\nStatus: "failure"\n', "failure"),
])
def test_parse_trajectory_verdict(text, expected):
    assert parse_trajectory_verdict(text).status == VerdictStatus(expected)


def test_trajectory_verdict_keeps_thoughts():
    verdict = parse_trajectory_verdict('Thoughts: The Wi-Fi page is open.\nStatus: "success"')
    assert verdict == Verdict(VerdictStatus.SUCCESS, "The Wi-Fi page is open.")
    assert verdict.is_success


@pytest.mark.parametrize("text", ["", "The agent succeeded", "Thoughts: ok", "Verdict: success"])
def test_missing_status(text):
    with pytest.raises(MissingStatus):
        parse_trajectory_verdict(text)


@pytest.mark.parametrize("text", ["Status: partial", "Status: success or failure", "Status: ",
                                  'Status: "successful"'])
def test_unrecognized_status(text):
    with pytest.raises(UnrecognizedStatus):
        parse_trajectory_verdict(text)


@pytest.mark.parametrize("text,expected", [
    ('Thoughts: closer\nResponse: "towards-the-goal"', StepLabel.TOWARDS_GOAL),
    ("Response: goal-reached", StepLabel.GOAL_REACHED),
    ('Response: "not-sure".', StepLabel.NOT_SURE),
    ("RESPONSE: AWAY-FROM-THE-GOAL", StepLabel.AWAY_FROM_GOAL),
    ('**Response:** "goal-reached"', StepLabel.GOAL_REACHED),
    ("- Response: not-sure", StepLabel.NOT_SURE),
    ("Response: `towards-the-goal`", StepLabel.TOWARDS_GOAL),
    ("Response: 'away-from-the-goal'", StepLabel.AWAY_FROM_GOAL),
    ("Response : goal-reached", StepLabel.GOAL_REACHED),
    ("Response: “not-sure”", StepLabel.NOT_SURE),
    ("Response: not-sure\nThoughts: actually it moved on\nResponse: towards-the-goal", StepLabel.TOWARDS_GOAL),
    ("> Response: not-sure", StepLabel.NOT_SURE),
    ("## Response: towards-the-goal", StepLabel.TOWARDS_GOAL),
    ("Response: [goal-reached]", StepLabel.GOAL_REACHED),
    ("Response:goal-reached", StepLabel.GOAL_REACHED),
    ('Thoughts: x\nResponse: "not-sure"\n', StepLabel.NOT_SURE),
    ('Response: "Goal-Reached"', StepLabel.GOAL_REACHED),
    ("**Response**: towards-the-goal", StepLabel.TOWARDS_GOAL),
    (' Response: "away-from-the-goal". ', StepLabel.AWAY_FROM_GOAL),
    ("Response: *not-sure*", StepLabel.NOT_SURE),
    ("response: away-from-the-goal.", StepLabel.AWAY_FROM_GOAL),
])
def test_parse_step_verdict(text, expected):
    assert parse_step_verdict(text).value == expected


def test_step_verdict_keeps_thoughts():
    category = parse_step_verdict('Thoughts: Settings opened.\nResponse: "towards-the-goal"')
    assert category == StepCategory(StepLabel.TOWARDS_GOAL, "Settings opened.")


@pytest.mark.parametrize("text", ["", 'Status: "success"', "towards-the-goal"])
def test_missing_step_response(text):
    with pytest.raises(MissingResponse):
        parse_step_verdict(text)


@pytest.mark.parametrize("text", ["Response: towards the goal", "Response: done", 'Response: "goal reached"'])
def test_unrecognized_category(text):
    with pytest.raises(UnrecognizedCategory):
        parse_step_verdict(text)


# ===== Reward mappings =====

@pytest.mark.parametrize("n", [1, 2, 5, 12])
def test_trajectory_level_reward_shape(n):
    success = rewards_from_verdict(Verdict(VerdictStatus.SUCCESS), n)
    failure = rewards_from_verdict(Verdict(VerdictStatus.FAILURE), n)
    assert len(success) == len(failure) == n
    assert success.values == (0.0,) * (n - 1) + (1.0,)
    assert failure.values == (0.0,) * n
    assert success.judged_success and not failure.judged_success


def test_reward_shapes_on_generated_inputs():
    rng = np.random.default_rng(5)
    labels = list(StepLabel)
    for case in range(10_000):
        n = int(rng.integers(1, 40))
        if case % 2 == 0:
            success = bool(rng.random() < 0.5)
            status = VerdictStatus.SUCCESS if success else VerdictStatus.FAILURE
            rewards = rewards_from_verdict(Verdict(status), n)
            assert rewards.granularity == Granularity.TRAJECTORY_LEVEL
            assert rewards.values == (0.0,) * (n - 1) + (1.0 if success else 0.0,)
            assert rewards.judged_success == success
            continue

        p = float(rng.uniform(0.0, 1.0))
        config = RewardConfig(p=p, d=-float(rng.uniform(0.01, 2.0)), not_sure_value=float(rng.uniform(0.0, p)))
        drawn = [labels[i] for i in rng.integers(0, len(labels), size=n)]
        rewards = rewards_from_categories([StepCategory(label) for label in drawn], config)
        expected = {StepLabel.GOAL_REACHED: 1.0, StepLabel.TOWARDS_GOAL: config.p,
                    StepLabel.NOT_SURE: config.not_sure_value, StepLabel.AWAY_FROM_GOAL: config.d}
        assert rewards.granularity == Granularity.PER_STEP
        assert rewards.values == tuple(expected[label] for label in drawn)
        assert rewards.labels == tuple(label.value for label in drawn)
        assert rewards.judged_success == (StepLabel.GOAL_REACHED in drawn)


def test_trajectory_level_needs_an_action():
    with pytest.raises(ValueError):
        rewards_from_verdict(Verdict(VerdictStatus.SUCCESS), 0)


def test_category_rewards_follow_config():
    labels = [StepLabel.TOWARDS_GOAL, StepLabel.NOT_SURE, StepLabel.AWAY_FROM_GOAL, StepLabel.GOAL_REACHED]
    categories = [StepCategory(label) for label in labels]
    assert rewards_from_categories(categories).values == (0.5, 0.0, -1.0, 1.0)
    custom = RewardConfig(p=0.3, d=-0.5, not_sure_value=0.1)
    rewards = rewards_from_categories(categories, custom)
    assert rewards.values == (0.3, 0.1, -0.5, 1.0)
    assert rewards.labels == tuple(label.value for label in labels)
    assert rewards.judged_success


@pytest.mark.parametrize("kwargs", [{"d": 0.0}, {"p": 1.5}, {"p": 0.2, "not_sure_value": 0.3},
                                    {"not_sure_value": -0.1}])
def test_reward_config_rejects_bad_values(kwargs):
    with pytest.raises(ValueError):
        RewardConfig(**kwargs)


def test_trajectory_level_sequence_shape_is_enforced():
    with pytest.raises(ValueError):
        RewardSequence((1.0, 0.0), Granularity.TRAJECTORY_LEVEL)
    with pytest.raises(ValueError):
        RewardSequence((0.0, 0.5), Granularity.TRAJECTORY_LEVEL)
    with pytest.raises(ValueError):
        RewardSequence((), Granularity.PER_STEP)


def test_payload_round_trip():
    rewards = rewards_from_categories([StepCategory(StepLabel.TOWARDS_GOAL), StepCategory(StepLabel.NOT_SURE)])
    payload = rewards.to_payload("policy-b")
    assert payload["policy_id"] == "policy-b"
    assert RewardSequence.from_payload(payload) == rewards
    assert not rewards.judged_success


# ===== Evaluation =====

def test_trajectory_level_makes_one_call():
    gateway = ModelGateway()
    rewards = evaluate(wifi_trajectory(), modular_spec(), gateway)
    assert rewards.values == (0.0, 0.0, 0.0, 1.0)
    assert gateway.log.count() == 1


def test_end_to_end_uses_vision_backend():
    vision = ScriptedBackend(default_response="Thoughts: no\nStatus: failure", model_name="vision")
    spec = EvaluatorSpec(Architecture.END_TO_END, Granularity.TRAJECTORY_LEVEL, vision_backend=vision)
    gateway = ModelGateway()
    assert evaluate(wifi_trajectory(final_caption=None), spec, gateway).values == (0.0,) * 4
    assert gateway.log.entries[0]["model_name"] == "vision"


@pytest.mark.parametrize("workers", [1, 3])
def test_per_step_makes_one_call_per_action(workers):
    t = wifi_trajectory()
    labels = ["towards-the-goal", "not-sure", "towards-the-goal", "goal-reached"]
    table = {}
    for i, label in enumerate(labels):
        messages = build_step_prompt(t.instruction, t.actions[i], t.states[i], t.states[i + 1], i)
        table[request_digest(messages, EVALUATION_PARAMS)] = f'Thoughts: step {i}\nResponse: "{label}"'
    gateway = ModelGateway()
    spec = modular_spec(Granularity.PER_STEP, ScriptedBackend(table), max_workers=workers)

    rewards = evaluate(t, spec, gateway)
    assert rewards.values == (0.5, 0.0, 0.5, 1.0)
    assert rewards.labels == tuple(labels)
    assert gateway.log.count() == len(t.actions)


def test_per_step_failure_names_the_step():
    t = wifi_trajectory()
    table = {}
    for i in range(2):
        messages = build_step_prompt(t.instruction, t.actions[i], t.states[i], t.states[i + 1], i)
        table[request_digest(messages, EVALUATION_PARAMS)] = "Response: towards-the-goal"
    with pytest.raises(StepEvaluationError) as info:
        evaluate(t, modular_spec(Granularity.PER_STEP, ScriptedBackend(table)), ModelGateway())
    assert info.value.step_index == 2


def test_unparseable_step_answer_is_wrapped():
    spec = modular_spec(Granularity.PER_STEP, ScriptedBackend(default_response="Response: maybe"))
    with pytest.raises(StepEvaluationError) as info:
        evaluate(wifi_trajectory(), spec, ModelGateway())
    assert isinstance(info.value.cause, UnrecognizedCategory)
    assert info.value.step_index == 0


def test_evaluate_rejects_invalid_trajectory():
    t = wifi_trajectory()
    broken = Trajectory(t.instruction, t.actions, t.states[:3])
    with pytest.raises(ValueError, match="LengthMismatch"):
        evaluate(broken, modular_spec(), ModelGateway())


def test_evaluator_spec_wiring_rules():
    scripted = ScriptedBackend(default_response="x")
    with pytest.raises(ValueError):
        EvaluatorSpec(Architecture.END_TO_END, Granularity.TRAJECTORY_LEVEL, text_backend=scripted)
    with pytest.raises(ValueError):
        EvaluatorSpec(Architecture.END_TO_END, Granularity.PER_STEP, vision_backend=scripted)
    with pytest.raises(ValueError):
        EvaluatorSpec(Architecture.MODULAR, Granularity.TRAJECTORY_LEVEL, vision_backend=scripted)
    with pytest.raises(ValueError):
        modular_spec(max_workers=0)
    snapshot = modular_spec().snapshot()
    assert snapshot["architecture"] == "Modular"
    assert snapshot["text_backend"] == {"model_name": "scripted", "name": "scripted"}
