"""
Prompt Templates for Trajectory Evaluation
Judge, captioner and self-reflection prompts keyed by (domain, architecture, granularity)

Placeholders use `{name}` substitution via str.format. Text is kept byte-for-byte
stable: prompt digests key the response cache and scripted test tables, and the
template hash is written into every run manifest.
"""

import hashlib
import json
from typing import Dict, Optional, Tuple

_FORMAT_INSTRUCTIONS = """*IMPORTANT*
Format your response into two lines as shown below:

Thoughts: <your thoughts and reasoning process>"
Status: "success" or "failure\""""

_WEB_SYSTEM_INTRO = (
    "You are an expert in evaluating the performance of a web navigation agent. "
    "The agent is designed to help a human user navigate a website to complete a task. "
    "Given the user's intent, the agent's action history, the final state of the webpage, "
    "and the agent's response to the user, your goal is to decide whether the agent's "
    "execution is successful or not."
)

_WEB_TASK_TYPES = """There are three types of tasks:
1. Information seeking: The user wants to obtain certain information from the webpage, such as the information of a product, reviews, map info, comparison of map routes, etc. The bot's response must contain the information the user wants, or explicitly state that the information is not available. Otherwise, e.g. the bot encounters an exception and respond with the error content, the task is considered a failure. Besides, be careful about the sufficiency of the agent's actions. For example, when asked to list the top-searched items in a shop, the agent should order the items by the number of searches, and then return the top items. If the ordering action is missing, the task is likely to fail.
2. Site navigation: The user wants to navigate to a specific page. Carefully examine the bot's action history and the final state of the webpage to determine whether the bot successfully completes the task. No need to consider the bot's response.
3. Content modification: The user wants to modify the content of a webpage or configuration. Carefully examine the bot's action history and the final state of the webpage to determine whether the bot successfully completes the task. No need to consider the bot's response."""

_ANDROID_SYSTEM_E2E = (
    "You are an expert in evaluating the performance of an android navigation agent. "
    "The agent is designed to help a human user navigate the device to complete a task. "
    "Given the user's intent, and the final state of the screen, your goal is to decide "
    "whether the agent has successfully completed the task or not."
)

_ANDROID_SYSTEM_MODULAR = (
    "You are an expert in evaluating the performance of an android navigation agent. "
    "The agent is designed to help a human user navigate the device to complete a task. "
    "Given the user's intent, and the state of the screen, your goal is to decide "
    "whether the agent has successfully completed the task or not."
)

STEP_EVALUATOR_SYSTEM = """You are a GUI Trajectory Evaluator. Your task is to observe a bot's action within a graphical user interface (GUI) and classify its behavior into one of four categories based on its progress towards a specified goal. The categories are:

1. "towards-the-goal" - The bot is moving closer to achieving the goal.
2. "not-sure" - It's unclear if the bot's actions are helping reach the goal.
3. "goal-reached" - The bot has successfully completed the goal.
4. "away-from-the-goal" - The bot's actions are diverting it from the goal.

Please format your response as follows:

Thoughts: [Explain your reasoning here]
Response: "towards-the-goal", "not-sure", "goal-reached", or "away-from-the-goal"

Here are some example responses:

---

Example 1:
Thoughts: The goal is to 'set an alarm at 8:00 am.' Initially, the bot is on the home screen. After a tap action, it navigates to the alarm app, indicating progress towards the goal.
Response: "towards-the-goal"

Example 2:
Thoughts: The goal is to 'buy the latest iPhone on Amazon.' The bot starts at the checkout page on Amazon. After a tap action, the screen shows a successful purchase, signifying that the goal has been reached.
Response: "goal-reached"

Example 3:
Thoughts: The goal is to 'show me the weather in New York.' The bot begins on London's weather page. After pressing 'home', it returns to the home screen, moving away from the goal.
Response: "away-from-the-goal"

Example 4:
Thoughts: The goal is to 'buy some coffee on the Starbucks app.' The bot begins on the Amazon app. After pressing 'back,' it moves to the home screen, which is a prerequisite for opening the Starbucks app.
Response: "towards-the-goal"

Example 5:
Thoughts: The goal is to 'open YouTube.' The bot begins on the home screen. After a swipe, it appears to remain on the same page, suggesting no progress towards the goal.
Response: "not-sure"

Note:
You should be extra-careful when assigning "goal-reached" or "towards-the-goal" labels. If you are unsure, please select "not-sure" instead."""

# Keys: (domain_tag, architecture, granularity); "*" matches any domain
PROMPT_TEMPLATES: Dict[Tuple[str, str, str], Dict[str, str]] = {
    ("web", "EndToEnd", "trajectory_level"): {
        "name": "web-end-to-end",
        "system": (
            f"{_WEB_SYSTEM_INTRO}\n\n{_WEB_TASK_TYPES}\n\n"
            + _FORMAT_INSTRUCTIONS.replace('reasoning process>"', "reasoning process>")
        ),
        "user": (
            "User Intent: {intent}\n"
            "Action History:\n"
            "{last_actions}\n"
            "The last snapshot of the web page is shown in the image.\n"
            "\n"
            "Bot response to the user: {response}."
        ),
    },
    ("android", "EndToEnd", "trajectory_level"): {
        "name": "android-end-to-end",
        "system": f"{_ANDROID_SYSTEM_E2E}\n\n{_FORMAT_INSTRUCTIONS}",
        "user": (
            "User Intent: {intent}\n"
            "\n"
            "Action History:\n"
            "{last_actions}\n"
            "\n"
            "The last snapshot of the screen is shown in the image.\n"
            "\n"
            "Bot response to the user: {response}."
        ),
    },
    ("web", "Modular", "trajectory_level"): {
        "name": "web-caption-then-reason",
        "system": f"{_WEB_SYSTEM_INTRO}\n\n{_WEB_TASK_TYPES}\n\n{_FORMAT_INSTRUCTIONS}",
        "user": (
            "User Intent: {intent}\n"
            "\n"
            "Action History:\n"
            "{last_actions}\n"
            "\n"
            "The detailed final state of the webpage:\n"
            "\n"
            "```md\n"
            "{cap}\n"
            "```"
        ),
    },
    ("android", "Modular", "trajectory_level"): {
        "name": "android-caption-then-reason",
        "system": f"{_ANDROID_SYSTEM_MODULAR}\n\n{_FORMAT_INSTRUCTIONS}",
        "user": (
            "User Intent: {intent}\n"
            "\n"
            "Action History:\n"
            "{last_actions}\n"
            "\n"
            "The detailed final state of the screen:\n"
            "```md\n"
            "{cap}\n"
            "```"
        ),
    },
    ("*", "Modular", "per_step"): {
        "name": "gui-step-evaluator",
        "system": STEP_EVALUATOR_SYSTEM,
        "user": (
            "Goal: {intent}\n"
            "Original State:\n"
            "```md\n"
            "{current_state}\n"
            "```\n"
            "\n"
            "State after action: \"{action}\":\n"
            "```md\n"
            "{next_state}\n"
            "```"
        ),
    },
}

# Device-control domains without their own templates use the android ones
DOMAIN_FALLBACK = {
    "ios": "android",
    "sandbox": "android",
}

CAPTION_TEMPLATES = {
    # Harvesting captions from a strong vision model: screenshot only, no OCR block
    "collection": (
        "You are an advanced GUI captioner. Please describe this GUI interface in details "
        "and don't miss anything. Your response should be hierarchical and in Markdown format. "
        "Don't do paraphrase. Don't wrap your response in a code block."
    ),
    # Fine-tuned captioner at inference time
    "inference": "Please describe the screenshot above in details.\nOCR Result:\n{ocr_result}",
}

REFLECTION_TEMPLATE = {
    "system": (
        "You are an advanced reasoning agent that can improve based on self reflection. "
        "You will be given the history of a previous attempt at a device or web task. "
        "An external evaluator judged the attempt unsuccessful."
    ),
    "user": (
        "Task: {intent}\n"
        "\n"
        "Previous reflections:\n"
        "{reflections}\n"
        "\n"
        "Action history of the failed attempt:\n"
        "{last_actions}\n"
        "\n"
        "Final response to the user: {response}\n"
        "\n"
        "In a few sentences, diagnose a possible reason for failure and devise a new, concise, "
        "high level plan that aims to mitigate the same failure. Use complete sentences."
    ),
}


def resolve_template(domain_tag: str, architecture: str, granularity: str) -> Optional[Dict[str, str]]:
    """
    Look up the judge template for a triple

    Per-step requests share the GUI step-evaluator template; trajectory-level
    requests fall back through DOMAIN_FALLBACK. Returns None when no template
    exists (end-to-end per-step, for example).
    """

    if granularity == "per_step":
        return PROMPT_TEMPLATES.get(("*", architecture, granularity))
    key = (domain_tag, architecture, granularity)
    if key in PROMPT_TEMPLATES:
        return PROMPT_TEMPLATES[key]
    fallback = DOMAIN_FALLBACK.get(domain_tag)
    if fallback:
        return PROMPT_TEMPLATES.get((fallback, architecture, granularity))
    return None


def template_hash() -> str:
    """Content hash over every template asset, recorded in run manifests"""

    doc = {
        "judges": {"|".join(k): v for k, v in PROMPT_TEMPLATES.items()},
        "fallback": DOMAIN_FALLBACK,
        "captions": CAPTION_TEMPLATES,
        "reflection": REFLECTION_TEMPLATE,
    }
    blob = json.dumps(doc, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
