"""
Error Types
Exception hierarchy shared by the gateway, judges, refinement and CLI layers
"""

from typing import Optional


class AgentJudgeError(Exception):
    """Base class for every error raised by this package"""


# ===== Gateway =====

class GatewayError(AgentJudgeError):
    """A model call could not produce text"""


class GatewayTimeout(GatewayError):
    pass


class AuthFailure(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class UnknownScriptedRequest(GatewayError):
    """Scripted backend has no entry for the digest and no default response"""

    def __init__(self, digest: str):
        super().__init__(f"no scripted response for request digest {digest}")
        self.digest = digest


# ===== Judges =====

class VerdictParseError(AgentJudgeError):
    pass


class MissingStatus(VerdictParseError):
    pass


class UnrecognizedStatus(VerdictParseError):
    pass


class MissingResponse(VerdictParseError):
    pass


class UnrecognizedCategory(VerdictParseError):
    pass


class MissingCaption(AgentJudgeError):
    """A caption needed by the text-only evaluator path is absent"""

    def __init__(self, state_index: int):
        super().__init__(f"state {state_index} has no caption")
        self.state_index = state_index


class StepEvaluationError(AgentJudgeError):
    """Wraps a gateway or parse failure with the step that produced it"""

    def __init__(self, step_index: int, cause: Exception):
        super().__init__(f"step {step_index}: {type(cause).__name__}: {cause}")
        self.step_index = step_index
        self.cause = cause


# ===== Perception =====

class CaptionError(AgentJudgeError):
    def __init__(self, state_index: int, cause: Exception):
        super().__init__(f"captioning state {state_index} failed: {cause}")
        self.state_index = state_index
        self.cause = cause


# ===== Refinement =====

class GranularityMismatch(AgentJudgeError):
    pass


class EnvFailure(AgentJudgeError):
    pass


class EvaluatorFailure(AgentJudgeError):
    pass


# ===== Metrics =====

class EmptyInput(AgentJudgeError):
    pass


class MismatchedPolicySets(AgentJudgeError):
    pass


class ZeroBaseline(AgentJudgeError):
    pass


# ===== Sandbox =====

class UnreachableScreen(AgentJudgeError):
    pass


class SuiteFormatError(AgentJudgeError):
    pass


# ===== CLI / store =====

class ConfigError(AgentJudgeError):
    """Config or schema problem, reported with its location"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = path or "<config>"
        if line is not None:
            location = f"{location}:{line}"
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line


class MissingRunError(AgentJudgeError):
    pass
