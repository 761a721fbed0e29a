"""
Configuration Module
JSON config documents for evaluators, actors and sandbox generation, validated
with pydantic and turned into runtime objects
"""

import json
import logging
from pathlib import Path
from typing import List, Literal, Optional, Type, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from utils.errors import ConfigError
from utils.judges import EvaluatorSpec, RewardConfig
from utils.model_gateway import Backend, EndpointConfig, GenerationParams, ScriptedBackend
from utils.sandbox import NoisyOracleEvaluator

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EndpointSettings(_Config):
    base_url: str
    model_name: str
    auth_token_env: Optional[str] = None
    timeout: float = Field(default=60.0, gt=0)
    max_retries: int = Field(default=3, ge=0)
    max_in_flight: int = Field(default=4, ge=1)
    name: Optional[str] = None

    def to_endpoint(self) -> EndpointConfig:
        return EndpointConfig(**self.model_dump())


class RewardSettings(_Config):
    p: float = 0.5
    d: float = -1.0
    not_sure_value: float = 0.0

    @model_validator(mode="after")
    def _order(self):
        if not (self.d < 0 <= self.not_sure_value <= self.p <= 1):
            raise ValueError("reward_config needs d < 0 <= not_sure_value <= p <= 1")
        return self


class EvaluatorConfig(_Config):
    """
    Evaluator document

    kind "model" judges through the gateway; "oracle" and "noisy" only apply to
    sandbox tasks, where the task predicate is known.
    """

    kind: Literal["model", "oracle", "noisy"] = "model"
    architecture: Literal["EndToEnd", "Modular"] = "Modular"
    granularity: Literal["trajectory_level", "per_step"] = "trajectory_level"
    domain_tag: Optional[Literal["web", "android", "ios", "sandbox"]] = None
    vision_endpoint: Optional[EndpointSettings] = None
    text_endpoint: Optional[EndpointSettings] = None
    captioner_endpoint: Optional[EndpointSettings] = None
    reward_config: RewardSettings = Field(default_factory=RewardSettings)
    temperature: float = Field(default=0.0, ge=0)
    max_tokens: int = Field(default=1024, gt=0)
    max_workers: int = Field(default=1, ge=1)
    scripted_table: Optional[str] = None
    scripted_default_response: Optional[str] = None
    cache_dir: Optional[str] = None
    fp_rate: float = Field(default=0.0, ge=0, le=1)
    fn_rate: float = Field(default=0.0, ge=0, le=1)

    @model_validator(mode="after")
    def _combination(self):
        if self.kind == "model" and self.architecture == "EndToEnd" and self.granularity == "per_step":
            raise ValueError("per-step evaluation needs the Modular architecture")
        return self


class ActorConfig(_Config):
    skill: float = Field(default=0.5, ge=0, le=1)
    reflection_boost: float = Field(default=0.2, ge=0)
    max_steps: int = Field(default=12, ge=1)
    policy_id: str = "scripted-actor"


class PolicySettings(_Config):
    policy_id: str
    skill: float = Field(ge=0, le=1)


def _default_policies() -> List[PolicySettings]:
    return [PolicySettings(policy_id=f"policy-{name}", skill=skill)
            for name, skill in (("a", 0.9), ("b", 0.7), ("c", 0.5), ("d", 0.3))]


class SandboxGenConfig(_Config):
    suite: Optional[str] = None
    policies: List[PolicySettings] = Field(default_factory=_default_policies, min_length=1)
    max_steps: int = Field(default=12, ge=1)
    scripted_fp_rate: float = Field(default=0.0, ge=0, le=1)
    scripted_fn_rate: float = Field(default=0.0, ge=0, le=1)
    # domain override the scripted table is keyed for; match the evaluator config
    domain_tag: Optional[Literal["web", "android", "ios", "sandbox"]] = None


def _line_of(text: str, loc) -> Optional[int]:
    """Best-effort line of the first key in a validation error location"""

    for part in reversed([p for p in loc if isinstance(p, str)]):
        needle = f'"{part}"'
        for i, line in enumerate(text.splitlines(), start=1):
            if needle in line:
                return i
    return None


def load_config(path: Union[str, Path], model: Type[ModelT]) -> ModelT:
    """
    Read and validate a JSON config document

    Args:
        path: Config file
        model: Pydantic model to validate against

    Returns:
        The validated model

    Raises:
        ConfigError: unreadable file, invalid JSON or failed validation, with its line
    """

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", str(path))
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg}", str(path), e.lineno)
    try:
        return model.model_validate(doc)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"{where}: {first['msg']}", str(path), _line_of(text, first["loc"]))


def generation_params(cfg: EvaluatorConfig) -> GenerationParams:
    return GenerationParams(temperature=cfg.temperature, max_tokens=cfg.max_tokens)


def build_backend(cfg: EvaluatorConfig, endpoint: Optional[EndpointSettings], backend_mode: str,
                  base_dir: Path) -> Optional[Backend]:
    """Scripted backend from the config's table, or the named HTTP endpoint"""

    if backend_mode == "scripted":
        if cfg.scripted_table:
            table_path = (base_dir / cfg.scripted_table).resolve()
            if not table_path.exists():
                raise ConfigError(f"scripted table {table_path} does not exist", str(base_dir))
            backend = ScriptedBackend.from_file(table_path)
            if cfg.scripted_default_response is not None:
                backend.default_response = cfg.scripted_default_response
            return backend
        if cfg.scripted_default_response is not None:
            return ScriptedBackend(default_response=cfg.scripted_default_response)
        raise ConfigError("scripted backend needs scripted_table or scripted_default_response")
    if backend_mode == "endpoint":
        return endpoint.to_endpoint() if endpoint else None
    raise ConfigError(f"unknown backend mode {backend_mode!r}")


def build_evaluator_spec(cfg: EvaluatorConfig, backend_mode: str, base_dir: Path) -> EvaluatorSpec:
    """EvaluatorSpec for a model evaluator config"""

    if cfg.kind != "model":
        raise ConfigError(f"evaluator kind {cfg.kind!r} has no model backend")
    vision = text = None
    if cfg.architecture == "EndToEnd":
        vision = build_backend(cfg, cfg.vision_endpoint, backend_mode, base_dir)
        if vision is None:
            raise ConfigError("an EndToEnd evaluator needs vision_endpoint")
    else:
        text = build_backend(cfg, cfg.text_endpoint, backend_mode, base_dir)
        if text is None:
            raise ConfigError("a Modular evaluator needs text_endpoint")
    try:
        return EvaluatorSpec(
            architecture=cfg.architecture,
            granularity=cfg.granularity,
            domain_tag=cfg.domain_tag,
            vision_backend=vision,
            text_backend=text,
            reward_config=RewardConfig(**cfg.reward_config.model_dump()),
            params=generation_params(cfg),
            max_workers=cfg.max_workers,
        )
    except ValueError as e:
        raise ConfigError(str(e))


def build_captioner(cfg: EvaluatorConfig, backend_mode: str, base_dir: Path) -> Optional[Backend]:
    """Captioner for uncaptioned trajectories on the Modular path, if one is configured"""

    if cfg.architecture != "Modular":
        return None
    if backend_mode == "scripted":
        return build_backend(cfg, None, backend_mode, base_dir)
    return cfg.captioner_endpoint.to_endpoint() if cfg.captioner_endpoint else None


def build_noisy_evaluator(cfg: EvaluatorConfig, seed: int) -> NoisyOracleEvaluator:
    return NoisyOracleEvaluator(fp_rate=cfg.fp_rate, fn_rate=cfg.fn_rate, rng_seed=seed)
