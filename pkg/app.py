"""
Agent Judge
Command-line entry point: evaluate trajectories, run Reflexion episodes, build
filtered behavior-cloning datasets, compute agreement metrics and generate
sandbox corpora
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from assets.prompt_templates import template_hash
from utils.config import (ActorConfig, EvaluatorConfig, SandboxGenConfig, build_captioner,
                          build_evaluator_spec, build_noisy_evaluator, load_config)
from utils.errors import AgentJudgeError, ConfigError, StepEvaluationError
from utils.judges import (EvaluatorSpec, Granularity, RewardConfig, RewardSequence, evaluate, rewards_from_categories,
                          rewards_from_verdict)
from utils.metrics import JudgmentPair, agreement, kendall_tau, rank_policies
from utils.model_gateway import ModelGateway, ScriptedBackend
from utils.perception import caption_trajectory
from utils.refine import (GatewayReflector, ReflexionOutcome, derive_seed, export_bc_samples, filter_bc,
                          reflexion_episode, self_training_export)
from utils.report_generator import ReportGenerator
from utils.result_store import (ROUND_TRAJECTORIES_FILE, SUMMARY_JSON, SUMMARY_TEXT, ResultStore, compute_run_id,
                                file_digest, load_oracle, load_ranking, open_run, utc_timestamp, write_ranking)
from utils.sandbox import (DEFAULT_SUITE_PATH, NoisyJudge, NoisyOracleEvaluator, OracleJudge, SandboxEnv,
                           SandboxReflector, SandboxSuite, ScriptedActor, judge_with_noise, load_suite, oracle_of,
                           rollout, scripted_judge_table, synth_per_step_labels)
from utils.schemas import OracleRecord, RunManifest
from utils.trajectory_core import (BlobStore, DomainTag, LoadedLine, Trajectory, iter_trajectory_file,
                                   trajectory_to_record, write_trajectories)

logger = logging.getLogger("agent_judge")

EXIT_OK = 0
EXIT_TASK_ERRORS = 1
EXIT_CONFIG_ERROR = 2

BC_SAMPLES_FILE = "bc_samples.jsonl"
AGREEMENT_FILE = "agreement.json"
CONFUSION_CSV = "confusion.csv"


# ===== Shared plumbing =====

def _require_out(args) -> Path:
    if not args.out:
        raise ConfigError(f"{args.command} needs --out")
    return Path(args.out)


def _require_file(path: Optional[str], flag: str) -> Path:
    if not path:
        raise ConfigError(f"missing {flag}")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{flag} {p} does not exist")
    return p


def _finish_run(store: ResultStore, command: str, inputs: Dict[str, str], parameters: Dict[str, Any],
                run_id: str, started_at: str, args, evaluator_spec: Optional[Dict[str, Any]] = None,
                endpoint_names: Sequence[str] = ()) -> RunManifest:
    """Write the manifest, then the summaries derived from the run's files"""

    manifest = RunManifest(
        run_id=run_id,
        command=command,
        evaluator_spec=evaluator_spec,
        endpoint_names=list(endpoint_names),
        seed=args.seed,
        jobs=args.jobs,
        backend=getattr(args, "backend", None),
        template_hash=template_hash(),
        inputs=inputs,
        parameters=parameters,
        started_at=started_at,
        finished_at=utc_timestamp(),
    )
    store.write_manifest(manifest)

    reporter = ReportGenerator()
    title, headline, tables = reporter.summarize_run(store)
    store.write_json(SUMMARY_JSON, reporter.summary_document(title, headline, tables))
    text = reporter.generate_text_summary(title, headline, tables)
    store.write_text(SUMMARY_TEXT, text)
    for key in sorted(headline):
        logger.info(f"📊 {key}: {headline[key]}")
    return manifest


def _evaluator_description(cfg: EvaluatorConfig, spec: Optional[EvaluatorSpec]) -> Dict[str, Any]:
    if spec is not None:
        return {"kind": cfg.kind, **spec.snapshot()}
    return {
        "kind": cfg.kind,
        "granularity": cfg.granularity,
        "fp_rate": cfg.fp_rate,
        "fn_rate": cfg.fn_rate,
        "reward_config": cfg.reward_config.model_dump(),
    }


def _endpoint_names(cfg: EvaluatorConfig, backend_mode: str) -> List[str]:
    if cfg.kind != "model":
        return []
    if backend_mode == "scripted":
        return ["scripted"]
    names = []
    for endpoint in (cfg.vision_endpoint, cfg.text_endpoint, cfg.captioner_endpoint):
        if endpoint is not None:
            names.append(endpoint.name or endpoint.model_name)
    return sorted(set(names))


def _load_evaluator(args) -> Tuple[EvaluatorConfig, Path, Dict[str, str]]:
    """Evaluator config plus the digests of everything it pulls in"""

    config_path = _require_file(args.config, "--config")
    cfg = load_config(config_path, EvaluatorConfig)
    if getattr(args, "scripted_table", None):
        table = Path(args.scripted_table).resolve()
        cfg = cfg.model_copy(update={"scripted_table": str(table)})
    inputs = {"config": file_digest(config_path)}
    if args.backend == "scripted" and cfg.kind == "model" and cfg.scripted_table:
        table_path = (config_path.parent / cfg.scripted_table).resolve()
        if not table_path.is_file():
            raise ConfigError(f"scripted table {table_path} does not exist", str(config_path))
        inputs["scripted_table"] = file_digest(table_path)
    return cfg, config_path.parent, inputs


def _gateway(cfg: EvaluatorConfig, base_dir: Path, store: ResultStore, blob_root: Path, no_cache: bool) -> ModelGateway:
    cache_dir = None
    if cfg.cache_dir and not no_cache:
        cache_dir = (base_dir / cfg.cache_dir).resolve()
    return ModelGateway(cache_dir=cache_dir, log_path=store.requests_path, blob_store=BlobStore(blob_root))


# ===== evaluate =====

@dataclass
class EvaluationContext:
    cfg: EvaluatorConfig
    spec: Optional[EvaluatorSpec]
    gateway: Optional[ModelGateway]
    captioner: Any
    suite: Optional[SandboxSuite]
    noisy: Optional[NoisyOracleEvaluator]
    seed: int


def _oracle_rewards(t: Trajectory, ctx: EvaluationContext, line_no: int) -> RewardSequence:
    """Rewards from the sandbox task predicate, optionally flipped by the noisy evaluator"""

    task = ctx.suite.task(t.task_id)
    graph = ctx.suite.graph_for(task)
    config = RewardConfig(**ctx.cfg.reward_config.model_dump())
    if ctx.cfg.granularity == Granularity.PER_STEP.value:
        return rewards_from_categories(synth_per_step_labels(t, task, graph), config)
    success = oracle_of(t, task, graph)
    evaluator = ctx.noisy or NoisyOracleEvaluator()
    verdict = judge_with_noise(success, evaluator, derive_seed(ctx.seed, line_no))
    return rewards_from_verdict(verdict, len(t.actions))


def _evaluate_line(loaded: LoadedLine, ctx: EvaluationContext) -> Tuple[str, Dict[str, Any]]:
    """(kind, payload) for one trajectory line"""

    if loaded.error:
        return "error", {"error": loaded.error, "line": loaded.line_no}
    t = loaded.trajectory
    try:
        if ctx.spec is None:
            rewards = _oracle_rewards(t, ctx, loaded.line_no)
        else:
            if ctx.captioner is not None and any(s.caption is None for s in t.states):
                t = caption_trajectory(t, ctx.gateway, ctx.captioner, ctx.spec.params)
            rewards = evaluate(t, ctx.spec, ctx.gateway)
    except StepEvaluationError as e:
        return "error", {"error": f"{type(e).__name__}: {e}", "line": loaded.line_no, "step_index": e.step_index}
    except KeyError as e:
        return "error", {"error": f"unknown sandbox task {e}", "line": loaded.line_no}
    except (AgentJudgeError, ValueError) as e:
        return "error", {"error": f"{type(e).__name__}: {e}", "line": loaded.line_no}
    return "rewards", rewards.to_payload(t.policy_id)


def cmd_evaluate(args) -> int:
    """Judge every trajectory of a JSONL file and store one record per trajectory"""

    out = _require_out(args)
    trajectories_path = _require_file(args.trajectories, "--trajectories")
    cfg, base_dir, inputs = _load_evaluator(args)
    inputs["trajectories"] = file_digest(trajectories_path)

    lines = list(iter_trajectory_file(trajectories_path))
    seen = set()
    for loaded in lines:
        if loaded.trajectory is None:
            continue
        if loaded.task_id in seen:
            raise ConfigError(f"duplicate task id {loaded.task_id}", str(trajectories_path), loaded.line_no)
        seen.add(loaded.task_id)

    spec = gateway = captioner = suite = noisy = None
    if cfg.kind == "model":
        spec = build_evaluator_spec(cfg, args.backend, base_dir)
        captioner = build_captioner(cfg, args.backend, base_dir)
    else:
        suite_path = Path(args.suite) if args.suite else DEFAULT_SUITE_PATH
        suite = load_suite(suite_path)
        inputs["suite"] = file_digest(suite_path)
        if cfg.kind == "noisy":
            noisy = build_noisy_evaluator(cfg, args.seed)

    store = ResultStore(out)
    store.create()
    started_at = utc_timestamp()
    if spec is not None:
        blob_root = Path(args.blobs) if args.blobs else trajectories_path.parent / "blobs"
        gateway = _gateway(cfg, base_dir, store, blob_root, args.no_cache)
    ctx = EvaluationContext(cfg, spec, gateway, captioner, suite, noisy, args.seed)

    logger.info(f"Evaluating {len(lines)} trajectories with {args.jobs} worker(s)")
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(lambda loaded: _evaluate_line(loaded, ctx), lines))

    parameters = {"seed": args.seed, "backend": args.backend}
    run_id = compute_run_id("evaluate", inputs, parameters)

    errors = 0
    outcomes = []
    used = set()
    for loaded, (kind, payload) in zip(lines, results):
        task_id = loaded.task_id or f"line-{loaded.line_no}"
        if task_id in used or (loaded.trajectory is None and task_id in seen):
            task_id = f"{task_id}@line-{loaded.line_no}"
        used.add(task_id)
        if kind == "error":
            errors += 1
            logger.warning(f"⚠️ {task_id}: {payload['error']}")
        else:
            outcomes.append((payload["policy_id"], RewardSequence.from_payload(payload).judged_success))
        store.append(run_id, task_id, kind, payload)

    if outcomes:
        write_ranking(store.run_dir / "rankings" / "evaluator.json", rank_policies(outcomes))
    if gateway is not None:
        logger.info(f"📊 Gateway: {gateway.backend_calls} backend calls, {gateway.cache_hits} cache hits")

    _finish_run(store, "evaluate", inputs, parameters, run_id, started_at, args,
                _evaluator_description(cfg, spec), _endpoint_names(cfg, args.backend))

    if errors:
        logger.error(f"❌ {errors} of {len(lines)} trajectories failed")
        return EXIT_TASK_ERRORS
    logger.info(f"✅ Evaluated {len(lines)} trajectories")
    return EXIT_OK


# ===== reflexion =====

def _reflexion_judge(cfg: EvaluatorConfig, args, base_dir: Path, gateway: ModelGateway):
    if cfg.kind == "oracle":
        return OracleJudge(), None
    if cfg.kind == "noisy":
        return NoisyJudge(build_noisy_evaluator(cfg, args.seed)), None
    return build_evaluator_spec(cfg, args.backend, base_dir), gateway


def cmd_reflexion(args) -> int:
    """Run one Reflexion episode per sandbox task"""

    out = _require_out(args)
    if args.max_rounds < 0:
        raise ConfigError("--max-rounds must be >= 0")
    cfg, base_dir, inputs = _load_evaluator(args)
    actor_cfg = load_config(args.actor_config, ActorConfig) if args.actor_config else ActorConfig()
    if args.actor_config:
        inputs["actor_config"] = file_digest(args.actor_config)
    suite_path = Path(args.tasks) if args.tasks else DEFAULT_SUITE_PATH
    suite = load_suite(suite_path)
    inputs["tasks"] = file_digest(suite_path)

    store = ResultStore(out)
    store.create()
    started_at = utc_timestamp()
    blobs = BlobStore(store.run_dir / "blobs")
    gateway = _gateway(cfg, base_dir, store, store.run_dir / "blobs", args.no_cache)
    judge, judge_gateway = _reflexion_judge(cfg, args, base_dir, gateway)
    spec = judge if isinstance(judge, EvaluatorSpec) else None

    def run_task(index: int) -> ReflexionOutcome:
        task = suite.tasks[index]
        episode_seed = derive_seed(args.seed, index)
        env = SandboxEnv(task, suite.graph_for(task), actor_cfg.max_steps, actor_cfg.policy_id, blobs)
        actor = ScriptedActor(actor_cfg.skill, actor_cfg.reflection_boost, episode_seed, actor_cfg.policy_id)
        if spec is not None and args.backend == "endpoint":
            reflector = GatewayReflector(gateway, spec.backend, spec.params)
        else:
            reflector = SandboxReflector()
        return reflexion_episode(task.instruction, actor, env, judge, args.max_rounds,
                                 gateway=judge_gateway, reflector=reflector, seed=episode_seed)

    logger.info(f"Running {len(suite.tasks)} episodes, up to {args.max_rounds} reflection rounds each")
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        outcomes = list(pool.map(run_task, range(len(suite.tasks))))

    parameters = {"seed": args.seed, "backend": args.backend, "max_rounds": args.max_rounds}
    run_id = compute_run_id("reflexion", inputs, parameters)

    round_records = []
    aborted = 0
    for outcome in outcomes:
        if outcome.aborted:
            aborted += 1
            logger.warning(f"⚠️ {outcome.task_id}: {outcome.aborted}")
        store.append(run_id, outcome.task_id, "reflexion", outcome.to_record())
        round_records.extend(trajectory_to_record(r.trajectory) for r in outcome.per_round)
    store.write_jsonl(ROUND_TRAJECTORIES_FILE, round_records)

    _finish_run(store, "reflexion", inputs, parameters, run_id, started_at, args,
                _evaluator_description(cfg, spec), _endpoint_names(cfg, args.backend))

    summary = ReportGenerator().reflexion_table([o.to_record() for o in outcomes], args.max_rounds)
    rates = ", ".join(f"r{int(row['round'])}={row['success_rate']:.3f}" for _, row in summary.iterrows())
    print(f"success by round: {rates}")

    if aborted:
        logger.error(f"❌ {aborted} of {len(outcomes)} episodes aborted")
        return EXIT_TASK_ERRORS
    return EXIT_OK


# ===== filter-bc =====

def cmd_filter_bc(args) -> int:
    """Build a behavior-cloning dataset from a per-step evaluation run"""

    out = _require_out(args)
    source = open_run(args.run)
    source_manifest = source.load_manifest()
    if source_manifest.command != "evaluate":
        raise ConfigError(f"{args.run} is a {source_manifest.command} run, not an evaluate run")
    trajectories_path = _require_file(args.trajectories, "--trajectories")
    digest = file_digest(trajectories_path)
    if source_manifest.inputs.get("trajectories") != digest:
        raise ConfigError(f"{trajectories_path} is not the trajectory file run {source_manifest.run_id} evaluated")

    reward_config = RewardConfig(**(source_manifest.evaluator_spec or {}).get("reward_config", {}))
    threshold = reward_config.p if args.threshold is None else args.threshold

    rewards = {r.task_id: RewardSequence.from_payload(r.payload) for r in source.iter_results("rewards")}
    labeled = []
    for loaded in iter_trajectory_file(trajectories_path):
        if loaded.trajectory is None or loaded.task_id not in rewards:
            logger.warning(f"⚠️ line {loaded.line_no}: no rewards in {args.run}; skipped")
            continue
        labeled.append((loaded.trajectory, rewards[loaded.task_id]))

    if args.self_training:
        per_step = all(r.granularity == Granularity.PER_STEP for _, r in labeled)
        samples = self_training_export([t for t, _ in labeled], [r for _, r in labeled] if per_step else None)
    else:
        samples = filter_bc(labeled, threshold, reward_config)

    store = ResultStore(out)
    store.create()
    started_at = utc_timestamp()
    inputs = {"run": source_manifest.run_id, "trajectories": digest}
    parameters = {"threshold": None if args.self_training else threshold, "self_training": args.self_training}
    run_id = compute_run_id("filter-bc", inputs, parameters)

    by_task: Dict[str, List[Dict[str, Any]]] = {t.task_id: [] for t, _ in labeled}
    for sample in samples:
        by_task[sample.source_trajectory_id].append(sample.to_record())
    for task_id, batch in by_task.items():
        store.append(run_id, task_id, "bc_batch", {"samples": batch})
    export_bc_samples(store.run_dir / BC_SAMPLES_FILE, samples)

    _finish_run(store, "filter-bc", inputs, parameters, run_id, started_at, args,
                source_manifest.evaluator_spec, source_manifest.endpoint_names)
    return EXIT_OK


# ===== metrics =====

def cmd_metrics(args) -> int:
    """Agreement of an evaluation run with oracle labels, and rank correlation of rankings"""

    if args.rankings:
        a, b = (load_ranking(p) for p in args.rankings)
        tau = kendall_tau(a, b)
        print(f"kendall tau: {tau:.3f}")
        if not args.run:
            return EXIT_OK

    if not args.run or not args.oracle:
        raise ConfigError("metrics needs --run and --oracle (or --rankings A B)")
    out = _require_out(args)
    source = open_run(args.run)
    source_manifest = source.load_manifest()
    oracle_path = _require_file(args.oracle, "--oracle")
    oracle = load_oracle(oracle_path)

    pairs = []
    for record in source.iter_results("rewards"):
        truth = oracle.get(record.task_id)
        if truth is None:
            logger.warning(f"⚠️ {record.task_id}: no oracle label; skipped")
            continue
        pairs.append(JudgmentPair(record.task_id, RewardSequence.from_payload(record.payload).judged_success,
                                  truth.oracle_success))
    report = agreement(pairs)

    store = ResultStore(out)
    store.create()
    started_at = utc_timestamp()
    inputs = {"run": source_manifest.run_id, "oracle": file_digest(oracle_path)}
    parameters: Dict[str, Any] = {}
    run_id = compute_run_id("metrics", inputs, parameters)

    store.append(run_id, "all", "agreement", report.to_payload())
    store.write_json(AGREEMENT_FILE, report.to_payload())
    reporter = ReportGenerator()
    store.write_text(CONFUSION_CSV, reporter.generate_csv_export(reporter.confusion_table(report.to_payload()),
                                                                 index=True))

    evaluator_ranking = source.run_dir / "rankings" / "evaluator.json"
    if evaluator_ranking.exists():
        write_ranking(store.run_dir / "rankings" / "evaluator.json", load_ranking(evaluator_ranking))
        write_ranking(store.run_dir / "rankings" / "oracle.json",
                      rank_policies((r.policy_id, r.oracle_success) for r in oracle.values()))

    _finish_run(store, "metrics", inputs, parameters, run_id, started_at, args,
                source_manifest.evaluator_spec, source_manifest.endpoint_names)
    print(f"accuracy: {report.accuracy:.4f} (n={report.n})")
    return EXIT_OK


# ===== sandbox-gen =====

def cmd_sandbox_gen(args) -> int:
    """Roll out scripted policies on the sandbox suite and write a hermetic corpus"""

    out = _require_out(args)
    cfg = load_config(args.config, SandboxGenConfig) if args.config else SandboxGenConfig()
    suite_path = Path(args.suite or cfg.suite or DEFAULT_SUITE_PATH)
    suite = load_suite(suite_path)
    inputs = {"suite": file_digest(suite_path)}
    if args.config:
        inputs["config"] = file_digest(args.config)

    store = ResultStore(out)
    store.create()
    started_at = utc_timestamp()
    blobs = BlobStore(store.run_dir / "blobs")
    noise = NoisyOracleEvaluator(cfg.scripted_fp_rate, cfg.scripted_fn_rate, args.seed)

    def run_task(index: int):
        task = suite.tasks[index]
        policy = cfg.policies[index % len(cfg.policies)]
        actor = ScriptedActor(policy.skill, 0.0, derive_seed(args.seed, index), policy.policy_id)
        try:
            trajectory, success = rollout(actor, task, suite.graph_for(task), derive_seed(args.seed, index, 1),
                                          cfg.max_steps, blobs)
        except ValueError as e:
            raise ConfigError(str(e), str(args.config) if args.config else None)
        labels = [c.value for c in synth_per_step_labels(trajectory, task, suite.graph_for(task))]
        judged = judge_with_noise(success, noise, index).is_success
        domain = DomainTag(cfg.domain_tag) if cfg.domain_tag else None
        return trajectory, success, labels, scripted_judge_table(trajectory, judged, labels, domain_tag=domain)

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rollouts = list(pool.map(run_task, range(len(suite.tasks))))

    table: Dict[str, str] = {}
    oracle_records = []
    for trajectory, success, labels, entries in rollouts:
        for digest, text in entries.items():
            table.setdefault(digest, text)
        oracle_records.append(OracleRecord(task_id=trajectory.task_id, policy_id=trajectory.policy_id,
                                           oracle_success=success,
                                           step_labels=[label.value for label in labels]).model_dump())

    trajectories = [r[0] for r in rollouts]
    write_trajectories(store.run_dir / "trajectories.jsonl", trajectories)
    store.write_jsonl("oracle.jsonl", oracle_records)
    ScriptedBackend(table=table).save(store.run_dir / "scripted_table.json")
    write_ranking(store.run_dir / "rankings" / "oracle.json",
                  rank_policies((t.policy_id, s) for t, s, _, _ in rollouts))

    parameters = {"seed": args.seed, "policies": [p.model_dump() for p in cfg.policies], "max_steps": cfg.max_steps,
                  "scripted_fp_rate": cfg.scripted_fp_rate, "scripted_fn_rate": cfg.scripted_fn_rate}
    if cfg.domain_tag:
        parameters["domain_tag"] = cfg.domain_tag
    run_id = compute_run_id("sandbox-gen", inputs, parameters)
    _finish_run(store, "sandbox-gen", inputs, parameters, run_id, started_at, args)
    logger.info(f"✅ Wrote {len(trajectories)} sandbox trajectories to {store.run_dir}")
    return EXIT_OK


# ===== Argument parsing =====

COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "evaluate": cmd_evaluate,
    "reflexion": cmd_reflexion,
    "filter-bc": cmd_filter_bc,
    "metrics": cmd_metrics,
    "sandbox-gen": cmd_sandbox_gen,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document")
    common.add_argument("--out", help="Run directory to create")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="Tasks processed in parallel")
    common.add_argument("--backend", choices=["scripted", "endpoint"], default="scripted")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="agent-judge", description="Evaluate and refine GUI agents")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="Judge a trajectory file")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--blobs", help="Screenshot blob directory (default: next to the trajectories)")
    p.add_argument("--suite", help="Sandbox suite for oracle and noisy evaluators")
    p.add_argument("--scripted-table", help="Override the config's scripted response table")
    p.add_argument("--no-cache", action="store_true")

    p = sub.add_parser("reflexion", parents=[common], help="Run Reflexion episodes on sandbox tasks")
    p.add_argument("--tasks", help="Sandbox suite (default: the shipped suite)")
    p.add_argument("--actor-config")
    p.add_argument("--max-rounds", type=int, default=3)
    p.add_argument("--scripted-table")
    p.add_argument("--no-cache", action="store_true")

    p = sub.add_parser("filter-bc", parents=[common], help="Filtered behavior-cloning export")
    p.add_argument("--run", required=True, help="Per-step evaluate run directory")
    p.add_argument("--trajectories", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--self-training", action="store_true", help="Keep every pair (unfiltered baseline)")

    p = sub.add_parser("metrics", parents=[common], help="Agreement and rank correlation")
    p.add_argument("--run", help="Evaluate run directory")
    p.add_argument("--oracle", help="oracle.jsonl written by sandbox-gen")
    p.add_argument("--rankings", nargs=2, metavar=("A", "B"), help="Print Kendall tau between two ranking files")

    p = sub.add_parser("sandbox-gen", parents=[common], help="Generate a sandbox corpus")
    p.add_argument("--suite")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        logger.error("❌ --jobs must be >= 1")
        return EXIT_CONFIG_ERROR
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"❌ {e}")
        return EXIT_CONFIG_ERROR
    except (AgentJudgeError, FileExistsError, FileNotFoundError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
