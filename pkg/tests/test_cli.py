import json
from pathlib import Path

import pytest

from app import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_TASK_ERRORS, main
from utils.metrics import PolicyRanking
from utils.result_store import REQUESTS_FILE, ROUND_TRAJECTORIES_FILE, ResultStore, load_ranking, write_ranking

REPO = Path(__file__).resolve().parent.parent
CONFIGS = REPO / "configs"


def run(*argv):
    return main([str(a) for a in argv])


def snapshot(run_dir: Path):
    return {p.relative_to(run_dir).as_posix(): p.read_bytes()
            for p in sorted(run_dir.rglob("*")) if p.is_file() and p.name != REQUESTS_FILE}


def read_jsonl(path: Path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


@pytest.fixture(autouse=True)
def fixed_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


@pytest.fixture
def corpus(tmp_path):
    out = tmp_path / "gen"
    assert run("sandbox-gen", "--config", CONFIGS / "sandbox_gen.json", "--out", out, "--seed", 7) == EXIT_OK
    return out


def evaluate(corpus, out, config="evaluator_modular.json", *extra):
    return run("evaluate", "--trajectories", corpus / "trajectories.jsonl", "--config", CONFIGS / config,
               "--scripted-table", corpus / "scripted_table.json", "--no-cache", "--out", out, *extra)


# ===== sandbox-gen =====

def test_sandbox_gen_writes_corpus(corpus):
    trajectories = read_jsonl(corpus / "trajectories.jsonl")
    oracle = read_jsonl(corpus / "oracle.jsonl")
    assert len(trajectories) == len(oracle) == 24
    assert [t["task_id"] for t in trajectories] == [o["task_id"] for o in oracle]
    assert {o["policy_id"] for o in oracle} == {"policy-a", "policy-b", "policy-c", "policy-d"}
    assert (corpus / "scripted_table.json").is_file()
    assert (corpus / "rankings" / "oracle.json").is_file()
    manifest = ResultStore(corpus).load_manifest()
    assert manifest.command == "sandbox-gen"
    assert manifest.started_at == "2023-11-14T22:13:20Z"


def test_existing_run_is_refused(corpus):
    assert run("sandbox-gen", "--out", corpus) == EXIT_CONFIG_ERROR


# ===== Hermetic golden run =====

def golden_run(root: Path, jobs: int):
    gen, modular, per_step, bc, metrics = (root / name for name in ("gen", "modular", "per_step", "bc", "metrics"))
    assert run("sandbox-gen", "--config", CONFIGS / "sandbox_gen.json", "--out", gen, "--jobs", jobs) == EXIT_OK
    assert evaluate(gen, modular, "evaluator_modular.json", "--jobs", jobs) == EXIT_OK
    assert evaluate(gen, per_step, "evaluator_modular_per_step.json", "--jobs", jobs) == EXIT_OK
    assert run("filter-bc", "--run", per_step, "--trajectories", gen / "trajectories.jsonl", "--out", bc,
               "--jobs", jobs) == EXIT_OK
    assert run("metrics", "--run", modular, "--oracle", gen / "oracle.jsonl", "--out", metrics,
               "--jobs", jobs) == EXIT_OK
    return {name: snapshot(root / name) for name in ("gen", "modular", "per_step", "bc", "metrics")}


def test_golden_run_is_byte_identical(tmp_path):
    assert golden_run(tmp_path / "first", jobs=1) == golden_run(tmp_path / "second", jobs=1)


def test_golden_run_is_independent_of_jobs(tmp_path):
    serial = golden_run(tmp_path / "serial", jobs=1)
    parallel = golden_run(tmp_path / "parallel", jobs=4)
    for name in serial:
        assert serial[name].pop("manifest.json") != parallel[name].pop("manifest.json")
        assert serial[name] == parallel[name], name


def test_modular_evaluation_matches_scripted_verdicts(corpus, tmp_path):
    out = tmp_path / "modular"
    assert evaluate(corpus, out) == EXIT_OK
    store = ResultStore(out)
    records = store.results("rewards")
    assert len(records) == 24 and store.error_count() == 0
    assert all(r.payload["granularity"] == "trajectory_level" for r in records)
    requests = read_jsonl(out / REQUESTS_FILE)
    assert len(requests) == 24
    assert {r["outcome"] for r in requests} == {"ok"}

    manifest = store.load_manifest()
    assert manifest.evaluator_spec["architecture"] == "Modular"
    assert manifest.endpoint_names == ["scripted"]
    assert set(manifest.inputs) == {"config", "scripted_table", "trajectories"}


def test_per_step_evaluation_feeds_filter_bc(corpus, tmp_path):
    per_step, bc, full = tmp_path / "per_step", tmp_path / "bc", tmp_path / "full"
    assert evaluate(corpus, per_step, "evaluator_modular_per_step.json") == EXIT_OK
    trajectories = corpus / "trajectories.jsonl"
    assert run("filter-bc", "--run", per_step, "--trajectories", trajectories, "--out", bc) == EXIT_OK
    assert run("filter-bc", "--run", per_step, "--trajectories", trajectories, "--out", full,
               "--self-training") == EXIT_OK

    kept = read_jsonl(bc / "bc_samples.jsonl")
    everything = read_jsonl(full / "bc_samples.jsonl")
    total_steps = sum(len(t["actions"]) for t in read_jsonl(trajectories))
    assert len(everything) == total_steps
    assert 0 < len(kept) < len(everything)
    assert all(sample["reward"] >= 0.5 for sample in kept)
    assert [r.kind for r in ResultStore(bc).results()] == ["bc_batch"] * 24


def test_filter_bc_refuses_trajectory_level_run(corpus, tmp_path):
    assert evaluate(corpus, tmp_path / "modular") == EXIT_OK
    assert run("filter-bc", "--run", tmp_path / "modular", "--trajectories", corpus / "trajectories.jsonl",
               "--out", tmp_path / "bc") == EXIT_CONFIG_ERROR


def test_filter_bc_refuses_other_trajectory_file(corpus, tmp_path):
    assert evaluate(corpus, tmp_path / "per_step", "evaluator_modular_per_step.json") == EXIT_OK
    other = tmp_path / "other.jsonl"
    other.write_text((corpus / "trajectories.jsonl").read_text().splitlines()[0] + "\n")
    assert run("filter-bc", "--run", tmp_path / "per_step", "--trajectories", other,
               "--out", tmp_path / "bc") == EXIT_CONFIG_ERROR


# ===== Failures and exit codes =====

def test_malformed_line_becomes_error_record(corpus, tmp_path):
    broken = tmp_path / "broken.jsonl"
    broken.write_text((corpus / "trajectories.jsonl").read_text() + "{not json\n")
    out = tmp_path / "run"
    code = run("evaluate", "--trajectories", broken, "--blobs", corpus / "blobs",
               "--config", CONFIGS / "evaluator_oracle.json", "--out", out)
    assert code == EXIT_TASK_ERRORS
    store = ResultStore(out)
    assert len(store.results("rewards")) == 24
    [error] = store.results("error")
    assert error.task_id == "line-25"
    assert error.payload["line"] == 25
    assert error.payload["error"].startswith("invalid JSON")


def test_bad_config_exits_with_config_error(corpus, tmp_path):
    config = tmp_path / "bad.json"
    config.write_text('{\n  "kind": "oracle",\n  "granularity": "hourly"\n}\n')
    assert run("evaluate", "--trajectories", corpus / "trajectories.jsonl", "--config", config,
               "--out", tmp_path / "run") == EXIT_CONFIG_ERROR
    assert run("evaluate", "--trajectories", corpus / "trajectories.jsonl", "--config", tmp_path / "absent.json",
               "--out", tmp_path / "run2") == EXIT_CONFIG_ERROR


def test_duplicate_task_ids_leave_no_run_behind(corpus, tmp_path):
    first = (corpus / "trajectories.jsonl").read_text().splitlines()[0]
    doubled = tmp_path / "doubled.jsonl"
    doubled.write_text(f"{first}\n{first}\n")
    out = tmp_path / "run"
    assert run("evaluate", "--trajectories", doubled, "--config", CONFIGS / "evaluator_oracle.json",
               "--out", out) == EXIT_CONFIG_ERROR
    assert not out.exists()


def test_jobs_must_be_positive(tmp_path):
    assert run("sandbox-gen", "--out", tmp_path / "gen", "--jobs", 0) == EXIT_CONFIG_ERROR


def test_cached_rerun_makes_no_backend_calls(corpus, tmp_path):
    doc = json.loads((CONFIGS / "evaluator_modular.json").read_text())
    doc["cache_dir"] = "cache"
    config = tmp_path / "modular.json"
    config.write_text(json.dumps(doc, indent=2))

    outcomes = []
    for name in ("first", "second"):
        code = run("evaluate", "--trajectories", corpus / "trajectories.jsonl", "--config", config,
                   "--scripted-table", corpus / "scripted_table.json", "--out", tmp_path / name)
        assert code == EXIT_OK
        outcomes.append({r["outcome"] for r in read_jsonl(tmp_path / name / REQUESTS_FILE)})
    assert outcomes == [{"ok"}, {"cache_hit"}]
    assert (tmp_path / "first" / "results.jsonl").read_bytes() == (tmp_path / "second" / "results.jsonl").read_bytes()


# ===== metrics =====

def test_metrics_reports_agreement(corpus, tmp_path, capsys):
    assert evaluate(corpus, tmp_path / "modular") == EXIT_OK
    out = tmp_path / "metrics"
    assert run("metrics", "--run", tmp_path / "modular", "--oracle", corpus / "oracle.jsonl", "--out", out) == EXIT_OK
    report = json.loads((out / "agreement.json").read_text())
    assert report["n"] == 24
    assert sum(report["confusion"].values()) == 24
    assert (out / "confusion.csv").read_text().startswith("oracle,judged_success,judged_failure")
    assert f"accuracy: {report['accuracy']:.4f} (n=24)" in capsys.readouterr().out

    evaluator = load_ranking(out / "rankings" / "evaluator.json")
    oracle = load_ranking(out / "rankings" / "oracle.json")
    assert {p for p, _ in evaluator.entries} == {p for p, _ in oracle.entries}
    assert run("metrics", "--rankings", out / "rankings" / "evaluator.json", out / "rankings" / "oracle.json") == EXIT_OK
    assert capsys.readouterr().out.startswith("kendall tau: ")


def test_metrics_rankings_prints_tau(tmp_path, capsys):
    a = write_ranking(tmp_path / "a.json", PolicyRanking((("p1", 0.8), ("p2", 0.6), ("p3", 0.4), ("p4", 0.2))))
    b = write_ranking(tmp_path / "b.json", PolicyRanking((("p1", 0.8), ("p2", 0.4), ("p3", 0.6), ("p4", 0.2))))
    assert run("metrics", "--rankings", a, b) == EXIT_OK
    assert capsys.readouterr().out == "kendall tau: 0.667\n"


def test_metrics_needs_run_and_oracle(tmp_path):
    assert run("metrics", "--out", tmp_path / "m") == EXIT_CONFIG_ERROR
    assert run("metrics", "--run", tmp_path / "missing", "--oracle", tmp_path / "o.jsonl",
               "--out", tmp_path / "m") == EXIT_CONFIG_ERROR


# ===== reflexion =====

def success_rates(text):
    line = next(l for l in text.splitlines() if l.startswith("success by round: "))
    return [float(part.split("=")[1]) for part in line[len("success by round: "):].split(", ")]


@pytest.mark.parametrize("config", ["evaluator_oracle.json", "evaluator_noisy_fn.json", "evaluator_noisy_fp.json"])
def test_reflexion_runs_every_task(tmp_path, capsys, config):
    out = tmp_path / "reflexion"
    code = run("reflexion", "--config", CONFIGS / config, "--actor-config", CONFIGS / "actor.json",
               "--max-rounds", 2, "--out", out, "--seed", 3)
    assert code == EXIT_OK
    records = ResultStore(out).results("reflexion")
    assert len(records) == 24
    assert all(1 <= len(r.payload["per_round"]) <= 3 for r in records)
    rounds = read_jsonl(out / ROUND_TRAJECTORIES_FILE)
    assert len(rounds) == sum(len(r.payload["per_round"]) for r in records)

    rates = success_rates(capsys.readouterr().out)
    assert len(rates) == 3
    if config == "evaluator_oracle.json":
        assert rates == sorted(rates)


def test_reflexion_is_independent_of_jobs(tmp_path):
    for name, jobs in (("serial", 1), ("parallel", 4)):
        assert run("reflexion", "--config", CONFIGS / "evaluator_oracle.json", "--max-rounds", 2,
                   "--out", tmp_path / name, "--jobs", jobs) == EXIT_OK
    serial = snapshot(tmp_path / "serial")
    parallel = snapshot(tmp_path / "parallel")
    assert serial.pop("manifest.json") != parallel.pop("manifest.json")
    assert serial == parallel


def test_reflexion_rejects_negative_rounds(tmp_path):
    assert run("reflexion", "--config", CONFIGS / "evaluator_oracle.json", "--max-rounds", -1,
               "--out", tmp_path / "r") == EXIT_CONFIG_ERROR
