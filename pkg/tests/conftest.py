import random
from pathlib import Path

import pytest

from artifact.ingest import AlertRecord, write_jsonl
from artifact.pipeline import PipelineConfig, train
from artifact.scenario import default_scenario, generate_scenario

DATA_DIR = Path(__file__).parent / "data"

# A compact 6-day variant of the default scenario, shared by the pipeline and
# CLI suites: 18 eight-hour windows, two training days (windows 0-5), a volume
# spike at window 8, and the attack at windows 12-13.
SMALL_ORIGIN = 1614556800.0  # 2021-03-01T00:00:00Z
SMALL_SIM = dict(
    seed=5,
    duration_days=6.0,
    training_days=2.0,
    attack_start_window=12,
    spike_window=8,
)


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture(scope="session")
def small_streams(tmp_path_factory) -> dict[str, Path]:
    """JSONL alert streams generated once per test session: the full stream
    (attack + spike) and a quiet one with no injections."""
    root = tmp_path_factory.mktemp("streams")
    full = default_scenario(**SMALL_SIM)
    write_jsonl(generate_scenario(full), root / "alerts.jsonl")
    quiet = default_scenario(with_attack=False, with_spike=False, **SMALL_SIM)
    write_jsonl(generate_scenario(quiet), root / "quiet.jsonl")
    return {"full": root / "alerts.jsonl", "quiet": root / "quiet.jsonl"}


def small_pipeline_config(streams, out_dir, **overrides) -> PipelineConfig:
    kwargs = dict(
        jsonl_paths=[streams["full"]],
        window_hours=8.0,
        training_days=2.0,
        origin=SMALL_ORIGIN,
        seed=7,
        out_dir=Path(out_dir),
    )
    kwargs.update(overrides)
    return PipelineConfig(**kwargs)


@pytest.fixture(scope="session")
def small_trained(small_streams, tmp_path_factory):
    """One bundle trained on the small stream, reused by every scoring test.

    The attack and spike land after the training cutoff, so this bundle is
    equally valid for the quiet stream."""
    out = tmp_path_factory.mktemp("trained")
    return train(small_pipeline_config(small_streams, out))


def make_random_records(seed: int, count: int, base_ts: float = 1_000_000.0) -> list[AlertRecord]:
    """Synthetic normalized records mixing snort/ossec shapes; some records
    carry src_ip == dst_ip to exercise the same-vertex skip."""
    rng = random.Random(seed)
    ips = [f"10.0.0.{i}" for i in range(1, 15)]
    sigs = [str(s) for s in (215, 2001, 2002, 3001)]
    rules = [str(r) for r in (5501, 5503, 5715)]
    logs = ["/var/log/auth.log", "/var/log/syslog"]
    records = []
    for i in range(count):
        ts = base_ts + rng.random() * 10_000
        if rng.random() < 0.5:
            src = rng.choice(ips)
            dst = rng.choice(ips) if rng.random() > 0.1 else src
            fields = {"sig_id": rng.choice(sigs), "src_ip": src, "dst_ip": dst}
            records.append(AlertRecord("snort", ts, fields))
        else:
            fields = {"rule_id": rng.choice(rules), "logfile": rng.choice(logs)}
            if rng.random() < 0.7:
                fields["src_ip"] = rng.choice(ips)
            records.append(AlertRecord("ossec", ts, fields))
    return records
