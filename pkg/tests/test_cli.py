import json

import numpy as np
import pytest

from emergence import cli
from emergence.checkpoint import CheckpointError, encode, load_checkpoint, save_checkpoint
from emergence.config import build_config, dump_config
from emergence.training import LOG_COLUMNS, LogRow, build_agents, make_streams, stream_rng

TOY = """seed: 2
world: {K: 2, V_attr: 3, split: [1.0, 0.0, 0.0]}
game: {vocab: 4, L: 2, N: 3}
model: {hidden: 8, perception_hidden: 8}
training: {batch_size: 32, max_steps: 30, eval_every: 10, eval_episodes: 200}
"""


@pytest.fixture
def toy_config(tmp_path):
    p = tmp_path / "toy.yaml"
    p.write_text(TOY)
    return p


def train(config, out):
    assert cli.main(["train", str(config), "--output-dir", str(out)]) == 0
    return out


def test_train_writes_log_checkpoints_and_snapshot(toy_config, tmp_path):
    out = train(toy_config, tmp_path / "run")
    assert sorted(p.name for p in out.iterdir()) == ["best.ckpt.json", "config.yaml", "final.ckpt.json", "metrics.csv"]
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "step,train_reward,sender_loss,receiver_loss,entropy_s,entropy_r,val_accuracy,val_xent"
    rows = cli.read_log(out / "metrics.csv")
    assert [r["step"] for r in rows] == [10, 20, 30]
    for line, row in zip(lines[1:], rows):
        assert line == ",".join(cli._fmt(row[c]) for c in LOG_COLUMNS)


def test_rerun_is_byte_identical(toy_config, tmp_path):
    a, b = train(toy_config, tmp_path / "a"), train(toy_config, tmp_path / "b")
    for name in ("metrics.csv", "best.ckpt.json", "final.ckpt.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_metrics_log_rejects_non_increasing_steps(tmp_path):
    row = LogRow(5, 0.5, 0.1, 0.2, 1.0, 1.0, 0.5, 1.0)
    with cli.MetricsLog(tmp_path / "m.csv") as log:
        cli.write_log_row(log, row)
        with pytest.raises(ValueError):
            cli.write_log_row(log, row)
    assert cli.read_log(tmp_path / "m.csv") == [dict(zip(LOG_COLUMNS, row.values()))]


def test_analyze_matches_last_log_row(toy_config, tmp_path):
    out = train(toy_config, tmp_path / "run")
    assert cli.main(["analyze", "--checkpoint", str(out / "final.ckpt.json"), "--config", str(toy_config)]) == 0
    metrics = json.loads((out / "final.metrics.json").read_text())
    last = (out / "metrics.csv").read_text().splitlines()[-1].split(",")
    assert cli._fmt(metrics["val_accuracy"]) == last[LOG_COLUMNS.index("val_accuracy")]
    assert cli._fmt(metrics["val_xent"]) == last[LOG_COLUMNS.index("val_xent")]
    assert set(metrics) >= {"accuracy", "topographic_similarity", "length", "distinct_ratio", "message_entropy"}
    records = [json.loads(x) for x in (out / "final.language.jsonl").read_text().splitlines()]
    assert len(records) == 9 and set(records[0]) == {"attrs", "message", "length"}


def test_analysis_outputs_are_deterministic(toy_config, tmp_path):
    out = train(toy_config, tmp_path / "run")
    for dest in ("x", "y"):
        cli.main(["analyze", "--checkpoint", str(out / "best.ckpt.json"), "--config", str(toy_config),
                  "--output-dir", str(tmp_path / dest)])
    for name in ("best.metrics.json", "best.language.jsonl"):
        assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()


def test_corrupt_checkpoint_is_a_clean_error(toy_config, tmp_path, capsys):
    bad = tmp_path / "ckpt"
    bad.mkdir()
    (bad / "broken.ckpt.json").write_text('{"format": "emergence-checkpoint", "version": 1, "params": {')
    code = cli.main(["analyze", "--checkpoint", str(bad / "broken.ckpt.json"), "--config", str(toy_config)])
    assert code == 1
    assert "corrupt" in capsys.readouterr().err
    assert [p.name for p in bad.iterdir()] == ["broken.ckpt.json"]


def test_dimension_mismatch_lists_shapes(toy_config, tmp_path, capsys):
    out = train(toy_config, tmp_path / "run")
    other = tmp_path / "wide.yaml"
    other.write_text(TOY.replace("hidden: 8,", "hidden: 6,"))
    code = cli.main(["analyze", "--checkpoint", str(out / "final.ckpt.json"), "--config", str(other),
                     "--output-dir", str(tmp_path / "never")])
    assert code == 1
    err = capsys.readouterr().err
    assert "expected (6," in err and "found (8," in err
    assert not (tmp_path / "never").exists()


def test_validation_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("world: {split: [0.5, 0.2, 0.2]}\n")
    assert cli.main(["train", str(p)]) == 1
    assert "world.split" in capsys.readouterr().err


def test_numeric_failure_exit_code(toy_config, tmp_path, monkeypatch):
    def explode(cfg, on_eval=None, on_step=None):
        raise cli.NumericError("non-finite loss")

    monkeypatch.setattr(cli, "train_loop", explode)
    assert cli.main(["train", str(toy_config), "--output-dir", str(tmp_path / "r")]) == 2


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_is_byte_identical(tmp_path):
    cfg = build_config({"model": {"hidden": 8, "perception_hidden": 8}})
    s, r = build_agents(cfg, np.random.default_rng(0))
    state = {"sender": s.state_dict(), "receiver": r.state_dict()}
    save_checkpoint(tmp_path / "a.json", state, 7, cfg.digest())
    loaded, meta = load_checkpoint(tmp_path / "a.json")
    save_checkpoint(tmp_path / "b.json", loaded, meta["step"], meta["config_hash"])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert meta == {"config_hash": cfg.digest(), "step": 7}
    for k, v in state["sender"].items():
        assert np.array_equal(loaded["sender"][k], v)


@pytest.mark.parametrize("mutate,match", [
    (lambda d: d.update(version=99), "version"),
    (lambda d: d.update(format="other"), "not an"),
    (lambda d: d["params"]["sender.w"].update(shape=[3, 3]), "values for shape"),
    (lambda d: d["params"]["sender.w"].update(data=[float("nan"), 1.0]), "non-finite"),
])
def test_bad_checkpoints(tmp_path, mutate, match):
    doc = json.loads(encode({"sender": {"w": np.array([1.0, 2.0])}}, 1, "abc"))
    mutate(doc)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match=match):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# a hand-built sender whose greedy language is perfectly compositional


def compositional_sender_state(cfg):
    """Sender weights naming attribute 0 at the first step and attribute 1 at the second.

    Hidden dims 0..7 hold the object's one-hot (frozen by the update gate),
    dim 8 is a step flag set from the previous symbol's embedding.
    """
    sender, _ = build_agents(cfg, stream_rng(make_streams(cfg.seed), "init"))
    d, n_in, v = cfg.model.hidden, 8, cfg.world.V_attr
    p = {k: np.zeros_like(a) for k, a in sender.state_dict().items()}
    p["perception.layers.0.W"][:n_in, :n_in] = np.eye(n_in)
    p["perception.layers.1.W"][:n_in, :n_in] = np.eye(n_in)
    p["init_proj.W"][:n_in, :n_in] = np.eye(n_in)
    p["embedding.table"][1:cfg.game.vocab + 1, 0] = 1.0
    p["cell.b_z"][:] = -50.0
    p["cell.b_z"][8] = 50.0
    p["cell.W_h"][8, 0] = 5.0
    W, b = p["output.W"], p["output.b"]
    b[0] = -100.0
    for val in range(v):
        W[1 + val, val], W[1 + val, 8], b[1 + val] = 1.0, -2.0, 1.0
        W[1 + v + val, v + val], W[1 + v + val, 8], b[1 + v + val] = 1.0, 2.0, -1.0
    assert d > 8
    return p


def test_compositional_checkpoint_fixture_has_topsim_one(tmp_path):
    cfg = build_config({"world": {"K": 2, "V_attr": 4, "split": [1.0, 0.0, 0.0]}, "game": {"vocab": 8, "L": 2},
                        "model": {"hidden": 16, "perception_hidden": 8}})
    dump_config(cfg, tmp_path / "cfg.yaml")
    _, receiver = build_agents(cfg, np.random.default_rng(0))
    state = {"sender": compositional_sender_state(cfg), "receiver": receiver.state_dict()}
    save_checkpoint(tmp_path / "comp.ckpt.json", state, 0, cfg.digest())
    assert cli.main(["analyze", "--checkpoint", str(tmp_path / "comp.ckpt.json"),
                     "--config", str(tmp_path / "cfg.yaml")]) == 0
    metrics = json.loads((tmp_path / "comp.metrics.json").read_text())
    assert metrics["topographic_similarity"] == pytest.approx(1.0, abs=1e-12)
    assert metrics["distinct_ratio"] == 1.0
    records = [json.loads(x) for x in (tmp_path / "comp.language.jsonl").read_text().splitlines()]
    for rec in records:
        a0, a1 = rec["attrs"]
        assert rec["message"] == [1 + a0, 5 + a1]
