import json

import httpx
import pytest

from slatelab import cli
from slatelab.config import ConfigError, RunConfig, load_config, parse_config_text


def test_defaults_mirror_run_settings():
    cfg = RunConfig()
    t = cfg.train
    assert (t.k, t.B, t.lam, t.eta, t.clip_eps, t.kl_beta, t.eps_adv) == (5, 4, 0.1, 0.7, 0.2, 0.001, 1e-6)
    assert cfg.env.top_k == 3 and cfg.judge.mode == "oracle"


def test_file_and_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nenv.hops = 2\ntrain.lambda = 0.25  # inline\njudge.strict = false\noutput.dir = \"x y\"\n")
    cfg = load_config(path, ["--train.k=3", "env.seed=9"])
    assert cfg.env.hops == 2 and cfg.train.lam == 0.25 and cfg.judge.strict is False
    assert cfg.output.dir == "x y" and cfg.train.k == 3 and cfg.env.seed == 9


def test_text_roundtrip():
    cfg = RunConfig().replace(**{"train.mode": "em_final_only", "train.learning_rate": 0.5})
    again = parse_config_text(cfg.to_text())
    assert again.to_text() == cfg.to_text()
    assert "train.lambda = 0.1" in cfg.to_text()


@pytest.mark.parametrize(
    "override",
    ["train.k=0", "train.mode=ppo", "env.vocab_size=5", "train.clip_eps=1.5", "nope.key=1", "train.k=abc", "train.k", "judge.mode=remote"],
)
def test_invalid_config(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_bad_line(tmp_path):
    (tmp_path / "c").write_text("just words\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c")


def test_cli_train_writes_run_dir(tmp_path, capsys):
    out = tmp_path / "run"
    code = cli.main(["train", "--out", str(out), "--train.steps=3", "--output.checkpoint_every=2"])
    assert code == 0
    header = (out / "metrics.csv").read_text().splitlines()
    assert header[0] == "update,tokens,mean_step_reward,mean_total_reward,em_rate,mean_kl,mean_abs_adv,wall_ms"
    assert len(header) == 4
    assert (out / "checkpoints" / "final.json").exists() and (out / "checkpoints" / "update_000002.json").exists()
    assert (out / "trajectories.jsonl").read_text().strip()
    resolved = load_config(out / "config.txt")
    assert resolved.train.steps == 3 and resolved.output.dir == str(out)


def test_cli_steps_zero_headers_only(tmp_path):
    out = tmp_path / "r"
    assert cli.main(["train", "--out", str(out), "--train.steps=0"]) == 0
    assert (out / "metrics.csv").read_text().count("\n") == 1


def test_cli_config_error_exit(tmp_path):
    assert cli.main(["train", "--out", str(tmp_path), "--train.k=0"]) == 2


def test_cli_remote_judge_failure_exit(tmp_path):
    code = cli.main(
        ["train", "--out", str(tmp_path), "--train.steps=1", "--judge.mode=remote", "--judge.endpoint=http://127.0.0.1:9/none", "--judge.retries=0", "--judge.timeout=0.5"]
    )
    assert code == 3


def test_judge_smoke_stub(capsys):
    assert cli.main(["judge-smoke", "--stub"]) == 0
    out = capsys.readouterr().out
    assert out.count("score +0") == 3 and "raw:" in out


def test_judge_smoke_golden_mismatch(tmp_path, capsys):
    for f in cli.GOLDEN_DIR.iterdir():
        (tmp_path / f.name).write_bytes(f.read_bytes())
    text = (tmp_path / "query_rendered.txt").read_text()
    (tmp_path / "query_rendered.txt").write_text(text[:100] + "X" + text[101:])
    code = cli.main(["judge-smoke", "--stub", "--golden-dir", str(tmp_path)])
    assert code != 0
    assert "query: rendered prompt differs from golden file at byte 100" in capsys.readouterr().out


def test_judge_smoke_timeout(monkeypatch):
    def boom(self, *a, **kw):
        raise httpx.ConnectTimeout("timed out")

    monkeypatch.setattr(httpx.Client, "post", boom)
    assert cli.main(["judge-smoke", "--endpoint", "http://judge.test", "--retries", "1"]) == 3


def test_first_difference():
    assert cli.first_difference("abc", "abc") is None
    assert cli.first_difference("abc", "abd") == 2
    assert cli.first_difference("ab", "abc") == 2
    assert cli.first_difference("é", "e") == 0


def test_variance_cli_ok_and_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["variance", "--trials", "20000", "--out", str(a)]) == 0
    assert cli.main(["variance", "--trials", "20000", "--out", str(b)]) == 0
    assert (a / "variance.json").read_bytes() == (b / "variance.json").read_bytes()
    assert (a / "variance.csv").read_bytes() == (b / "variance.csv").read_bytes()
    report = json.loads((a / "variance.json").read_text())[0]
    assert 0.225 <= report["ratio"] <= 0.275


def test_variance_cli_violation_exit(tmp_path):
    assert cli.main(["variance", "--preset", "violation", "--trials", "5000", "--out", str(tmp_path)]) == 4
    report = json.loads((tmp_path / "variance.json").read_text())[0]
    assert report["assumption_flags"]["nonneg_future_cov"] is False


def test_variance_cli_bad_profile():
    assert cli.main(["variance", "--T", "3", "--profile", "1,2"]) == 2


def test_variance_cli_token_cost_and_probe(tmp_path, capsys):
    assert cli.main(["variance", "--preset", "token-cost", "--trials", "20000", "--out", str(tmp_path)]) == 0
    assert cli.main(["variance", "--preset", "inter-step", "--out", str(tmp_path)]) == 0
    assert "inter_step_probe" in json.loads((tmp_path / "extras.json").read_text())


def test_compare_and_sweep_cli(tmp_path, capsys):
    common = ["--train.steps=4", "--seeds", "0-1", "--output.trajectories=false"]
    assert cli.main(["compare", "--out", str(tmp_path / "c"), "--modes", "slate,em_final_only", *common]) == 0
    report = json.loads((tmp_path / "c" / "report.json").read_text())
    assert len(report["arms"]) == 4
    arms = {(a["label"], a["seed"]): a for a in report["arms"]}
    assert arms[("em_final_only", 0)]["tokens"] >= arms[("slate", 0)]["tokens"]
    assert cli.main(["sweep", "--out", str(tmp_path / "s"), "--values", "1,2", *common]) == 0
    assert (tmp_path / "s" / "arms.csv").read_text().count("\n") == 5
