import json
import shutil
from pathlib import Path

import pytest

from fel.cli import main
from fel.config import RunConfig

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
TOY = CONFIGS / "toy.json"


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert main(["gen-data", "--config", str(TOY), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory):
    out = tmp_path_factory.mktemp("pre")
    assert main(["pretrain", "--config", str(TOY), "--out", str(out)]) == 0
    return out


class TestErrors:
    def test_missing_config(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "pretrain", "--config", tmp_path / "nope.json", "--out", tmp_path)
        assert code == 1 and err.startswith("ERROR:CONFIG_NOT_FOUND:")

    def test_unknown_key(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"model": {"emb_dimm": 8}}))
        code, _, err = run_cli(capsys, "gen-data", "--config", cfg, "--out", tmp_path / "o")
        assert code == 1 and err.startswith("ERROR:CONFIG_INVALID:") and "model.emb_dimm" in err

    def test_invalid_json(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        code, _, err = run_cli(capsys, "gen-data", "--config", cfg, "--out", tmp_path / "o")
        assert code == 1 and err.startswith("ERROR:CONFIG_INVALID:")

    def test_bad_flag_value(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "finetune", "--config", TOY, "--scope", "everything")
        assert code == 1 and err.startswith("ERROR:USAGE:")

    def test_bad_objectives(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "pretrain", "--config", TOY, "--out", tmp_path, "--objectives", "MLM,FOO")
        assert code == 1 and err.startswith("ERROR:CONFIG_INVALID:")

    def test_missing_input(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "evaluate", "--config", TOY, "--out", tmp_path, "--checkpoint",
                               tmp_path / "x.ckpt", "--vocab", tmp_path / "v", "--test", tmp_path / "t")
        assert code == 1 and err.startswith("ERROR:INPUT_NOT_FOUND:")

    def test_corrupt_checkpoint(self, capsys, tmp_path, pretrained, generated):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes((pretrained / "model.ckpt").read_bytes()[:100])
        code, _, err = run_cli(capsys, "evaluate", "--config", TOY, "--out", tmp_path / "o", "--checkpoint", bad,
                               "--vocab", pretrained / "vocab.txt", "--test", generated / "ct_test.jsonl")
        assert code == 1 and err.startswith("ERROR:BAD_ARTIFACT:")

    def test_error_is_single_line(self, capsys, tmp_path):
        _, _, err = run_cli(capsys, "pretrain", "--config", tmp_path / "nope.json")
        assert err.count("\n") == 1


class TestResolvedConfig:
    def test_flags_override_and_are_recorded(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "gradcheck", "--config", TOY, "--out", tmp_path, "--seed", "7",
                             "--scope", "pred+trm", "--objectives", "mlm,hyp", "--task", "ad")
        assert code == 0
        run = RunConfig.load(tmp_path / "resolved_config.json")
        assert run.master_seed == 7 and run.finetune.scope == "pred+trm"
        assert run.pretrain.objectives == ["MLM", "HYP"] and run.experiment.task == "ad"

    def test_defaults_echoed(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{}")
        code, _, _ = run_cli(capsys, "build-vocab", "--config", cfg, "--out", tmp_path / "o",
                             "--corpus", CONFIGS.parent / "tests" / "data" / "tiny_corpus.txt")
        assert code == 0
        resolved = json.loads((tmp_path / "o" / "resolved_config.json").read_text())
        assert resolved == RunConfig().to_dict()


class TestCommands:
    def test_gen_data_artifacts(self, generated):
        names = {p.name for p in generated.iterdir()}
        assert {"corpus.txt", "ct_pool.jsonl", "ct_test.jsonl", "ad.jsonl", "vocab.txt", "lexicon.json",
                "resolved_config.json"} <= names

    def test_gradcheck_pass(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "gradcheck", "--config", TOY, "--out", tmp_path)
        assert code == 0 and out.startswith("max_rel_err=") and out.strip().endswith("PASS")
        assert json.loads((tmp_path / "gradcheck.json").read_text())["passed"] is True

    def test_pretrain_artifacts(self, pretrained):
        log = (pretrained / "loss_log.tsv").read_text().splitlines()
        run = RunConfig.load(TOY)
        assert len({int(line.split("\t")[0]) for line in log}) == run.pretrain.max_steps
        assert (pretrained / "model.ckpt").stat().st_size > 0

    def test_finetune_emits_cv_report(self, capsys, tmp_path, pretrained, generated):
        code, out, _ = run_cli(capsys, "finetune", "--config", TOY, "--out", tmp_path, "--scope", "pred",
                               "--checkpoint", pretrained / "model.ckpt", "--vocab", pretrained / "vocab.txt",
                               "--train", generated / "ct_pool.jsonl", "--test", generated / "ct_test.jsonl",
                               "--train-size", "10")
        assert code == 0
        doc = json.loads(out)
        assert doc == json.loads((tmp_path / "cv_report.json").read_text())
        assert doc["split_mode"] == "ct_disjoint" and doc["aggregate"]["n_runs"] == 2

    def test_finetune_ad_rejects_test_file(self, capsys, tmp_path, generated):
        code, _, err = run_cli(capsys, "finetune", "--config", TOY, "--out", tmp_path, "--task", "ad",
                               "--train", generated / "ad.jsonl", "--test", generated / "ad.jsonl")
        assert code == 1 and err.startswith("ERROR:USAGE:")

    def test_finetune_overlapping_split(self, capsys, tmp_path, generated):
        code, _, err = run_cli(capsys, "finetune", "--config", TOY, "--out", tmp_path, "--train",
                               generated / "ct_pool.jsonl", "--test", generated / "ct_pool.jsonl",
                               "--train-size", "10")
        assert code == 1 and err.startswith("ERROR:SPLIT_OVERLAP:")

    @pytest.mark.parametrize("test_file, task", [("ct_test.jsonl", "ct"), ("ad.jsonl", "ad")])
    def test_evaluate(self, capsys, tmp_path, pretrained, generated, test_file, task):
        code, _, _ = run_cli(capsys, "evaluate", "--config", TOY, "--out", tmp_path, "--checkpoint",
                             pretrained / "model.ckpt", "--vocab", pretrained / "vocab.txt",
                             "--test", generated / test_file)
        assert code == 0
        doc = json.loads((tmp_path / "metrics.json").read_text())
        assert doc["task"] == task and doc["perplexity"] >= 1.0

    def test_writes_only_inside_out(self, capsys, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        run_cli(capsys, "gen-data", "--config", TOY, "--out", "artifacts")
        assert sorted(p.name for p in tmp_path.iterdir()) == ["artifacts"]


class TestReplay:
    """Rerunning from the resolved config reproduces every artifact."""

    def _replay(self, capsys, tmp_path, command, extra=()):
        first, second = tmp_path / "first", tmp_path / "second"
        assert run_cli(capsys, command, "--config", TOY, "--out", first, "--seed", "3", *extra)[0] == 0
        assert run_cli(capsys, command, "--config", first / "resolved_config.json", "--out", second, *extra)[0] == 0
        return tree_bytes(first), tree_bytes(second)

    @pytest.mark.parametrize("command", ["gen-data", "build-vocab", "pretrain"])
    def test_byte_exact(self, capsys, tmp_path, command):
        a, b = self._replay(capsys, tmp_path, command)
        assert a == b and len(a) > 1

    def test_finetune_byte_exact(self, capsys, tmp_path, pretrained, generated):
        extra = ("--checkpoint", pretrained / "model.ckpt", "--vocab", pretrained / "vocab.txt",
                 "--train", generated / "ct_pool.jsonl", "--test", generated / "ct_test.jsonl", "--train-size", "10")
        a, b = self._replay(capsys, tmp_path, "finetune", extra)
        assert a == b and "cv_report.json" in a


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "fel", "gradcheck", "--config", str(tmp_path / "missing.json")],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stderr.startswith("ERROR:CONFIG_NOT_FOUND:")
    assert shutil.which("fel") is not None
