from dataclasses import replace

import pytest

from fel.config import ExperimentConfig, ModelConfig, RunConfig, TokenizerConfig, TrainConfig
from fel.datagen.synthetic import CorpusParams
from fel.pipeline import build_workspace, pretrain_data


def toy_run() -> RunConfig:
    run = RunConfig(
        tokenizer=TokenizerConfig(vocab_size=150),
        model=ModelConfig(vocab_size=150, emb_dim=16, n_layers=1, head_dim=8, ffn_dim=32, max_seq_len=48),
        pretrain=TrainConfig(lr=3e-3, batch_size=8, max_steps=30),
        finetune=TrainConfig(lr=3e-3, batch_size=8, epochs=4, scope="pred"),
        experiment=ExperimentConfig(corpus=CorpusParams(n_docs=60, entity_lexicon_size=120, doc_len=40, seed=5),
                                    n_pool=40, n_test=30, n_ad_snippets=30, sizes=[10, 20], k_folds=2, seeds=[0]),
    )
    run.validate()
    return run


@pytest.fixture(scope="session")
def toy_config():
    return toy_run()


@pytest.fixture(scope="session")
def toy_ws(toy_config):
    return build_workspace(toy_config)


@pytest.fixture(scope="session")
def toy_data(toy_ws, toy_config):
    return pretrain_data(toy_ws, toy_config)


@pytest.fixture
def toy_model_cfg(toy_ws, toy_config):
    return replace(toy_config.model, vocab_size=len(toy_ws.vocab))


_verdicts = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_verdicts] = []


@pytest.fixture
def verdict(request):
    """Record an acceptance line, echo it, and fail the test if not ok."""
    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        request.config.stash[_verdicts].append(line)
        request.node.add_report_section("call", "acceptance", line)
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_verdicts, [])
    if lines:
        terminalreporter.section("acceptance")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
