from pathlib import Path

import pytest

from lexrag.config import ConfigError, load_config
from lexrag.hybrid import HashingEmbedder

DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


def test_default_config_values():
    cfg = load_config(DEFAULT)
    assert (cfg.bm25.k1, cfg.bm25.b) == (1.2, 0.75)
    assert (cfg.fusion.rrf_k, cfg.fusion.per_list_depth) == (60, 50)
    assert cfg.agent.max_turns == 8
    assert (cfg.agent.temperature, cfg.agent.top_p) == (0.6, 0.95)
    assert cfg.judge_temperature == 0.3
    assert not cfg.hybrid_enabled
    assert cfg.index == (DEFAULT.parent / "../build/index").resolve()


def write(tmp_path, text):
    p = tmp_path / "c.toml"
    p.write_text(text)
    return p


def test_relative_paths_and_hashing_embedder(tmp_path):
    cfg = load_config(write(tmp_path, """
[service]
index = "idx"
dense_index = "sub/dense"
[embedding]
kind = "hashing"
dim = 16
"""))
    assert cfg.index == tmp_path / "idx"
    assert cfg.dense_index == tmp_path / "sub" / "dense"
    assert cfg.hybrid_enabled
    emb = cfg.embedder()
    assert isinstance(emb, HashingEmbedder) and emb.embed(["x"]).shape == (1, 16)


@pytest.mark.parametrize("text,message", [
    ("[bm25]\nk3 = 1", "unknown key 'k3'"),
    ("[service]\nwat = 1", "unknown key 'wat'"),
    ("[bm25]\nk1 = -1", "bm25"),
    ("[agent]\nbackend = 'vector'", "agent"),
    ("[service]\ndense_index = 'd'", "needs both"),
    ("[embedding]\nkind = 'hashing'", "needs both"),
    ("not toml = = =", "c.toml"),
])
def test_config_errors(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message):
        load_config(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")


def test_missing_sections_are_reported_on_use(tmp_path):
    cfg = load_config(write(tmp_path, ""))
    assert cfg.judge_client() is None and cfg.judge_temperature == 0.3
    with pytest.raises(ConfigError, match=r"\[llm\]"):
        cfg.llm_client()
    with pytest.raises(ConfigError, match=r"\[embedding\]"):
        cfg.embedder()
