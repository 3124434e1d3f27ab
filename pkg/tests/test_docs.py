"""Cross-checks between the documentation and the config schema."""

import dataclasses
import re
from pathlib import Path

import yaml

from windprob import config

DOCS = Path(__file__).resolve().parent.parent / "docs"


def config_key_exists(dotted: str) -> bool:
    cls = config.RunConfig
    for part in dotted.split("."):
        if not dataclasses.is_dataclass(cls):
            return False
        fields = {f.name: f for f in dataclasses.fields(cls)}
        if part not in fields:
            return False
        nested = config._nested_dataclass(fields[part])
        cls = nested if nested is not None else fields[part].type
    return True


def test_every_dotted_config_key_in_docs_exists():
    pattern = re.compile(r"`([a-z_]+(?:\.[a-z_0-9]+)+)`")
    checked = 0
    for doc in DOCS.glob("*.md"):
        for key in pattern.findall(doc.read_text()):
            if key.endswith((".csv", ".json", ".yaml", ".txt", ".md")):
                continue
            assert config_key_exists(key), f"{doc.name} references unknown key {key}"
            checked += 1
    assert checked >= 5  # the reference table must actually be checked


def test_walkthrough_yaml_block_parses_as_valid_config(tmp_path):
    text = (DOCS / "walkthrough.md").read_text()
    match = re.search(r"```yaml\n(.*?)```", text, re.DOTALL)
    assert match, "walkthrough must contain a yaml config example"
    path = tmp_path / "doc.yaml"
    path.write_text(match.group(1))
    cfg = config.load_config(path)
    assert cfg.seed == 7


def test_conventions_state_the_crps_factor():
    text = (DOCS / "conventions.md").read_text()
    assert "0.5 * |y - yhat|" in text
    assert "factor" in text


def test_config_table_covers_all_top_level_keys():
    text = (DOCS / "conventions.md").read_text()
    for f in dataclasses.fields(config.RunConfig):
        if f.name == "seed":
            assert "`seed`" in text
            continue
        assert f"`{f.name}." in text, f"docs do not mention config section {f.name}"
