"""Flat INI-style run configuration with one section per pipeline stage.

Hyperparameter keys are named after the quantities they set (f, C,
L_max, d_X, d_HW, d_LM, n, bptt, ...) so a run file reads like the
experiment description.  Relative artifact paths resolve against the
config file's directory.
"""

from __future__ import annotations

import configparser
from pathlib import Path


class ConfigError(ValueError):
    """Missing or malformed configuration."""


DEFAULTS = """
[run]
seed = 1
threads = 1

[corpus]
profile = raw

[synth]
n_tokens = 50000

[mine]
f = 60
L_max = 6
patterns = patterns.tsv

[crf]
C = 400.0
m = 10
max_iter = 150
grad_tol = 1e-5
table = table.tsv
iter_log = crf_iters.csv

[automaton]
file = automaton.txt

[encode]
x = patterns
out = encoded

[lm]
composition = sum
size = custom
d_X = 64
d_HW = 64
d_LM = 64
n = auto
cnn_widths = 1,2,3
cnn_depths = 20,20,20
dropout = auto

[train]
bptt = 35
batch = 20
lr0 = 0.7
epochs = 65
init_range = 0.05
forget_bias = 1.0
highway_bias = -2.0
clip = 5.0
checkpoint = model.npz
metrics = metrics.csv

[eval]
split = test
out = eval.json

[gates]
split = valid
max_samples = 200000
out = gates.csv
"""


class RunConfig:
    """Typed access to the config file, with CLI overrides applied."""

    def __init__(self, path, overrides: list[str] | None = None):
        self.path = Path(path)
        if not self.path.exists():
            raise ConfigError(f"config file not found: {self.path}")
        self.base_dir = self.path.parent
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
        parser.read_string(DEFAULTS)
        try:
            with open(self.path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (configparser.Error, UnicodeDecodeError) as e:
            raise ConfigError(f"cannot parse {self.path}: {e}") from e
        for item in overrides or []:
            key, sep, value = item.partition("=")
            if not sep or "." not in key:
                raise ConfigError(
                    f"override {item!r} must look like section.key=value"
                )
            section, _, name = key.partition(".")
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section.strip(), name.strip(), value.strip())
        self._parser = parser
        self.text = self._render()

    def _render(self) -> str:
        lines = []
        for section in self._parser.sections():
            lines.append(f"[{section}]")
            for key, value in sorted(self._parser.items(section)):
                lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def get(self, section: str, key: str) -> str:
        try:
            return self._parser.get(section, key)
        except (configparser.NoSectionError, configparser.NoOptionError) as e:
            raise ConfigError(f"missing config value [{section}] {key}") from e

    def get_int(self, section: str, key: str) -> int:
        raw = self.get(section, key)
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not an integer") from None

    def get_float(self, section: str, key: str) -> float:
        raw = self.get(section, key)
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not a number") from None

    def get_path(self, section: str, key: str) -> Path:
        p = Path(self.get(section, key))
        return p if p.is_absolute() else self.base_dir / p

    def get_int_list(self, section: str, key: str) -> tuple[int, ...]:
        raw = self.get(section, key)
        try:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        except ValueError:
            raise ConfigError(
                f"[{section}] {key} = {raw!r} is not a comma-separated integer list"
            ) from None
