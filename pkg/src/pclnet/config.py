"""Strict, line-oriented run configuration.

Files use `[section]` headers and `key = value` lines; `#` starts a
comment. Unknown sections or keys are rejected with the offending line
number, as are type or constraint violations. Omitted keys fall back to
the pipeline defaults.
"""

from dataclasses import dataclass

from pclnet import nn
from pclnet.contrastive import PretrainConfig


class ConfigError(ValueError):
    """Malformed or invalid run configuration."""


def _parse_int(text):
    return int(text, 10)


def _parse_float(text):
    return float(text)


def _parse_int_list(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(int(v.strip(), 10) for v in text.split(","))


def _parse_str(text):
    return text


# section -> key -> (parser, default, constraint message or None, predicate)
SCHEMA = {
    "run": {
        "seed": (_parse_int, 0, None, None),
        "patch_size": (_parse_int, 15, "patch_size must be a positive odd integer",
                       lambda v: v > 0 and v % 2 == 1),
        "candidate_stride": (_parse_int, 4, "candidate_stride must be > 0",
                             lambda v: v > 0),
    },
    "synth": {
        "height": (_parse_int, 64, "height must be > 0", lambda v: v > 0),
        "width": (_parse_int, 192, "width must be > 0", lambda v: v > 0),
        "num_classes": (_parse_int, 3, "num_classes must be >= 1",
                        lambda v: v >= 1),
        "looks": (_parse_int, 8, "looks must be >= 1", lambda v: v >= 1),
    },
    "cluster": {
        "num_clusters": (_parse_int, 35, "num_clusters must be >= 1",
                         lambda v: v >= 1),
        "max_iter": (_parse_int, 50, "max_iter must be >= 1", lambda v: v >= 1),
    },
    "diversity": {
        "gamma": (_parse_float, 0.42, "gamma must be > 0", lambda v: v > 0),
        "samples_per_cluster": (_parse_int, 600,
                                "samples_per_cluster must be >= 1",
                                lambda v: v >= 1),
    },
    "pretrain": {
        "epochs": (_parse_int, 800, "epochs must be >= 1", lambda v: v >= 1),
        "learning_rate": (_parse_float, 0.1, "learning_rate must be > 0",
                          lambda v: v > 0),
        "milestones": (_parse_int_list, (300, 500), None, None),
        "factor": (_parse_float, 0.5, "factor must be in (0, 1]",
                   lambda v: 0 < v <= 1),
        "batch_size": (_parse_int, 512, "batch_size must be >= 1",
                       lambda v: v >= 1),
        "bank_capacity": (_parse_int, 8192, "bank_capacity must be >= 1",
                          lambda v: v >= 1),
        "momentum": (_parse_float, 0.999, "momentum must be in (0, 1)",
                     lambda v: 0 < v < 1),
        "temperature": (_parse_float, 0.4, "temperature must be > 0",
                        lambda v: v > 0),
    },
    "finetune": {
        "epochs": (_parse_int, 300, "epochs must be >= 1", lambda v: v >= 1),
        "learning_rate": (_parse_float, 0.01, "learning_rate must be > 0",
                          lambda v: v > 0),
        "batch_size": (_parse_int, 32, "batch_size must be >= 1",
                       lambda v: v >= 1),
        "shots_per_class": (_parse_int, 20, "shots_per_class must be >= 1",
                            lambda v: v >= 1),
    },
    "paths": {
        "scene": (_parse_str, "", None, None),
        "labels": (_parse_str, "", None, None),
        "out": (_parse_str, "", None, None),
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Typed view of a parsed configuration: values[section][key]."""

    values: tuple  # nested as ((section, ((key, value), ...)), ...)

    def get(self, section, key):
        return dict(dict(self.values)[section])[key]

    def section(self, section):
        return dict(dict(self.values)[section])

    def pretrain_config(self):
        p = self.section("pretrain")
        sgd = nn.SgdConfig(learning_rate=p["learning_rate"],
                           milestones=p["milestones"], factor=p["factor"],
                           batch_size=p["batch_size"])
        return PretrainConfig(epochs=p["epochs"], batch_size=p["batch_size"],
                              bank_capacity=p["bank_capacity"],
                              momentum=p["momentum"],
                              temperature=p["temperature"], sgd=sgd,
                              seed=self.get("run", "seed"))


def _defaults():
    return {section: {key: spec[1] for key, spec in keys.items()}
            for section, keys in SCHEMA.items()}


def parse_config_text(text):
    """Parse configuration text into a RunConfig; strict about every line."""
    values = _defaults()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(f"line {lineno}: unknown key '{key}' in "
                              f"[{section}]")
        parser, _, message, predicate = SCHEMA[section][key]
        try:
            parsed = parser(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for '{key}': "
                              f"{value!r}") from None
        if predicate is not None and not predicate(parsed):
            raise ConfigError(f"line {lineno}: {message}")
        values[section][key] = parsed
    return RunConfig(tuple((s, tuple(sorted(v.items())))
                           for s, v in sorted(values.items())))


def parse_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


def default_config():
    return parse_config_text("")


def format_config(config):
    """Render a RunConfig as text that parses back to an equal RunConfig."""
    lines = []
    for section, items in config.values:
        lines.append(f"[{section}]")
        for key, value in items:
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)
