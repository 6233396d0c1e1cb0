"""Experiment configuration: a flat ``key = value`` text format.

Keys live under ``[section]`` headers (``[problem]``, ``[alg]``, ``[run]``,
``[out]``) or are written fully qualified (``run.reps = 20``). ``#`` starts a
comment. Lists are comma separated.

Example
-------
::

    [problem]
    family = tanh_chain
    T = 3
    dims = 8, 8, 8
    noise = 0.1
    feasible = box
    radius = 0.1

    [alg]
    variant = alg1, alg2

    [run]
    N_grid = 64, 256, 1024
    reps = 20
"""

from dataclasses import dataclass, fields

from .errors import ConfigurationError
from .params import VARIANTS
from .problems import FAMILIES


def _int(text):
    return int(text)


def _float(text):
    return float(text)


def _str(text):
    if not text:
        raise ValueError("empty value")
    return text


def _int_list(text):
    return tuple(int(t) for t in _items(text))


def _str_list(text):
    return tuple(_items(text))


def _items(text):
    items = [t.strip() for t in text.split(",")]
    if not items or any(not t for t in items):
        raise ValueError("empty list item")
    return items


def _optional(parse):
    return lambda text: None if text.lower() in ("", "none") else parse(text)


# key -> (attribute, parser, type label, default); required keys use _REQUIRED
_REQUIRED = object()
SCHEMA = {
    "problem.family": ("family", _str, "string", _REQUIRED),
    "problem.T": ("T", _int, "integer", 3),
    "problem.dims": ("dims", _optional(_int_list), "integer list", None),
    "problem.seed": ("problem_seed", _int, "integer", 1),
    "problem.noise": ("noise", _float, "real", 0.1),
    "problem.feasible": ("feasible", _str, "string", "box"),
    "problem.radius": ("radius", _float, "real", 0.1),
    "problem.file": ("problem_file", _optional(_str), "path", None),
    "alg.variant": ("variants", _str_list, "string list", _REQUIRED),
    "run.N_grid": ("N_grid", _int_list, "integer list", (64, 256, 1024)),
    "run.reps": ("reps", _int, "integer", 20),
    "run.seed": ("seed", _int, "integer", 0),
    "run.workers": ("workers", _int, "integer", 1),
    "out.dir": ("out_dir", _str, "path", "nestedavg-out"),
    "out.cadence": ("cadence", _int, "integer", 0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment settings.

    ``cadence = 0`` selects the automatic trace thinning: every iteration for
    ``N <= 2048``, otherwise about 1024 evenly spaced records.
    """

    family: str
    variants: tuple
    T: int = 3
    dims: tuple = None
    problem_seed: int = 1
    noise: float = 0.1
    feasible: str = "box"
    radius: float = 0.1
    problem_file: str = None
    N_grid: tuple = (64, 256, 1024)
    reps: int = 20
    seed: int = 0
    workers: int = 1
    out_dir: str = "nestedavg-out"
    cadence: int = 0

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update({k: v for k, v in changes.items() if v is not None})
        out = ExperimentConfig(**values)
        problems = _validate(out)
        if problems:
            raise ConfigurationError("; ".join(problems))
        return out


class ConfigErrors(ConfigurationError):
    """All violations found in one config text."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("\n".join(self.violations))


def parse_config(text):
    """Parse config text; raises :class:`ConfigErrors` listing every violation."""
    values = {}
    seen = {}
    errors = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}: {raw.strip()!r}"
        if line.startswith("["):
            if not line.endswith("]") or not line[1:-1].strip():
                errors.append(f"{where}: malformed section header")
                continue
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            errors.append(f"{where}: expected 'key = value'")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        full = key if "." in key or section is None else f"{section}.{key}"
        if full not in SCHEMA:
            errors.append(f"{where}: unknown key {full!r}")
            continue
        if full in seen:
            errors.append(f"{where}: duplicate key {full!r} (first set on line {seen[full]})")
            continue
        seen[full] = lineno
        attr, parse, label, _ = SCHEMA[full]
        try:
            values[attr] = parse(value)
        except ValueError:
            errors.append(f"{where}: {full} expects {label}, got {value!r}")
    for key, (attr, _, _, default) in SCHEMA.items():
        if default is _REQUIRED and key not in seen:
            errors.append(f"missing required key {key!r}")
    if errors:
        raise ConfigErrors(errors)
    config = ExperimentConfig(**values)
    problems = _validate(config)
    if problems:
        raise ConfigErrors(
            [f"line {seen.get(k, '?')}: {msg}" for k, msg in problems_with_keys(config)]
        )
    return config


def problems_with_keys(config):
    out = []
    if config.family not in FAMILIES:
        out.append(("problem.family", f"problem.family must be one of {', '.join(FAMILIES)}"))
    if config.T < 1:
        out.append(("problem.T", "problem.T must be at least 1"))
    if config.noise < 0:
        out.append(("problem.noise", "problem.noise must be nonnegative"))
    if config.feasible not in ("full", "box", "ball"):
        out.append(("problem.feasible", "problem.feasible must be full, box or ball"))
    if config.radius <= 0:
        out.append(("problem.radius", "problem.radius must be positive"))
    bad = [v for v in config.variants if v not in VARIANTS]
    if bad or not config.variants:
        out.append(("alg.variant", f"alg.variant entries must be among {', '.join(VARIANTS)}"))
    if len(set(config.variants)) != len(config.variants):
        out.append(("alg.variant", "alg.variant lists a variant twice"))
    if not config.N_grid or any(n < 1 for n in config.N_grid):
        out.append(("run.N_grid", "run.N_grid must be a nonempty list of positive integers"))
    elif any(b <= a for a, b in zip(config.N_grid, config.N_grid[1:])):
        out.append(("run.N_grid", "run.N_grid must be strictly increasing"))
    if config.reps < 1:
        out.append(("run.reps", "run.reps must be at least 1"))
    if config.workers < 1:
        out.append(("run.workers", "run.workers must be at least 1"))
    if config.cadence < 0:
        out.append(("out.cadence", "out.cadence must be nonnegative (0 = automatic)"))
    return out


def _validate(config):
    return [msg for _, msg in problems_with_keys(config)]


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config):
    """Text form that :func:`parse_config` maps back to ``config``."""
    lines = []
    section = None
    for key, (attr, _, _, _) in SCHEMA.items():
        sec, name = key.split(".", 1)
        if sec != section:
            if lines:
                lines.append("")
            lines.append(f"[{sec}]")
            section = sec
        lines.append(f"{name} = {_format(getattr(config, attr))}")
    return "\n".join(lines) + "\n"


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
