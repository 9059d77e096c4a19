"""Run configuration: a line-oriented ``key = value`` format with section headers.

Example::

    [attack]
    epsilon = 16/255        # fractions are accepted for real-valued keys
    iters = 100
    optimizer = "mi-fgsm"

    [fgr]
    kind = "polynomial"
    p = 1.5

    [[ensemble]]            # repeated table: one entry per header
    kind = "linear-patch"
    patch_size = 4
    seed = 1

    [[pair]]
    source = "images/src0.ppm"
    target = "images/tgt0.ppm"

    [run]
    output_dir = "out"

Values are numbers, ``a/b`` fractions, quoted strings, bare words, ``true``/``false``
or ``[...]`` lists, one per line. Unknown sections or keys are errors, and every
error names the offending key and line. On the command line each scalar key
``section.key`` has the flag ``--section-key`` (underscores become hyphens).
"""

from __future__ import annotations

import ast
import dataclasses
import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from .attack import AttackConfig, default_ensemble
from .defenses import DefenseSpec
from .encoders import EncoderSpec
from .validation import DomainError


class ConfigError(ValueError):
    pass


def _real(v):
    if isinstance(v, bool) or not isinstance(v, (int, float, Fraction)):
        raise TypeError("expected a real number")
    return float(v)


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _reals(k):
    def conv(v):
        if not isinstance(v, (list, tuple)) or (k and len(v) != k):
            raise TypeError(f"expected a list of {k or 'one or more'} numbers")
        return tuple(_real(x) for x in v)

    return conv


def _ints(k):
    def conv(v):
        if not isinstance(v, (list, tuple)) or len(v) != k:
            raise TypeError(f"expected a list of {k} integers")
        return tuple(_int(x) for x in v)

    return conv


def _values(v):
    if not isinstance(v, (list, tuple)) or not v:
        raise TypeError("expected a non-empty list")
    return tuple(float(x) if isinstance(x, (Fraction, float)) else x for x in v)


# config key -> (dataclass field, converter)
ATTACK_KEYS = {
    "epsilon": ("epsilon", _real),
    "alpha": ("alpha", _real),
    "iters": ("iters", _int),
    "theta": ("theta", _int),
    "n": ("n", _int),
    "w_g": ("w_g", _real),
    "w_l": ("w_l", _real),
    "lambda": ("lam", _real),
    "mu": ("mu", _real),
    "temperature": ("temperature", _real),
    "optimizer": ("optimizer", _str),
    "adam_beta1": ("adam_beta1", _real),
    "adam_beta2": ("adam_beta2", _real),
    "adam_eps": ("adam_eps", _real),
    "sinkhorn_iters": ("sinkhorn_iters", _int),
    "sinkhorn_tol": ("sinkhorn_tol", _real),
}
FGR_KEYS = {
    "kind": ("kind", _str),
    "p": ("p", _real),
    "beta": ("beta", _real),
    "center": ("center", _real),
    "tau_low": ("tau_low", _real),
    "tau_high": ("tau_high", _real),
    "gammas": ("gammas", _reals(3)),
    "top_k": ("top_k", _reals(3)),
}
RUN_KEYS = {
    "output_dir": ("output_dir", _str),
    "parallelism": ("parallelism", _int),
    "master_seed": ("master_seed", _int),
    "image_size": ("image_size", _ints(3)),
    "synthetic_pairs": ("synthetic_pairs", _int),
}
SWEEP_KEYS = {
    "param": ("param", _str),
    "values": ("values", _values),
}
ENCODER_KEYS = {
    "kind": _str,
    "patch_size": _int,
    "embed_dim": _int,
    "seed": _int,
    "pixel_mean": _real,
}
PAIR_KEYS = {"source": _str, "target": _str}
DEFENSE_KEYS = {"kind": _str, "quality": _int, "sigma": _real, "kernel": _int, "ratio": _real}

SCALAR_SECTIONS = {"attack": ATTACK_KEYS, "fgr": FGR_KEYS, "run": RUN_KEYS, "sweep": SWEEP_KEYS}
TABLE_SECTIONS = {"ensemble": ENCODER_KEYS, "holdout": ENCODER_KEYS, "pair": PAIR_KEYS, "defense": DEFENSE_KEYS}
SWEEPABLE = tuple(f"attack.{k}" for k in ATTACK_KEYS) + tuple(f"fgr.{k}" for k in FGR_KEYS)


def default_holdouts(input_size=(32, 32, 3)) -> list[EncoderSpec]:
    return [EncoderSpec("attention-1layer", 4, 32, seed=1001, input_size=input_size)]


def default_defenses() -> list[DefenseSpec]:
    return [DefenseSpec("jpeg-like"), DefenseSpec("gaussian"), DefenseSpec("center-crop")]


@dataclass(frozen=True)
class RunConfig:
    attack: AttackConfig = field(default_factory=AttackConfig)
    ensemble: tuple[EncoderSpec, ...] = field(default_factory=lambda: tuple(default_ensemble()))
    holdouts: tuple[EncoderSpec, ...] = field(default_factory=lambda: tuple(default_holdouts()))
    pairs: tuple[tuple[str, str], ...] = ()
    defenses: tuple[DefenseSpec, ...] = field(default_factory=lambda: tuple(default_defenses()))
    output_dir: str = "freqalign-out"
    parallelism: int = 1
    master_seed: int = 0
    image_size: tuple[int, int, int] = (32, 32, 3)
    synthetic_pairs: int = 20
    sweep_param: str | None = None
    sweep_values: tuple = ()

    def with_value(self, dotted: str, value) -> "RunConfig":
        """Copy with one ``section.key`` scalar replaced (used by sweeps)."""
        if dotted not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {dotted!r}")
        section, key = dotted.split(".", 1)
        fname, conv = (ATTACK_KEYS if section == "attack" else FGR_KEYS)[key]
        try:
            value = conv(value)
            if section == "attack":
                return dataclasses.replace(self, attack=self.attack.replace(**{fname: value}))
            fgr = dataclasses.replace(self.attack.fgr, **{fname: value})
            return dataclasses.replace(self, attack=self.attack.replace(fgr=fgr))
        except (TypeError, DomainError) as exc:
            raise ConfigError(f"key {dotted}: {exc} (got {value!r})") from None


# ---------------------------------------------------------------- parsing


def _strip_comment(line: str) -> str:
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


_FRACTION = re.compile(r"^[+-]?\d+(\.\d*)?\s*/\s*\d+(\.\d*)?$")
_BARE = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


def parse_value(text: str) -> Any:
    text = text.strip()
    if text in ("true", "false"):
        return text == "true"
    if _FRACTION.match(text):
        num, den = (Fraction(part.strip()) for part in text.split("/"))
        if den == 0:
            raise ValueError("division by zero")
        return num / den
    if text.startswith("["):
        inner = text[1:-1] if text.endswith("]") else None
        if inner is None:
            raise ValueError("unterminated list")
        items = [s for s in _split_list(inner) if s.strip()]
        return [parse_value(s) for s in items]
    if _BARE.match(text):
        return text
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError) as exc:
        raise ValueError(f"cannot parse value {text!r}") from exc


def _split_list(inner: str) -> list[str]:
    parts, depth, quote, start = [], 0, None, 0
    for i, ch in enumerate(inner):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(inner[start:i])
            start = i + 1
    parts.append(inner[start:])
    return parts


@dataclass
class RawConfig:
    """Parsed but unvalidated settings with their source locations."""

    scalars: dict = field(default_factory=dict)  # (section, key) -> (value, where)
    tables: dict = field(default_factory=dict)  # section -> [(header_where, {key: (value, where)})]


def read_config(text: str, origin: str = "config") -> RawConfig:
    raw = RawConfig()
    section, table = None, None
    for lineno, line in enumerate(text.splitlines(), 1):
        where = f"{origin} line {lineno}"
        body = _strip_comment(line).strip()
        if not body:
            continue
        m = re.fullmatch(r"\[\[\s*([A-Za-z_]+)\s*\]\]", body)
        if m:
            section = m.group(1)
            if section not in TABLE_SECTIONS:
                raise ConfigError(f"{where}: unknown table [[{section}]]")
            table = {}
            raw.tables.setdefault(section, []).append((where, table))
            continue
        m = re.fullmatch(r"\[\s*([A-Za-z_]+)\s*\]", body)
        if m:
            section, table = m.group(1), None
            if section not in SCALAR_SECTIONS:
                raise ConfigError(f"{where}: unknown section [{section}]")
            continue
        if "=" not in body:
            raise ConfigError(f"{where}: expected 'key = value'")
        key, value_text = (s.strip() for s in body.split("=", 1))
        if section is None:
            raise ConfigError(f"{where}: key {key!r} appears before any section header")
        known = TABLE_SECTIONS[section] if table is not None else SCALAR_SECTIONS[section]
        if key not in known:
            raise ConfigError(f"{where}: unknown key {section}.{key}")
        try:
            value = parse_value(value_text)
        except ValueError as exc:
            raise ConfigError(f"{where}: key {section}.{key}: {exc}") from None
        if table is not None:
            table[key] = (value, where)
        else:
            raw.scalars[(section, key)] = (value, where)
    return raw


def _convert(conv, value, name: str, where: str):
    try:
        return conv(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: key {name}: {exc} (got {value!r})") from None


def build_config(raw: RawConfig, base: RunConfig | None = None) -> RunConfig:
    """Validate ``raw`` on top of ``base`` (defaults when omitted)."""
    cfg = base or RunConfig()
    run_updates = {}
    for (section, key), (value, where) in raw.scalars.items():
        if section == "run":
            fname, conv = RUN_KEYS[key]
            run_updates[fname] = (_convert(conv, value, f"run.{key}", where), where, key)

    def apply(obj, updates, section):
        for key, fname, val, where in updates:
            try:
                obj = dataclasses.replace(obj, **{fname: val})
            except DomainError as exc:
                raise ConfigError(f"{where}: key {section}.{key}: {exc}") from None
        return obj

    fgr_updates, attack_updates = [], []
    for (section, key), (value, where) in raw.scalars.items():
        if section == "fgr":
            fname, conv = FGR_KEYS[key]
            fgr_updates.append((key, fname, _convert(conv, value, f"fgr.{key}", where), where))
        elif section == "attack":
            fname, conv = ATTACK_KEYS[key]
            attack_updates.append((key, fname, _convert(conv, value, f"attack.{key}", where), where))
    # kind first so that per-kind checks see the final kind
    fgr_updates.sort(key=lambda u: u[0] != "kind")
    fgr = apply(cfg.attack.fgr, fgr_updates, "fgr")
    attack = apply(cfg.attack, attack_updates, "attack")
    try:
        attack = attack.replace(fgr=fgr)
    except DomainError as exc:
        raise ConfigError(f"key fgr: {exc}") from None

    updates = {"attack": attack}
    for fname, (val, where, key) in run_updates.items():
        if fname == "parallelism" and val < 1:
            raise ConfigError(f"{where}: key run.parallelism: must be >= 1")
        if fname == "synthetic_pairs" and val < 0:
            raise ConfigError(f"{where}: key run.synthetic_pairs: must be >= 0")
        if fname == "master_seed" and not 0 <= val < 2**64:
            raise ConfigError(f"{where}: key run.master_seed: must be a 64-bit unsigned integer")
        if fname == "image_size" and min(val) < 1:
            raise ConfigError(f"{where}: key run.image_size: entries must be positive")
        updates[fname] = val
    image_size = updates.get("image_size", cfg.image_size)

    sweep = {key: (value, where) for (section, key), (value, where) in raw.scalars.items() if section == "sweep"}
    if "param" in sweep:
        param, where = sweep["param"]
        param = _convert(_str, param, "sweep.param", where)
        if param not in SWEEPABLE:
            raise ConfigError(f"{where}: key sweep.param: {param!r} is not a sweepable attack/fgr key")
        updates["sweep_param"] = param
    if "values" in sweep:
        value, where = sweep["values"]
        updates["sweep_values"] = _convert(_values, value, "sweep.values", where)

    def encoders(section, default_fn, current):
        if section not in raw.tables:
            if "image_size" in updates and current == tuple(default_fn(cfg.image_size)):
                return tuple(default_fn(image_size))
            return current
        specs = []
        for header, table in raw.tables[section]:
            kwargs = {k: _convert(ENCODER_KEYS[k], v, f"{section}.{k}", w) for k, (v, w) in table.items()}
            try:
                specs.append(EncoderSpec(input_size=image_size, **kwargs))
            except DomainError as exc:
                raise ConfigError(f"{header}: [[{section}]]: {exc}") from None
        return tuple(specs)

    updates["ensemble"] = encoders("ensemble", default_ensemble, cfg.ensemble)
    updates["holdouts"] = encoders("holdout", default_holdouts, cfg.holdouts)
    if "pair" in raw.tables:
        pairs = []
        for header, table in raw.tables["pair"]:
            missing = {"source", "target"} - table.keys()
            if missing:
                raise ConfigError(f"{header}: [[pair]] missing key(s) {sorted(missing)}")
            pairs.append(tuple(_convert(_str, table[k][0], f"pair.{k}", table[k][1]) for k in ("source", "target")))
        updates["pairs"] = tuple(pairs)
    if "defense" in raw.tables:
        defenses = []
        for header, table in raw.tables["defense"]:
            kwargs = {k: _convert(DEFENSE_KEYS[k], v, f"defense.{k}", w) for k, (v, w) in table.items()}
            try:
                defenses.append(DefenseSpec(**kwargs))
            except DomainError as exc:
                raise ConfigError(f"{header}: [[defense]]: {exc}") from None
        updates["defenses"] = tuple(defenses)

    result = dataclasses.replace(cfg, **updates)
    if not result.ensemble:
        raise ConfigError("key ensemble: at least one surrogate encoder is required")
    seeds = {s.seed for s in result.ensemble}
    for h in result.holdouts:
        if h.seed in seeds:
            raise ConfigError(f"key holdout.seed: {h.seed} collides with a surrogate seed")
    return result


def parse_config(text: str, origin: str = "config") -> RunConfig:
    return build_config(read_config(text, origin))


# ---------------------------------------------------------------- serialization


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(format_value(x) for x in v) + "]"
    return repr(v)


def to_text(cfg: RunConfig) -> str:
    """Fully resolved configuration in the same format ``parse_config`` reads."""
    lines = ["[attack]"]
    for key, (fname, _) in ATTACK_KEYS.items():
        lines.append(f"{key} = {format_value(getattr(cfg.attack, fname))}")
    lines += ["", "[fgr]"]
    for key, (fname, _) in FGR_KEYS.items():
        lines.append(f"{key} = {format_value(getattr(cfg.attack.fgr, fname))}")
    lines += ["", "[run]"]
    for key, (fname, _) in RUN_KEYS.items():
        lines.append(f"{key} = {format_value(getattr(cfg, fname))}")
    if cfg.sweep_param:
        lines += ["", "[sweep]", f"param = {format_value(cfg.sweep_param)}", f"values = {format_value(cfg.sweep_values)}"]
    for section, specs in (("ensemble", cfg.ensemble), ("holdout", cfg.holdouts)):
        for spec in specs:
            lines += ["", f"[[{section}]]"]
            lines += [f"{k} = {format_value(getattr(spec, k))}" for k in ENCODER_KEYS]
    for src, tgt in cfg.pairs:
        lines += ["", "[[pair]]", f"source = {format_value(src)}", f"target = {format_value(tgt)}"]
    for d in cfg.defenses:
        lines += ["", "[[defense]]"]
        lines += [f"{k} = {format_value(getattr(d, k))}" for k in DEFENSE_KEYS]
    return "\n".join(lines) + "\n"


def flag_name(section: str, key: str) -> str:
    return f"--{section}-{key.replace('_', '-')}"
