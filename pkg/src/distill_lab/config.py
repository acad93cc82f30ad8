"""Line-oriented experiment configuration.

Format::

    # comment
    [schedule]
    T = 1000
    distill.n_steps = 100          # dotted keys work outside any section

    [mixture label:0]
    weight = 0.5                   # prior mass of this condition (optional)
    component = 0.5, -1.5, 0.5     # w, mean..., scale
    component = 0.5, 1.5, 0.5

Every other section holds ``key = value`` pairs from a fixed schema. Unknown
or duplicate keys, type mismatches and unresolved conditions are reported
together, each with its line number.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .distill import DELTA_RULES, INTERP_RULES, VARIANTS, W_RULES, DistillConfig
from .oracle import Condition, DiffusionOracle, GaussianMixture
from .schedule import NoiseSchedule

_WEIGHT_SUM_TOL = 1e-6


class ConfigError(ValueError):
    """Collected configuration errors, each prefixed with its line number."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(text):
    return int(text.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ValueError("expected true or false")


def _opt_float(text):
    t = text.strip().lower()
    return None if t in ("auto", "none") else _float(t)


def _str(text):
    t = text.strip()
    if not t:
        raise ValueError("empty value")
    return t


def _choice(options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t
    return parse


def _variants(text):
    out = tuple(v.strip() for v in text.split(",") if v.strip())
    bad = [v for v in out if v not in VARIANTS]
    if bad or not out:
        raise ValueError(f"unknown variant(s) {bad}; expected from {', '.join(VARIANTS)}")
    if len(set(out)) != len(out):
        raise ValueError("repeated variant")
    return out


def _seed_range(text):
    """``a..b`` (inclusive), a single index, or ``empty``."""
    t = text.strip()
    if t == "empty":
        return (0, -1)
    if ".." in t:
        a, b = t.split("..", 1)
        return (_int(a), _int(b))
    i = _int(t)
    return (i, i)


def _vector(text):
    vals = tuple(_float(v) for v in text.split(","))
    if not vals:
        raise ValueError("empty vector")
    return vals


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "auto"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        if len(v) == 2 and all(isinstance(i, int) for i in v):
            return "empty" if v[1] < v[0] else f"{v[0]}..{v[1]}"
        return ", ".join(_fmt(i) for i in v)
    return str(v)


# section -> key -> (parser, default)
SCHEMA = {
    "schedule": {
        "T": (_float, 1000.0),
        "clamp_eps": (_float, 1e-4),
        "t_min": (_float, 20.0),
    },
    "scene": {
        "D": (_int, 8),
        "d": (_int, 2),
        "K": (_int, 3),
        "V": (_int, 6),
        "s": (_float, 0.1),
        "seed": (_int, 0),
        "arc": (_float, 1.0),
        "mix": (_float, 1.0),
        "radius": (_opt_float, None),
        "background_scale": (_opt_float, None),
        "background_weight": (_float, 0.5),
    },
    "distill": {
        "variants": (_variants, ("SDS", "ASD", "SDI", "Consistent3D", "SamplingDSD", "DSD")),
        "condition": (_str, "label:0"),
        "n_steps": (_int, 100),
        "n_ddim": (_int, 10),
        "lr": (_opt_float, None),
        "cfg_low": (_float, 7.5),
        "cfg_high": (_float, 1.0),
        "cfg_path": (_float, 7.5),
        "w_rule": (_choice(W_RULES), "sigma_low"),
        "delta_rule": (_choice(DELTA_RULES), "fraction"),
        "delta_frac": (_float, 0.1),
        "interp": (_choice(INTERP_RULES), "matched"),
        "x_init": (_vector, (0.0,)),
        "diverge_limit": (_float, 1e6),
    },
    "sweep": {
        "seeds": (_seed_range, (0, 9)),
        "parallel": (_int, 1),
        "base_seed": (_int, 0),
    },
    "output": {
        "dir": (_str, "out"),
        "traces": (_bool, True),
        "plots": (_bool, True),
    },
    "invert": {
        "input": (_str, "means"),
        "n_ddim": (_int, 1000),
        "guidance": (_float, 1.0),
    },
    "compare": {
        "tau": (_opt_float, None),
        "reference": (_choice(("ddim", "none")), "ddim"),
    },
}


@dataclass(frozen=True)
class MixtureSpec:
    """One conditional mixture as written in the config."""

    weight: float
    components: tuple  # of (w, mean tuple, scale)

    def build(self) -> GaussianMixture:
        w = np.array([c[0] for c in self.components])
        return GaussianMixture.normalized(w, [c[1] for c in self.components],
                                          [c[2] for c in self.components])


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment plan."""

    sections: dict = field(default_factory=dict)
    mixtures: dict = field(default_factory=dict)  # condition string -> MixtureSpec
    has_scene: bool = False

    def get(self, section: str, key: str):
        return self.sections[section][key]

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return serialize(self) == serialize(other)

    def __hash__(self):
        return hash(serialize(self))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(serialize(self).encode("utf-8")).hexdigest()[:16]

    def schedule(self) -> NoiseSchedule:
        return NoiseSchedule(self.get("schedule", "T"), self.get("schedule", "clamp_eps"))

    def seed_indices(self) -> list:
        a, b = self.get("sweep", "seeds")
        return list(range(a, b + 1))

    def scene(self):
        from .scene import build_library

        if not self.has_scene:
            raise ConfigError(["no [scene] section in config"])
        sc = self.sections["scene"]
        return build_library(sc["D"], sc["d"], sc["K"], sc["V"], sc["s"], sc["seed"],
                             radius=sc["radius"], arc=sc["arc"], mix=sc["mix"])

    def oracle(self, scene=None) -> DiffusionOracle:
        """Oracle for the registered mixtures, or for ``scene`` when given."""
        if scene is not None:
            sc = self.sections["scene"]
            return scene.oracle(self.schedule(), sc["background_scale"], sc["background_weight"])
        if not self.mixtures:
            raise ConfigError(["no [mixture ...] sections in config"])
        mixes = {Condition.parse(k): m.build() for k, m in self.mixtures.items()}
        priors = {Condition.parse(k): m.weight for k, m in self.mixtures.items()}
        return DiffusionOracle(self.schedule(), mixes, priors)

    def distill_config(self, variant: str) -> DistillConfig:
        d = self.sections["distill"]
        return DistillConfig(
            variant=variant, n_steps=d["n_steps"], n_ddim=d["n_ddim"],
            t_min=self.get("schedule", "t_min"), delta_rule=d["delta_rule"],
            delta_frac=d["delta_frac"], w_rule=d["w_rule"], cfg_low=d["cfg_low"],
            cfg_high=d["cfg_high"], cfg_path=d["cfg_path"], lr=d["lr"], interp=d["interp"],
            diverge_limit=d["diverge_limit"])

    def with_value(self, section: str, key: str, value) -> "ExperimentConfig":
        secs = {s: dict(v) for s, v in self.sections.items()}
        secs[section][key] = value
        return ExperimentConfig(secs, dict(self.mixtures), self.has_scene)


def _split_line(raw):
    line = raw.split("#", 1)[0].strip()
    return line


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate config text.

    Raises:
        ConfigError: listing every problem found, with line numbers.
    """
    errors = []
    seen = {}
    values = {s: {} for s in SCHEMA}
    mixtures = {}
    mix_weights = {}
    mix_lines = {}
    present = set()
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = _split_line(raw)
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(f"line {no}: malformed section header {line!r}")
                section = None
                continue
            name = line[1:-1].strip()
            if name.startswith("mixture "):
                tag = name[len("mixture "):].strip()
                try:
                    cond = Condition.parse(tag)
                except ValueError as exc:
                    errors.append(f"line {no}: {exc}")
                    section = None
                    continue
                if cond.kind == "unconditional":
                    errors.append(f"line {no}: the unconditional mixture is derived, not declared")
                    section = None
                    continue
                tag = str(cond)
                if tag in mixtures:
                    errors.append(f"line {no}: duplicate mixture section {tag!r} (first at line {mix_lines[tag]})")
                    section = None
                    continue
                mixtures[tag] = []
                mix_lines[tag] = no
                section = ("mixture", tag)
            elif name in SCHEMA:
                if name in present:
                    errors.append(f"line {no}: duplicate section [{name}]")
                present.add(name)
                section = name
            else:
                errors.append(f"line {no}: unknown section [{name}]")
                section = None
            continue
        if "=" not in line:
            errors.append(f"line {no}: expected 'key = value', got {line!r}")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if isinstance(section, tuple):
            tag = section[1]
            if key == "component":
                try:
                    parts = _vector(value)
                    if len(parts) < 3:
                        raise ValueError("component needs weight, mean..., scale")
                    mixtures[tag].append((parts[0], tuple(parts[1:-1]), parts[-1]))
                except ValueError as exc:
                    errors.append(f"line {no}: component: {exc}")
            elif key == "weight":
                if tag in mix_weights:
                    errors.append(f"line {no}: duplicate key 'weight' in mixture {tag}")
                    continue
                try:
                    mix_weights[tag] = _float(value)
                except ValueError as exc:
                    errors.append(f"line {no}: weight: {exc}")
            else:
                errors.append(f"line {no}: unknown key {key!r} in mixture {tag}")
            continue
        if section is None and "." in key:
            sec, key = key.split(".", 1)
        elif section is None:
            errors.append(f"line {no}: key {key!r} outside any section")
            continue
        else:
            sec = section
        if sec not in SCHEMA:
            errors.append(f"line {no}: unknown section {sec!r}")
            continue
        present.add(sec)
        if key not in SCHEMA[sec]:
            errors.append(f"line {no}: unknown key {sec}.{key}")
            continue
        if (sec, key) in seen:
            errors.append(f"line {no}: duplicate key {sec}.{key} (first at line {seen[(sec, key)]})")
            continue
        seen[(sec, key)] = no
        parser = SCHEMA[sec][key][0]
        try:
            values[sec][key] = parser(value)
        except ValueError as exc:
            errors.append(f"line {no}: {sec}.{key}: {exc}")

    sections = {s: {k: values[s].get(k, default) for k, (_, default) in keys.items()}
                for s, keys in SCHEMA.items()}
    specs = {}
    dims = set()
    for tag, comps in mixtures.items():
        no = mix_lines[tag]
        if not comps:
            errors.append(f"line {no}: mixture {tag} has no components")
            continue
        ws = [c[0] for c in comps]
        if any(w <= 0 for w in ws) or abs(sum(ws) - 1.0) > _WEIGHT_SUM_TOL:
            errors.append(f"line {no}: mixture {tag} weights must be positive and sum to 1")
        if any(c[2] <= 0 for c in comps):
            errors.append(f"line {no}: mixture {tag} scales must be positive")
        dims.update(len(c[1]) for c in comps)
        pw = mix_weights.get(tag, 1.0)
        if pw <= 0:
            errors.append(f"line {no}: mixture {tag} weight must be positive")
        specs[tag] = MixtureSpec(pw, tuple(comps))
    if len(dims) > 1:
        errors.append(f"line {min(mix_lines.values())}: mixtures disagree on dimension {sorted(dims)}")
    has_scene = "scene" in present
    cond = sections["distill"]["condition"]
    line = seen.get(("distill", "condition"), 0)
    try:
        c = Condition.parse(cond)
        if c.kind != "unconditional" and specs and str(c) not in specs:
            errors.append(f"line {line}: distill.condition {cond!r} is not a declared mixture")
    except ValueError as exc:
        errors.append(f"line {line}: {exc}")
    if not specs and not has_scene:
        errors.append("line 0: config declares neither a mixture nor a scene")
    if specs and dims:
        d = dims.pop()
        x_init = sections["distill"]["x_init"]
        if len(x_init) not in (1, d):
            errors.append(f"line {seen.get(('distill', 'x_init'), 0)}: distill.x_init has "
                          f"{len(x_init)} entries, mixtures have dimension {d}")
    sch = sections["schedule"]
    if not sch["T"] > 0 or not 0 < sch["clamp_eps"] < 0.5 or not 0 <= sch["t_min"] < sch["T"]:
        errors.append(f"line {seen.get(('schedule', 'T'), 0)}: schedule needs T > 0, "
                      "0 < clamp_eps < 0.5 and 0 <= t_min < T")
    if sections["sweep"]["parallel"] < 1:
        errors.append(f"line {seen[('sweep', 'parallel')]}: sweep.parallel must be >= 1")
    if errors:
        raise ConfigError(errors)
    cfg = ExperimentConfig(sections, specs, has_scene)
    try:
        for v in sections["distill"]["variants"]:
            cfg.distill_config(v)
    except ValueError as exc:
        raise ConfigError([f"line 0: distill: {exc}"]) from None
    return cfg


def serialize(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config(serialize(c)) == c``."""
    out = []
    for sec, keys in SCHEMA.items():
        if sec == "scene" and not cfg.has_scene:
            continue
        out.append(f"[{sec}]")
        for key in keys:
            out.append(f"{key} = {_fmt(cfg.sections[sec][key])}")
        out.append("")
    for tag in sorted(cfg.mixtures):
        spec = cfg.mixtures[tag]
        out.append(f"[mixture {tag}]")
        out.append(f"weight = {_fmt(float(spec.weight))}")
        for w, mu, s in spec.components:
            out.append("component = " + ", ".join(_fmt(float(v)) for v in (w, *mu, s)))
        out.append("")
    return "\n".join(out)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
