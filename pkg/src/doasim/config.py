"""Experiment and controller files.

Both are YAML documents checked against a fixed schema: unknown keys,
duplicate keys, wrong types and out-of-range values are rejected with the
file name and 1-based line number of the offending node.  The grammar is
documented in ``docs/config_format.md``.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import yaml
from yaml.constructor import SafeConstructor
from yaml.nodes import MappingNode, ScalarNode, SequenceNode

from .control import DEFAULT_BOUNDS, DEFAULT_DE_SCALE, DEFAULT_E_SCALE, DEFAULT_U_MAX, PARAM_NAMES, VARIANTS, \
    ControllerConfig
from .errors import ConfigError, DoaSimError
from .fracops import DEFAULT_MEMORY_LEN
from .fuzzy import LABELS, MF_VECTOR_LEN, OUTPUTS, RuleBase
from .pkpd import PatientProfile, PdParams
from .simloop import Disturbance, SimConfig
from .woa import ANCHORS, WoaConfig

CONTROLLER_FORMAT = "doasim-controller/1"


# --------------------------------------------------------------------------
# located YAML tree

class Node:
    """A parsed YAML value that remembers where it came from."""

    __slots__ = ("value", "line", "path")

    def __init__(self, value, line: int, path: str):
        self.value = value
        self.line = line
        self.path = path


def _build(node, path: str, src: str) -> Node:
    line = node.start_mark.line + 1
    if isinstance(node, MappingNode):
        out: dict[str, Node] = {}
        for knode, vnode in node.value:
            if not isinstance(knode, ScalarNode):
                raise ConfigError("mapping keys must be plain scalars", path=src, line=knode.start_mark.line + 1)
            key = str(knode.value)
            if key in out:
                raise ConfigError(f"duplicate key {_join(path, key)!r}", path=src, line=knode.start_mark.line + 1)
            out[key] = _build(vnode, _join(path, key), src)
        return Node(out, line, path)
    if isinstance(node, SequenceNode):
        return Node([_build(v, f"{path}[{k}]", src) for k, v in enumerate(node.value)], line, path)
    try:
        value = SafeConstructor().construct_object(node)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path or 'value'}: {exc}", path=src, line=line) from None
    return Node(value, line, path)


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def parse_located(text: str, src: str = "<string>") -> Node:
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ConfigError(f"YAML syntax error: {exc.problem}", path=src, line=line) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML error: {exc}", path=src) from None
    if root is None:
        raise ConfigError("file is empty", path=src, line=1)
    return _build(root, "", src)


class _Reader:
    """Schema helpers that raise :class:`ConfigError` pointing at the node."""

    def __init__(self, src: str):
        self.src = src

    def fail(self, node: Node, msg: str):
        where = node.path or "document"
        raise ConfigError(f"{where}: {msg}", path=self.src, line=node.line)

    def mapping(self, node: Node, allowed: Sequence[str], required: Sequence[str] = ()) -> dict[str, Node]:
        if not isinstance(node.value, dict):
            self.fail(node, "expected a mapping")
        for key, child in node.value.items():
            if key not in allowed:
                raise ConfigError(f"unknown key {child.path!r} (allowed: {', '.join(allowed)})",
                                  path=self.src, line=child.line)
        for key in required:
            if key not in node.value:
                self.fail(node, f"missing required key {key!r}")
        return node.value

    def seq(self, node: Node, length: int | None = None) -> list[Node]:
        if not isinstance(node.value, list):
            self.fail(node, "expected a list")
        if length is not None and len(node.value) != length:
            self.fail(node, f"expected {length} entries, got {len(node.value)}")
        return node.value

    def number(self, node: Node, *, positive=False, nonneg=False) -> float:
        v = node.value
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(node, f"expected a number, got {v!r}")
        v = float(v)
        if not math.isfinite(v):
            self.fail(node, "must be finite")
        if positive and not v > 0:
            self.fail(node, f"must be > 0, got {v!r}")
        if nonneg and not v >= 0:
            self.fail(node, f"must be >= 0, got {v!r}")
        return v

    def integer(self, node: Node, minimum: int | None = None) -> int:
        v = node.value
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(node, f"expected an integer, got {v!r}")
        if minimum is not None and v < minimum:
            self.fail(node, f"must be >= {minimum}, got {v}")
        return v

    def boolean(self, node: Node) -> bool:
        if not isinstance(node.value, bool):
            self.fail(node, f"expected true/false, got {node.value!r}")
        return node.value

    def string(self, node: Node, choices: Sequence[str] | None = None) -> str:
        if not isinstance(node.value, str):
            self.fail(node, f"expected a string, got {node.value!r}")
        if choices is not None and node.value not in choices:
            self.fail(node, f"must be one of {', '.join(choices)}, got {node.value!r}")
        return node.value

    def build(self, node: Node, fn, *args, **kwargs):
        """Call a domain constructor, converting its validation errors.

        Messages that open with a key of ``node`` are reported at that key's line.
        """
        try:
            return fn(*args, **kwargs)
        except (DoaSimError, ValueError) as exc:
            msg = str(exc)
            if isinstance(node.value, dict):
                head = msg.split(" ", 1)[0]
                if head in node.value:
                    node = node.value[head]
            self.fail(node, msg)


# --------------------------------------------------------------------------
# experiment config

@dataclass(frozen=True)
class ControllerDefaults:
    u_max: float = DEFAULT_U_MAX
    memory_len: int = DEFAULT_MEMORY_LEN
    anti_windup: bool = True
    e_scale: float = DEFAULT_E_SCALE
    de_scale: float = DEFAULT_DE_SCALE


@dataclass(frozen=True)
class ExperimentConfig:
    patients: tuple[PatientProfile, ...]
    pd: PdParams = field(default_factory=PdParams)
    sim: SimConfig = field(default_factory=SimConfig)
    woa: WoaConfig = field(default_factory=WoaConfig)
    controller: ControllerDefaults = field(default_factory=ControllerDefaults)
    bounds: Mapping[str, Mapping[str, tuple[float, float]]] = field(
        default_factory=lambda: {v: dict(b) for v, b in DEFAULT_BOUNDS.items()})
    rules: RuleBase = field(default_factory=RuleBase.default)
    mf_vector: tuple[float, ...] = (0.0,) * MF_VECTOR_LEN
    source: str | None = None

    def base_controller(self) -> ControllerConfig:
        """Non-searched settings shared by every tuned controller."""
        c = self.controller
        return ControllerConfig("pid", u_max=c.u_max, dt=self.sim.dt, memory_len=c.memory_len,
                                anti_windup=c.anti_windup, e_scale=c.e_scale, de_scale=c.de_scale,
                                rules=self.rules)

    def to_dict(self) -> dict:
        c = self.controller
        d = self.sim.disturbance
        return {
            "patients": [_patient_dict(p, self.pd) for p in self.patients],
            "pd": _pd_dict(self.pd),
            "sim": {
                "horizon": self.sim.horizon, "dt": self.sim.dt, "bis_target": self.sim.bis_target,
                "band": list(self.sim.band), "settle_tol": self.sim.settle_tol,
                "disturbance": None if d is None else {"onset": d.onset, "magnitude": d.magnitude,
                                                       "duration": d.duration},
            },
            "woa": {"pop_size": self.woa.pop_size, "max_iter": self.woa.max_iter, "spiral_b": self.woa.spiral_b,
                    "seed": self.woa.seed, "exploration_anchor": self.woa.exploration_anchor,
                    "workers": self.woa.workers},
            "controller": {"u_max": c.u_max, "memory_len": c.memory_len, "anti_windup": c.anti_windup,
                           "e_scale": c.e_scale, "de_scale": c.de_scale},
            "bounds": {v: {k: [float(lo), float(hi)] for k, (lo, hi) in b.items()} for v, b in self.bounds.items()},
            "fuzzy": {"mf_vector": list(self.mf_vector), "rules": self.rules.to_dict()},
        }


def _pd_dict(pd: PdParams) -> dict:
    return {"ke0": pd.ke0, "ec50": pd.ec50, "gamma": pd.gamma, "bis0": pd.bis0}


def _patient_dict(p: PatientProfile, default_pd: PdParams) -> dict:
    d = {"id": p.id, "age": p.age, "weight": p.weight, "height": p.height, "sex": p.sex}
    if p.pd != default_pd:
        d["pd"] = _pd_dict(p.pd)
    return d


_TOP_KEYS = ("patients", "pd", "sim", "woa", "controller", "bounds", "fuzzy")
_PD_KEYS = ("ke0", "ec50", "gamma", "bis0")


def _read_pd(r: _Reader, node: Node, base: PdParams) -> PdParams:
    m = r.mapping(node, _PD_KEYS)
    vals = {k: (r.number(m[k]) if k in m else getattr(base, k)) for k in _PD_KEYS}
    return r.build(node, PdParams, **vals)


def _read_patients(r: _Reader, node: Node, pd: PdParams) -> tuple[PatientProfile, ...]:
    items = r.seq(node)
    if not items:
        r.fail(node, "need at least one patient")
    out, seen = [], set()
    for item in items:
        m = r.mapping(item, ("id", "age", "weight", "height", "sex", "pd"),
                      required=("id", "age", "weight", "height", "sex"))
        pid = r.integer(m["id"])
        if pid in seen:
            r.fail(m["id"], f"duplicate patient id {pid}")
        seen.add(pid)
        ppd = _read_pd(r, m["pd"], pd) if "pd" in m else pd
        out.append(r.build(item, PatientProfile, pid, r.number(m["age"]), r.number(m["weight"]),
                           r.number(m["height"]), r.string(m["sex"], ("male", "female")), ppd))
    return tuple(out)


def _read_sim(r: _Reader, node: Node) -> SimConfig:
    m = r.mapping(node, ("horizon", "dt", "bis_target", "band", "settle_tol", "disturbance"))
    kw: dict[str, Any] = {}
    for key in ("horizon", "dt", "bis_target", "settle_tol"):
        if key in m:
            kw[key] = r.number(m[key])
    if "band" in m:
        lo, hi = r.seq(m["band"], 2)
        kw["band"] = (r.number(lo), r.number(hi))
    if "disturbance" in m and m["disturbance"].value is not None:
        dm = r.mapping(m["disturbance"], ("onset", "magnitude", "duration"),
                       required=("onset", "magnitude", "duration"))
        kw["disturbance"] = r.build(m["disturbance"], Disturbance, r.number(dm["onset"]),
                                    r.number(dm["magnitude"]), r.number(dm["duration"]))
    sim = r.build(node, SimConfig, **kw)
    r.build(node, lambda: sim.n_steps)
    return sim


def _read_woa(r: _Reader, node: Node) -> WoaConfig:
    m = r.mapping(node, ("pop_size", "max_iter", "spiral_b", "seed", "exploration_anchor", "workers"))
    kw: dict[str, Any] = {}
    if "pop_size" in m:
        kw["pop_size"] = r.integer(m["pop_size"], 2)
    if "max_iter" in m:
        kw["max_iter"] = r.integer(m["max_iter"], 0)
    if "seed" in m:
        kw["seed"] = r.integer(m["seed"], 0)
    if "workers" in m:
        kw["workers"] = r.integer(m["workers"], 1)
    if "spiral_b" in m:
        kw["spiral_b"] = r.number(m["spiral_b"])
    if "exploration_anchor" in m:
        kw["exploration_anchor"] = r.string(m["exploration_anchor"], ANCHORS)
    return r.build(node, WoaConfig, **kw)


def _read_ctrl_defaults(r: _Reader, node: Node) -> ControllerDefaults:
    m = r.mapping(node, ("u_max", "memory_len", "anti_windup", "e_scale", "de_scale"))
    kw: dict[str, Any] = {}
    for key in ("u_max", "e_scale", "de_scale"):
        if key in m:
            kw[key] = r.number(m[key], positive=True)
    if "memory_len" in m:
        kw["memory_len"] = r.integer(m["memory_len"], 1)
    if "anti_windup" in m:
        kw["anti_windup"] = r.boolean(m["anti_windup"])
    return ControllerDefaults(**kw)


def _bound_keys(variant: str) -> tuple[str, ...]:
    return tuple(DEFAULT_BOUNDS[variant])


def _read_bounds(r: _Reader, node: Node) -> dict:
    m = r.mapping(node, VARIANTS)
    out = {v: dict(b) for v, b in DEFAULT_BOUNDS.items()}
    for variant, vnode in m.items():
        vm = r.mapping(vnode, _bound_keys(variant))
        for key, bnode in vm.items():
            lo, hi = r.seq(bnode, 2)
            lo_v, hi_v = r.number(lo), r.number(hi)
            if lo_v > hi_v:
                r.fail(bnode, f"low must be <= high, got [{lo_v}, {hi_v}]")
            if key in ("alpha", "beta") and not (0 < lo_v and hi_v < 2):
                r.fail(bnode, "fractional-order bounds must lie inside (0, 2)")
            if not key.startswith("mf_") and lo_v < 0:
                r.fail(bnode, "gain bounds must be >= 0")
            out[variant][key] = (lo_v, hi_v)
    return out


def _read_rules(r: _Reader, node: Node) -> RuleBase:
    m = r.mapping(node, OUTPUTS, required=OUTPUTS)
    tables = {}
    for name in OUTPUTS:
        rows = r.seq(m[name], 5)
        table = []
        for row in rows:
            cells = r.seq(row, 5)
            table.append([r.string(c, LABELS) for c in cells])
        tables[name] = table
    return r.build(node, RuleBase.from_dict, tables)


def _read_mf(r: _Reader, node: Node) -> tuple[float, ...]:
    return tuple(r.number(v) for v in r.seq(node, MF_VECTOR_LEN))


def _read_fuzzy(r: _Reader, node: Node) -> tuple[RuleBase, tuple[float, ...]]:
    m = r.mapping(node, ("rules", "mf_vector"))
    rules = _read_rules(r, m["rules"]) if "rules" in m else RuleBase.default()
    mf = _read_mf(r, m["mf_vector"]) if "mf_vector" in m else (0.0,) * MF_VECTOR_LEN
    return rules, mf


def parse_experiment(text: str, src: str = "<string>") -> ExperimentConfig:
    root = parse_located(text, src)
    r = _Reader(src)
    m = r.mapping(root, _TOP_KEYS, required=("patients",))
    pd = _read_pd(r, m["pd"], PdParams()) if "pd" in m else PdParams()
    kw: dict[str, Any] = {"patients": _read_patients(r, m["patients"], pd), "pd": pd, "source": src}
    if "sim" in m:
        kw["sim"] = _read_sim(r, m["sim"])
    if "woa" in m:
        kw["woa"] = _read_woa(r, m["woa"])
    if "controller" in m:
        kw["controller"] = _read_ctrl_defaults(r, m["controller"])
    if "bounds" in m:
        kw["bounds"] = _read_bounds(r, m["bounds"])
    if "fuzzy" in m:
        kw["rules"], kw["mf_vector"] = _read_fuzzy(r, m["fuzzy"])
    return ExperimentConfig(**kw)


def load_experiment(path: str | os.PathLike) -> ExperimentConfig:
    path = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=path) from None
    return parse_experiment(text, path)


def default_experiment_text() -> str:
    return resources.files("doasim").joinpath("data/default_experiment.yaml").read_text(encoding="utf-8")


def default_experiment() -> ExperimentConfig:
    return parse_experiment(default_experiment_text(), "<default_experiment.yaml>")


def dump_experiment(cfg: ExperimentConfig) -> str:
    return dump_yaml(cfg.to_dict())


# --------------------------------------------------------------------------
# controller files

def controller_to_dict(cfg: ControllerConfig) -> dict:
    d: dict[str, Any] = {"variant": cfg.variant}
    if cfg.variant == "fofpid":
        d["gain_ranges"] = [float(g) for g in cfg.gain_ranges]
    else:
        d.update(kp=float(cfg.kp), ki=float(cfg.ki), kd=float(cfg.kd))
    if cfg.variant != "pid":
        d.update(alpha=float(cfg.alpha), beta=float(cfg.beta))
    if cfg.variant == "fofpid":
        d["mf_vector"] = [float(v) for v in cfg.mf_vector]
        d["rules"] = cfg.rules.to_dict()
        d.update(e_scale=float(cfg.e_scale), de_scale=float(cfg.de_scale))
    d.update(u_max=float(cfg.u_max), dt=float(cfg.dt), memory_len=int(cfg.memory_len),
             anti_windup=bool(cfg.anti_windup))
    return d


_CTRL_KEYS = ("variant", "kp", "ki", "kd", "alpha", "beta", "gain_ranges", "mf_vector", "rules",
              "u_max", "dt", "memory_len", "anti_windup", "e_scale", "de_scale")


def _read_controller(r: _Reader, node: Node) -> ControllerConfig:
    m = r.mapping(node, _CTRL_KEYS, required=("variant",))
    variant = r.string(m["variant"], VARIANTS)
    kw: dict[str, Any] = {}
    for key in ("kp", "ki", "kd"):
        if key in m:
            kw[key] = r.number(m[key], nonneg=True)
    for key in ("alpha", "beta", "u_max", "dt", "e_scale", "de_scale"):
        if key in m:
            kw[key] = r.number(m[key])
    if "memory_len" in m:
        kw["memory_len"] = r.integer(m["memory_len"], 1)
    if "anti_windup" in m:
        kw["anti_windup"] = r.boolean(m["anti_windup"])
    fuzzy_only = ("gain_ranges", "mf_vector", "rules")
    if variant != "fofpid":
        for key in fuzzy_only:
            if key in m:
                r.fail(m[key], f"only valid for variant fofpid, not {variant}")
    else:
        if "gain_ranges" not in m:
            r.fail(node, "fofpid needs gain_ranges")
        gr = tuple(r.number(v, nonneg=True) for v in r.seq(m["gain_ranges"], 3))
        kw["gain_ranges"] = gr
        kw.setdefault("kp", gr[0] / 2)
        kw.setdefault("ki", gr[1] / 2)
        kw.setdefault("kd", gr[2] / 2)
        if "mf_vector" in m:
            kw["mf_vector"] = _read_mf(r, m["mf_vector"])
        if "rules" in m:
            kw["rules"] = _read_rules(r, m["rules"])
    return r.build(node, ControllerConfig, variant, **kw)


@dataclass
class ControllerFile:
    controller: ControllerConfig
    audit: dict = field(default_factory=dict)


def parse_controller(text: str, src: str = "<string>") -> ControllerFile:
    root = parse_located(text, src)
    r = _Reader(src)
    m = r.mapping(root, ("format", "controller", "audit"), required=("format", "controller"))
    fmt = r.string(m["format"])
    if fmt != CONTROLLER_FORMAT:
        r.fail(m["format"], f"unsupported format {fmt!r}, expected {CONTROLLER_FORMAT!r}")
    ctrl = _read_controller(r, m["controller"])
    audit = {}
    if "audit" in m:
        # free-form record; only its shape is checked
        if not isinstance(m["audit"].value, dict):
            r.fail(m["audit"], "expected a mapping")
        audit = _plain(m["audit"])
    return ControllerFile(ctrl, audit)


def _plain(node: Node):
    if isinstance(node.value, dict):
        return {k: _plain(v) for k, v in node.value.items()}
    if isinstance(node.value, list):
        return [_plain(v) for v in node.value]
    return node.value


def load_controller(path: str | os.PathLike) -> ControllerFile:
    path = str(path)
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read controller file: {exc.strerror}", path=path) from None
    return parse_controller(text, path)


def dump_controller(cfg: ControllerConfig, audit: Mapping | None = None) -> str:
    doc: dict[str, Any] = {"format": CONTROLLER_FORMAT, "controller": controller_to_dict(cfg)}
    if audit:
        doc["audit"] = dict(audit)
    return dump_yaml(doc)


# --------------------------------------------------------------------------
# output helpers

class _Dumper(yaml.SafeDumper):
    pass


def _repr_float(dumper, value: float):
    # shortest round-trip text, so reloading gives back the same double
    if math.isnan(value):
        text = ".nan"
    elif math.isinf(value):
        text = ".inf" if value > 0 else "-.inf"
    else:
        text = repr(float(value))
        if "e" in text and "." not in text.split("e")[0]:
            mant, exp = text.split("e")
            text = f"{mant}.0e{exp}"
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


def _represent_list(dumper, value):
    # short numeric rows read better inline
    flow = len(value) <= 16 and all(isinstance(v, (int, float, str)) and not isinstance(v, bool) or v is None
                                    for v in value)
    return dumper.represent_sequence("tag:yaml.org,2002:seq", value, flow_style=flow)


_Dumper.add_representer(float, _repr_float)
_Dumper.add_representer(list, _represent_list)


def dump_yaml(doc: Mapping) -> str:
    return yaml.dump(doc, Dumper=_Dumper, sort_keys=False, default_flow_style=False, width=120,
                     allow_unicode=False)


def atomic_write(path: str | os.PathLike, data: str | bytes) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        kwargs = {} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"}
        with os.fdopen(fd, mode, **kwargs) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def variant_bounds(cfg: ExperimentConfig, variant: str) -> dict[str, tuple[float, float]]:
    if variant not in PARAM_NAMES:
        raise ConfigError(f"unknown variant {variant!r}")
    return dict(cfg.bounds[variant])
