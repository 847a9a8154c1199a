"""Scenario documents: YAML parsing, strict validation and round-tripping.

Every key of a document is checked against a fixed schema.  Errors carry the
1-based line of the offending key or value, and unknown keys come with the
closest valid spelling.
"""
from __future__ import annotations

import difflib
import math
from dataclasses import dataclass, field
from importlib import resources

import yaml

from .channel import AntennaPattern, CarrierConfig, PathLossConfig
from .errors import ConfigError, InvalidParameterError
from .geometry import Point, Region
from .montecarlo import AXES, DEFAULT_VARIANTS, VARIANTS, Scenario, Site, TreeSpec
from .network import NodeKind
from .ris import NcrConfig, RisPanel

PRESETS = ("fig2", "fig3", "fig4", "fig5")
SITE_KINDS = ("mbs", "sbs_iab", "sbs_noniab")
TREE_MODES = ("deterministic", "stochastic", "none")
_REQUIRED = object()


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple[float, ...]
    variants: tuple[str, ...] = DEFAULT_VARIANTS
    series_axis: str | None = None
    series_values: tuple[float, ...] = ()

    @property
    def series(self):
        return None if self.series_axis is None else (self.series_axis, list(self.series_values))


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    sweep: SweepSpec | None = None
    source: str = field(default="", compare=False)


# ---------------------------------------------------------------------------
# Line-aware YAML tree
# ---------------------------------------------------------------------------

@dataclass
class _Node:
    value: object  # dict[str, _Node], list[_Node] or a scalar
    line: int


def _located(node, loader) -> _Node:
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = loader.construct_object(k, deep=True)
            if not isinstance(key, str):
                raise ConfigError(f"keys must be strings, got {key!r}", k.start_mark.line + 1)
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", k.start_mark.line + 1)
            child = _located(v, loader)
            child.key_line = k.start_mark.line + 1
            out[key] = child
        return _Node(out, line)
    if isinstance(node, yaml.SequenceNode):
        return _Node([_located(v, loader) for v in node.value], line)
    return _Node(loader.construct_object(node, deep=True), line)


def _compose(text: str) -> _Node:
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                          None if mark is None else mark.line + 1) from None
    finally:
        loader.dispose()
    if root is None:
        raise ConfigError("empty scenario document")
    node = _located(root, yaml.SafeLoader(""))
    if not isinstance(node.value, dict):
        raise ConfigError("scenario document must be a mapping", node.line)
    return node


class _Section:
    """Typed, strict access to one mapping of the document."""

    def __init__(self, node: _Node | None, path: str, keys):
        self.path = path
        self.line = None if node is None else node.line
        if node is not None and not isinstance(node.value, dict):
            raise ConfigError(f"{path or 'document'} must be a mapping", node.line)
        self.items = {} if node is None else node.value
        for key, child in self.items.items():
            if key not in keys:
                hint = difflib.get_close_matches(key, keys, n=1)
                extra = f"; did you mean {hint[0]!r}?" if hint else ""
                raise ConfigError(f"unknown key {self._name(key)!r}{extra}",
                                  getattr(child, "key_line", child.line))

    def _name(self, key):
        return f"{self.path}.{key}" if self.path else key

    def node(self, key) -> _Node | None:
        return self.items.get(key)

    def get(self, key, kind=float, default=_REQUIRED, check=None, why=""):
        node = self.items.get(key)
        name = self._name(key)
        if node is None or node.value is None:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key {name!r}", self.line)
            return default
        value = _coerce(node, kind, name)
        if check is not None and not check(value):
            raise ConfigError(f"{name} = {node.value!r} out of range: {why}", node.line)
        return value


def _coerce(node: _Node, kind, name):
    v = node.value
    if isinstance(kind, tuple):  # choice
        if v not in kind:
            hint = difflib.get_close_matches(str(v), kind, n=1)
            extra = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ConfigError(f"{name} must be one of {', '.join(kind)}, got {v!r}{extra}",
                              node.line)
        return v
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{name} must be an integer, got {v!r}", node.line)
        return v
    if kind is float:
        if isinstance(v, bool):
            raise ConfigError(f"{name} must be a number, got {v!r}", node.line)
        try:
            out = float(v)  # also accepts "400e6", which YAML 1.1 reads as a string
        except (TypeError, ValueError):
            raise ConfigError(f"{name} must be a number, got {v!r}", node.line) from None
        if not math.isfinite(out):
            raise ConfigError(f"{name} must be finite", node.line)
        return out
    if kind is list:
        if not isinstance(v, list):
            raise ConfigError(f"{name} must be a list", node.line)
        return v
    raise TypeError(kind)


def _floats(node: _Node, name) -> tuple[float, ...]:
    if not isinstance(node.value, list) or not node.value:
        raise ConfigError(f"{name} must be a non-empty list of numbers", node.line)
    return tuple(_coerce(n, float, name) for n in node.value)


def _positive(x):
    return x > 0


def _non_negative(x):
    return x >= 0


# ---------------------------------------------------------------------------
# Document -> RunConfig
# ---------------------------------------------------------------------------

_TOP = ("seed", "trials", "ue_count", "threshold_bps", "psi", "noise_figure_db",
        "tx_antennas", "rx_antennas", "ris_element_gain_dbi", "assist_selection",
        "association", "region", "carrier", "antenna", "path_loss", "rain", "trees",
        "sites", "ris", "ncr", "sweep")


def _parse_sites(node: _Node | None) -> tuple[Site, ...]:
    if node is None or not isinstance(node.value, list) or not node.value:
        raise ConfigError("'sites' must list at least one base station",
                          None if node is None else node.line)
    out, seen = [], set()
    for i, item in enumerate(node.value):
        s = _Section(item, f"sites[{i}]", ("id", "kind", "x", "y", "p_tx_dbm"))
        sid = s.get("id", int, check=_non_negative, why="ids are >= 0")
        if sid in seen:
            raise ConfigError(f"duplicate site id {sid}", item.line)
        seen.add(sid)
        out.append(Site(sid, NodeKind(s.get("kind", SITE_KINDS)),
                        Point(s.get("x"), s.get("y")), s.get("p_tx_dbm")))
    return tuple(out)


def _parse_assists(node: _Node | None, name, keys, build):
    if node is None or node.value is None:
        return ()
    if not isinstance(node.value, list):
        raise ConfigError(f"'{name}' must be a list", node.line)
    out = []
    for i, item in enumerate(node.value):
        s = _Section(item, f"{name}[{i}]", keys)
        try:
            out.append(build(s))
        except InvalidParameterError as exc:
            raise ConfigError(f"{name}[{i}]: {exc}", item.line) from None
    return tuple(out)


def _ris(s: _Section) -> RisPanel:
    return RisPanel(Point(s.get("x"), s.get("y")),
                    s.get("elements", int, check=lambda m: m >= 1, why="need >= 1 element"),
                    s.get("spacing_wavelengths", float, 0.5, _positive, "must be > 0"),
                    s.get("serves", int, None))


def _ncr(s: _Section) -> NcrConfig:
    return NcrConfig(s.get("amp_gain_db", float, 100.0, _non_negative, "must be >= 0"),
                     s.get("max_output_dbm", float, 40.0),
                     Point(s.get("x"), s.get("y")),
                     s.get("antenna_gain_dbi", float, 10.0),
                     s.get("serves", int, None))


def _parse_sweep(node: _Node | None) -> SweepSpec | None:
    if node is None or node.value is None:
        return None
    s = _Section(node, "sweep", ("axis", "values", "variants", "series"))
    axis = s.get("axis", AXES)
    values = _floats(s.node("values"), "sweep.values") if s.node("values") else None
    if values is None:
        raise ConfigError("missing required key 'sweep.values'", node.line)
    variants = DEFAULT_VARIANTS
    if s.node("variants") is not None:
        vnode = s.node("variants")
        if not isinstance(vnode.value, list) or not vnode.value:
            raise ConfigError("sweep.variants must be a non-empty list", vnode.line)
        variants = tuple(_coerce(v, VARIANTS, "sweep.variants") for v in vnode.value)
    series_axis, series_values = None, ()
    if s.node("series") is not None:
        ss = _Section(s.node("series"), "sweep.series", ("axis", "values"))
        series_axis = ss.get("axis", AXES)
        if series_axis == axis:
            raise ConfigError("sweep.series.axis must differ from sweep.axis", ss.line)
        if ss.node("values") is None:
            raise ConfigError("missing required key 'sweep.series.values'", ss.line)
        series_values = _floats(ss.node("values"), "sweep.series.values")
    return SweepSpec(axis, values, variants, series_axis, series_values)


def parse_document(text: str, source: str = "<string>") -> RunConfig:
    """Validate a YAML scenario document and resolve every default."""
    root = _compose(text)
    top = _Section(root, "", _TOP)

    reg = _Section(top.node("region"), "region", ("width", "height", "x0", "y0"))
    carrier = _Section(top.node("carrier"), "carrier", ("fc_ghz", "bandwidth_hz"))
    ant = _Section(top.node("antenna"), "antenna", ("g_main_dbi", "g_side_dbi", "hpbw_deg"))
    pl = _Section(top.node("path_loss"), "path_loss", ("alpha_los", "alpha_nlos"))
    rain = _Section(top.node("rain"), "rain", ("rate_mm_hr", "k", "alpha"))
    trees = _Section(top.node("trees"), "trees",
                     ("mode", "total_depth_m", "in_leaf_probability", "density_per_m2",
                      "line_length_m", "line_width_m", "orientation_deg"))

    alpha_los = pl.get("alpha_los", float, 2.0, lambda a: a >= 1, "need alpha_los >= 1")
    alpha_nlos = pl.get("alpha_nlos", float, 2.9, lambda a: a >= alpha_los,
                        "need alpha_nlos >= alpha_los")
    g_side = ant.get("g_side_dbi", float, -10.0)
    g_main = ant.get("g_main_dbi", float, 30.0, lambda g: g > g_side,
                     "main-lobe gain must exceed side-lobe gain")
    orientation = trees.get("orientation_deg", float, None)
    try:
        scenario = Scenario(
            region=Region(reg.get("width", float, 1000.0, _positive, "must be > 0"),
                          reg.get("height", float, 1000.0, _positive, "must be > 0"),
                          Point(reg.get("x0", float, 0.0), reg.get("y0", float, 0.0))),
            sites=_parse_sites(top.node("sites")),
            ue_count=top.get("ue_count", int, check=_non_negative, why="must be >= 0"),
            carrier=CarrierConfig(
                carrier.get("fc_ghz", float, 28.0, _positive, "must be > 0"),
                carrier.get("bandwidth_hz", float, 400e6, _positive, "must be > 0")),
            antenna=AntennaPattern(
                g_main, g_side,
                math.radians(ant.get("hpbw_deg", float, 30.0, lambda h: 0 < h < 360,
                                     "must lie in (0, 360)"))),
            threshold=top.get("threshold_bps", float, 25e6, _non_negative, "must be >= 0"),
            psi=top.get("psi", float, 0.5, lambda p: 0 <= p <= 1, "must lie in [0, 1]"),
            trees=TreeSpec(
                mode=trees.get("mode", TREE_MODES, "none"),
                total_depth=trees.get("total_depth_m", float, 0.0, _non_negative,
                                      "must be >= 0"),
                in_leaf_probability=trees.get("in_leaf_probability", float, 0.5,
                                              lambda p: 0 <= p <= 1, "must lie in [0, 1]"),
                density=trees.get("density_per_m2", float, 0.0, _non_negative,
                                  "must be >= 0"),
                line_length=trees.get("line_length_m", float, 50.0, _positive, "must be > 0"),
                line_width=trees.get("line_width_m", float, 5.0, _positive, "must be > 0"),
                orientation=None if orientation is None else math.radians(orientation) % math.pi,
            ),
            path_loss=PathLossConfig(alpha_los, alpha_nlos),
            ris=_parse_assists(top.node("ris"), "ris",
                               ("x", "y", "elements", "spacing_wavelengths", "serves"), _ris),
            ncr=_parse_assists(top.node("ncr"), "ncr",
                               ("x", "y", "amp_gain_db", "max_output_dbm", "antenna_gain_dbi",
                                "serves"), _ncr),
            tx_antennas=top.get("tx_antennas", int, 16, lambda n: n >= 1, "must be >= 1"),
            rx_antennas=top.get("rx_antennas", int, 4, lambda n: n >= 1, "must be >= 1"),
            rain_rate=rain.get("rate_mm_hr", float, 0.0, _non_negative, "must be >= 0"),
            rain_k=rain.get("k", float, None, _positive, "must be > 0"),
            rain_alpha=rain.get("alpha", float, None, _positive, "must be > 0"),
            noise_figure=top.get("noise_figure_db", float, 7.0),
            ris_element_gain=top.get("ris_element_gain_dbi", float, 5.0),
            assist_selection=top.get("assist_selection", ("best", "forced"), "best"),
            association=top.get("association", ("average", "instantaneous"), "average"),
            trials=top.get("trials", int, 1000, lambda n: n >= 1, "must be >= 1"),
            seed=top.get("seed", int, 0, lambda n: 0 <= n < 2 ** 64, "must lie in [0, 2**64)"),
        )
        check_scenario(scenario)
    except InvalidParameterError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(scenario, _parse_sweep(top.node("sweep")), source)


def check_scenario(scenario: Scenario):
    """Cross-field checks that need the whole scenario."""
    ids = {s.id: s.kind for s in scenario.sites}
    for name, helpers in (("ris", scenario.ris), ("ncr", scenario.ncr)):
        for i, h in enumerate(helpers):
            if h.serves is not None and ids.get(h.serves) is not NodeKind.SBS_IAB:
                raise ConfigError(f"{name}[{i}].serves = {h.serves} is not an sbs_iab site id")
    kinds = set(ids.values())
    if NodeKind.SBS_IAB in kinds and NodeKind.MBS not in kinds:
        raise ConfigError("sbs_iab sites need at least one mbs donor")
    if scenario.trees.mode == "stochastic" and scenario.trees.density == 0:
        raise ConfigError("trees.mode = stochastic needs density_per_m2 > 0")
    scenario.rain()  # the coefficient table must cover the carrier


def load(path) -> RunConfig:
    """Read and validate a scenario file."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_document(text, str(path))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        hint = difflib.get_close_matches(name, PRESETS, n=1)
        extra = f"; did you mean {hint[0]!r}?" if hint else ""
        raise ConfigError(f"unknown preset {name!r}{extra}")
    return resources.files("risiab.presets").joinpath(f"{name}.yaml").read_text()


def load_preset(name: str) -> RunConfig:
    return parse_document(preset_text(name), f"preset:{name}")


# ---------------------------------------------------------------------------
# RunConfig -> document
# ---------------------------------------------------------------------------

def _num(x):
    """Plain number for the document; trims float noise from unit conversions."""
    if x is None:
        return None
    if isinstance(x, int) and not isinstance(x, bool):
        return x
    x = float(x)
    short = float(f"{x:.12g}")
    return int(short) if short.is_integer() and abs(short) < 2 ** 53 else short


def to_document(cfg: RunConfig) -> dict:
    """Fully resolved document; parsing it back gives an equal RunConfig."""
    s = cfg.scenario
    t = s.trees
    doc = {
        "seed": s.seed,
        "trials": s.trials,
        "ue_count": s.ue_count,
        "threshold_bps": _num(s.threshold),
        "psi": _num(s.psi),
        "noise_figure_db": _num(s.noise_figure),
        "tx_antennas": s.tx_antennas,
        "rx_antennas": s.rx_antennas,
        "ris_element_gain_dbi": _num(s.ris_element_gain),
        "assist_selection": s.assist_selection,
        "association": s.association,
        "region": {"width": _num(s.region.width), "height": _num(s.region.height),
                   "x0": _num(s.region.origin.x), "y0": _num(s.region.origin.y)},
        "carrier": {"fc_ghz": _num(s.carrier.fc), "bandwidth_hz": _num(s.carrier.bandwidth)},
        "antenna": {"g_main_dbi": _num(s.antenna.g_main), "g_side_dbi": _num(s.antenna.g_side),
                    "hpbw_deg": _num(math.degrees(s.antenna.hpbw))},
        "path_loss": {"alpha_los": _num(s.path_loss.alpha_los),
                      "alpha_nlos": _num(s.path_loss.alpha_nlos)},
        "rain": {"rate_mm_hr": _num(s.rain_rate), "k": _num(s.rain_k),
                 "alpha": _num(s.rain_alpha)},
        "trees": {"mode": t.mode, "total_depth_m": _num(t.total_depth),
                  "in_leaf_probability": _num(t.in_leaf_probability),
                  "density_per_m2": _num(t.density), "line_length_m": _num(t.line_length),
                  "line_width_m": _num(t.line_width),
                  "orientation_deg": None if t.orientation is None
                  else _num(math.degrees(t.orientation))},
        "sites": [{"id": x.id, "kind": NodeKind(x.kind).value, "x": _num(x.position.x),
                   "y": _num(x.position.y), "p_tx_dbm": _num(x.p_tx)} for x in s.sites],
        "ris": [{"x": _num(r.position.x), "y": _num(r.position.y), "elements": r.elements,
                 "spacing_wavelengths": _num(r.element_spacing), "serves": r.serves}
                for r in s.ris],
        "ncr": [{"x": _num(n.position.x), "y": _num(n.position.y),
                 "amp_gain_db": _num(n.amp_gain), "max_output_dbm": _num(n.max_output_power),
                 "antenna_gain_dbi": _num(n.antenna_gain), "serves": n.serves}
                for n in s.ncr],
    }
    if cfg.sweep is not None:
        sw = cfg.sweep
        doc["sweep"] = {"axis": sw.axis, "values": [_num(v) for v in sw.values],
                        "variants": list(sw.variants)}
        if sw.series_axis is not None:
            doc["sweep"]["series"] = {"axis": sw.series_axis,
                                      "values": [_num(v) for v in sw.series_values]}
    return doc


def dump_document(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_document(cfg), sort_keys=False, default_flow_style=None,
                          width=100)
