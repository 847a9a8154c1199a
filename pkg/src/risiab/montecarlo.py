"""Trial orchestration, coverage estimation and paired parameter sweeps.

Every random quantity of a trial comes from its own substream, derived from
``(seed, trial_index, purpose)`` with :class:`numpy.random.SeedSequence`.
Results therefore do not depend on how trials are spread over workers, and
variants or sweep values evaluated at the same trial index see the same
UE positions, tree states and fading draws.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from statistics import NormalDist

import numpy as np

from .channel import AntennaPattern, CarrierConfig, PathLossConfig, RainConfig
from .errors import ConfigError, InvalidParameterError, InvariantError
from .geometry import Point, Region, sample_tree_field, sample_uniform_points
from .network import (BackhaulFoliage, Deployment, FieldFoliage, NodeDescriptor, NodeKind,
                      RadioConfig, RandomDraws, RateReport, evaluate)
from .ris import NcrConfig, RisPanel

WORKERS_ENV = "RISIAB_WORKERS"

# Substream purposes.
_UE, _TREES, _LEAF, _FADE_ACCESS, _FADE_BACKHAUL, _FADE_NCR, _BEAM = range(1, 8)

VARIANTS = ("direct", "ris", "ncr", "all")
DEFAULT_VARIANTS = ("direct", "ris", "ncr")
AXES = ("tree_depth", "ue_count", "rain_rate", "main_lobe_gain", "carrier_frequency", "psi",
        "in_leaf_probability")


@dataclass(frozen=True)
class Site:
    id: int
    kind: NodeKind
    position: Point
    p_tx: float


@dataclass(frozen=True)
class TreeSpec:
    """Vegetation model of a scenario.

    ``deterministic``: every direct donor-to-SBS link crosses ``total_depth``
    metres of trees, in leaf with probability ``in_leaf_probability`` (drawn
    per link and trial).  ``stochastic``: a Poisson tree-line field is drawn
    per trial and affects every link.  ``none``: no vegetation.
    """

    mode: str = "deterministic"
    total_depth: float = 0.0
    in_leaf_probability: float = 0.5
    density: float = 0.0  # lines per m^2
    line_length: float = 50.0
    line_width: float = 5.0
    orientation: float | None = None  # radians; None draws uniform orientations

    def __post_init__(self):
        if self.mode not in ("deterministic", "stochastic", "none"):
            raise InvalidParameterError(f"unknown tree mode {self.mode!r}")
        if self.total_depth < 0:
            raise InvalidParameterError("total_depth must be >= 0")
        if not (0.0 <= self.in_leaf_probability <= 1.0):
            raise InvalidParameterError("in_leaf_probability must lie in [0, 1]")
        if not (math.isfinite(self.density) and self.density >= 0):
            raise InvalidParameterError("tree density must be finite and >= 0")
        if not (self.line_length > 0 and self.line_width > 0):
            raise InvalidParameterError("tree lines need positive length and width")


@dataclass(frozen=True)
class Scenario:
    region: Region
    sites: tuple[Site, ...]
    ue_count: int
    carrier: CarrierConfig
    antenna: AntennaPattern
    threshold: float  # bit/s
    psi: float
    trees: TreeSpec = TreeSpec()
    path_loss: PathLossConfig = PathLossConfig()
    ris: tuple[RisPanel, ...] = ()
    ncr: tuple[NcrConfig, ...] = ()
    tx_antennas: int = 16
    rx_antennas: int = 4
    rain_rate: float = 0.0
    rain_k: float | None = None  # None: taken from the coefficient table at fc
    rain_alpha: float | None = None
    noise_figure: float = 7.0
    ris_element_gain: float = 5.0
    assist_selection: str = "best"
    association: str = "average"
    trials: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise InvalidParameterError("trial count must be >= 1")
        if self.threshold < 0:
            raise InvalidParameterError("rate threshold must be >= 0")
        if self.ue_count < 0:
            raise InvalidParameterError("ue_count must be >= 0")
        if not any(s.kind in (NodeKind.MBS, NodeKind.SBS_IAB, NodeKind.SBS_NONIAB)
                   for s in self.sites):
            raise ConfigError("scenario has no base station")

    def rain(self) -> RainConfig:
        if self.rain_k is None or self.rain_alpha is None:
            base = RainConfig.for_frequency(self.carrier.fc, self.rain_rate)
            return replace(base, k=self.rain_k or base.k,
                           alpha_rain=self.rain_alpha or base.alpha_rain)
        return RainConfig(self.rain_rate, self.rain_k, self.rain_alpha)

    def radio(self) -> RadioConfig:
        return RadioConfig(self.carrier, self.path_loss, self.rain(), self.psi,
                           self.noise_figure, self.ris_element_gain, self.assist_selection,
                           self.association)


def with_variant(scenario: Scenario, variant: str) -> Scenario:
    """Keep only the assisting nodes a comparison variant is allowed to use."""
    if variant == "direct":
        return replace(scenario, ris=(), ncr=())
    if variant == "ris":
        return replace(scenario, ncr=())
    if variant == "ncr":
        return replace(scenario, ris=())
    if variant == "all":
        return scenario
    raise ConfigError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")


def substream(seed: int, trial_index: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial_index, purpose)))


def _deployment(scenario: Scenario, ue_positions) -> Deployment:
    nodes = tuple(NodeDescriptor(s.id, s.kind, s.position, s.p_tx, scenario.antenna)
                  for s in sorted(scenario.sites, key=lambda s: s.id))
    return Deployment(nodes, ue_positions, scenario.ris, scenario.ncr,
                      scenario.tx_antennas, scenario.rx_antennas)


def sample_trial(scenario: Scenario, trial_index: int):
    """Deployment, vegetation and random draws of one trial."""
    seed = scenario.seed
    ue = sample_uniform_points(scenario.region, scenario.ue_count,
                               substream(seed, trial_index, _UE))
    dep = _deployment(scenario, ue)
    n_bs = len(dep.base_stations)
    trees = scenario.trees
    if trees.mode == "stochastic":
        field_ = sample_tree_field(scenario.region, trees.density, trees.line_length,
                                   trees.line_width, trees.in_leaf_probability,
                                   substream(seed, trial_index, _TREES), trees.orientation)
        foliage = FieldFoliage(field_)
    elif trees.mode == "deterministic":
        u = substream(seed, trial_index, _LEAF).random((n_bs, n_bs))
        kinds = dep.kinds
        depth = trees.total_depth
        per_link = {}
        for j, kj in enumerate(kinds):
            for k, kk in enumerate(kinds):
                if kj is NodeKind.MBS and kk is NodeKind.SBS_IAB:
                    leaf = u[j, k] < trees.in_leaf_probability
                    per_link[(j, k)] = (depth, 0.0) if leaf else (0.0, depth)
        foliage = BackhaulFoliage(per_link)
    else:
        foliage = None
    draws = RandomDraws(
        access=substream(seed, trial_index, _FADE_ACCESS).standard_exponential((dep.n_ue, n_bs)),
        backhaul=substream(seed, trial_index, _FADE_BACKHAUL).standard_exponential((n_bs, n_bs)),
        ncr=substream(seed, trial_index, _FADE_NCR).standard_exponential((len(dep.ncrs), 2)),
        beam=substream(seed, trial_index, _BEAM).random(n_bs),
    )
    return dep, foliage, draws


def run_trial(scenario: Scenario, trial_index: int) -> RateReport:
    """One Monte Carlo snapshot; identical inputs give bit-identical reports."""
    dep, foliage, draws = sample_trial(scenario, trial_index)
    return evaluate(dep, foliage, scenario.radio(), draws)


@dataclass(frozen=True)
class CoverageEstimate:
    rho_hat: float
    ci_low: float
    ci_high: float
    trials: int
    ue_samples: int
    mean_rate: float = math.nan  # bit/s

    def __post_init__(self):
        if self.ue_samples and not (0.0 <= self.ci_low <= self.rho_hat <= self.ci_high <= 1.0):
            raise InvariantError(f"inconsistent coverage interval {self}")


_Z95 = NormalDist().inv_cdf(0.975)


def wilson_interval(successes: int, n: int, z: float = _Z95) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the interval always contains p; clamping absorbs rounding at p = 0 or 1
    return max(0.0, min(p, centre - half)), min(1.0, max(p, centre + half))


def _trial_stats(scenario: Scenario, indices, trial_fn) -> list[tuple[int, int, int, float]]:
    out = []
    for i in indices:
        report = trial_fn(scenario, i)
        rates = np.asarray(report.final_rate, dtype=float)
        if np.any(~(rates >= 0)):
            raise InvariantError(f"trial {i} produced a negative or NaN rate")
        out.append((i, int(np.count_nonzero(rates >= scenario.threshold)), rates.size,
                    float(rates.sum())))
    return out


def _reduce(stats, trials: int) -> CoverageEstimate:
    stats = sorted(stats)
    covered = sum(s[1] for s in stats)
    n = sum(s[2] for s in stats)
    total = 0.0
    for s in stats:  # fixed order keeps the float sum reproducible
        total += s[3]
    rho = covered / n if n else math.nan
    lo, hi = wilson_interval(covered, n)
    if n == 0:
        return CoverageEstimate(math.nan, lo, hi, trials, 0)
    return CoverageEstimate(rho, lo, hi, trials, n, total / n)


def worker_count(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _chunks(n: int, parts: int):
    size = max(1, math.ceil(n / parts))
    return [range(s, min(n, s + size)) for s in range(0, n, size)]


def _run_jobs(scenarios: list[Scenario], trial_fn, workers: int) -> list[CoverageEstimate]:
    """Evaluate every scenario's trials, spreading trial chunks over workers."""
    if workers <= 1:
        return [_reduce(_trial_stats(s, range(s.trials), trial_fn), s.trials) for s in scenarios]
    jobs = [(n, s, chunk) for n, s in enumerate(scenarios)
            for chunk in _chunks(s.trials, workers * 4)]
    stats = [[] for _ in scenarios]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [(n, pool.submit(_trial_stats, s, chunk, trial_fn)) for n, s, chunk in jobs]
        for n, fut in futures:
            stats[n].extend(fut.result())
    return [_reduce(st, s.trials) for st, s in zip(stats, scenarios)]


def estimate_coverage(scenario: Scenario, workers: int | None = None,
                      trial_fn=run_trial) -> CoverageEstimate:
    """Pooled fraction of UE samples whose rate meets the threshold.

    ``trial_fn(scenario, index)`` must return an object with a
    ``final_rate`` array; it defaults to :func:`run_trial`.
    """
    return _run_jobs([scenario], trial_fn, worker_count(workers))[0]


def apply_axis(scenario: Scenario, axis: str, value) -> Scenario:
    """Copy of ``scenario`` with one sweep parameter set to ``value``."""
    if axis == "tree_depth":
        if scenario.trees.mode != "deterministic":
            raise ConfigError("tree_depth sweeps need trees.mode = deterministic")
        return replace(scenario, trees=replace(scenario.trees, total_depth=float(value)))
    if axis == "in_leaf_probability":
        return replace(scenario, trees=replace(scenario.trees, in_leaf_probability=float(value)))
    if axis == "ue_count":
        if float(value) != int(value):
            raise ConfigError(f"ue_count values must be integers, got {value}")
        return replace(scenario, ue_count=int(value))
    if axis == "rain_rate":
        return replace(scenario, rain_rate=float(value))
    if axis == "main_lobe_gain":
        return replace(scenario, antenna=replace(scenario.antenna, g_main=float(value)))
    if axis == "carrier_frequency":
        return replace(scenario, carrier=replace(scenario.carrier, fc=float(value)))
    if axis == "psi":
        return replace(scenario, psi=float(value))
    raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(AXES)}")


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    variant: str
    estimate: CoverageEstimate = field(compare=False)
    series: str = ""  # second swept parameter, empty when unused
    series_value: float = math.nan


def _at(base: Scenario, axis: str, value) -> Scenario:
    try:
        out = apply_axis(base, axis, value)
        out.radio()  # surfaces range errors and missing rain coefficients early
    except InvalidParameterError as exc:
        raise ConfigError(f"{axis}={value}: {exc}") from None
    return out


def run_sweep(base: Scenario, axis: str, values, variants=DEFAULT_VARIANTS,
              workers: int | None = None, trial_fn=run_trial,
              series: tuple[str, list] | None = None) -> list[SweepRow]:
    """One coverage estimate per (series value, value, variant).

    Every estimate uses the same trial indices, hence the same UE drops,
    tree states and fading, so differences between rows are paired.
    ``series`` optionally names a second axis and its values (one curve per
    value, as in a figure with several lines).
    """
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    if not variants:
        raise ConfigError("sweep needs at least one variant")
    for var in variants:
        if var not in VARIANTS:
            raise ConfigError(f"unknown variant {var!r}; expected one of {', '.join(VARIANTS)}")
    if series is None:
        curves = [("", math.nan, base)]
    else:
        s_axis, s_values = series[0], list(series[1])
        if not s_values:
            raise ConfigError("series needs at least one value")
        if s_axis == axis:
            raise ConfigError("series axis must differ from the sweep axis")
        curves = [(s_axis, float(sv), _at(base, s_axis, sv)) for sv in s_values]
    keys, scenarios = [], []
    for s_axis, sv, curve in curves:
        for v in values:
            at_value = _at(curve, axis, v)
            for var in variants:
                keys.append((s_axis, sv, v, var))
                scenarios.append(with_variant(at_value, var))
    estimates = _run_jobs(scenarios, trial_fn, worker_count(workers))
    return [SweepRow(axis, float(v), var, est, s_axis, sv)
            for (s_axis, sv, v, var), est in zip(keys, estimates)]


def run_variants(base: Scenario, variants=DEFAULT_VARIANTS, workers: int | None = None,
                 trial_fn=run_trial) -> list[SweepRow]:
    """Coverage of each variant at the base scenario, without a swept axis."""
    for var in variants:
        if var not in VARIANTS:
            raise ConfigError(f"unknown variant {var!r}; expected one of {', '.join(VARIANTS)}")
    _at(base, "psi", base.psi)
    estimates = _run_jobs([with_variant(base, v) for v in variants], trial_fn,
                          worker_count(workers))
    return [SweepRow("", math.nan, v, est) for v, est in zip(variants, estimates)]
