"""Two-hop downlink IAB network: association, bandwidth split, SINR and rates.

Conventions used throughout:

* Base stations (MBS donors and SBSs) are kept in one tuple ordered by id;
  array axes indexed by "BS" refer to positions in that tuple.
* A transmitter spreads its power evenly over the band it occupies, so
  access SINRs use noise over the access band ``(1 - psi) B`` and backhaul
  SINRs use noise over ``psi B``.  Per-UE and per-node shares then scale
  the rate, not the SINR.
* Vegetation on a link switches it to the NLoS path-loss exponent and adds
  the foliage loss on top.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .channel import (AntennaPattern, CarrierConfig, PathLossConfig, RainConfig,
                      antenna_gain_db, db_to_linear, foliage_loss_db, linear_to_db,
                      noise_power_dbm, path_loss_db, rain_loss_db)
from .errors import InvalidParameterError
from .geometry import Point, TreeField
from .ris import (NcrConfig, RisPanel, ncr_forward, optimize_ris, ris_backhaul_rate,
                  synthesize_los_channel)

__all__ = [
    "NodeKind", "NodeDescriptor", "Deployment", "RadioConfig", "ResourceSplit",
    "Allocation", "BackhaulChoice", "Association", "RandomDraws", "RateReport",
    "FieldFoliage", "BackhaulFoliage", "associate_ues", "associate_backhaul",
    "allocate_bandwidth", "aggregate_interference", "compute_rates", "evaluate",
    "noise_power_dbm",
]


class NodeKind(str, Enum):
    MBS = "mbs"
    SBS_IAB = "sbs_iab"
    SBS_NONIAB = "sbs_noniab"
    UE = "ue"
    RIS = "ris"
    NCR = "ncr"


BS_KINDS = (NodeKind.MBS, NodeKind.SBS_IAB, NodeKind.SBS_NONIAB)


@dataclass(frozen=True)
class NodeDescriptor:
    id: int
    kind: NodeKind
    position: Point
    p_tx: float = 0.0
    antenna: AntennaPattern | None = None  # None: omnidirectional 0 dBi
    element_count: int = 1

    @property
    def g_main(self) -> float:
        return 0.0 if self.antenna is None else self.antenna.g_main


@dataclass(frozen=True)
class Deployment:
    base_stations: tuple[NodeDescriptor, ...]
    ue_positions: np.ndarray
    ris_panels: tuple[RisPanel, ...] = ()
    ncrs: tuple[NcrConfig, ...] = ()
    tx_antennas: int = 16  # donor array used towards a RIS
    rx_antennas: int = 4  # child array used from a RIS

    def __post_init__(self):
        if not self.base_stations:
            raise InvalidParameterError("deployment needs at least one base station")
        ids = [b.id for b in self.base_stations]
        if ids != sorted(set(ids)):
            raise InvalidParameterError("base station ids must be unique and ascending")
        for b in self.base_stations:
            if b.kind not in BS_KINDS:
                raise InvalidParameterError(f"node {b.id} is not a base station")
        pos = np.asarray(self.ue_positions, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "ue_positions", pos)
        sbs_ids = {b.id for b in self.base_stations if b.kind is NodeKind.SBS_IAB}
        for helper in (*self.ris_panels, *self.ncrs):
            if helper.serves is not None and helper.serves not in sbs_ids:
                raise InvalidParameterError(
                    f"assisting node serves {helper.serves}, which is not an IAB SBS")
        if any(k is NodeKind.SBS_IAB for k in self.kinds) and NodeKind.MBS not in self.kinds:
            raise InvalidParameterError("IAB SBSs need at least one MBS donor")

    @property
    def kinds(self) -> list[NodeKind]:
        return [b.kind for b in self.base_stations]

    @property
    def bs_positions(self) -> np.ndarray:
        return np.array([[b.position.x, b.position.y] for b in self.base_stations])

    @property
    def p_tx(self) -> np.ndarray:
        return np.array([b.p_tx for b in self.base_stations], dtype=float)

    @property
    def n_ue(self) -> int:
        return self.ue_positions.shape[0]

    def index_of(self, node_id: int) -> int:
        for i, b in enumerate(self.base_stations):
            if b.id == node_id:
                return i
        raise KeyError(node_id)


@dataclass(frozen=True)
class RadioConfig:
    carrier: CarrierConfig
    path_loss: PathLossConfig
    rain: RainConfig
    psi: float
    noise_figure: float = 7.0
    ris_element_gain: float = 5.0  # dBi per reflecting element, each direction
    assist_selection: str = "best"  # "best" or "forced"
    association: str = "average"  # "average" or "instantaneous"

    def __post_init__(self):
        if not (0.0 <= self.psi <= 1.0):
            raise InvalidParameterError("psi must lie in [0, 1]")
        if self.assist_selection not in ("best", "forced"):
            raise InvalidParameterError("assist_selection must be 'best' or 'forced'")
        if self.association not in ("average", "instantaneous"):
            raise InvalidParameterError("association must be 'average' or 'instantaneous'")

    @property
    def split(self) -> ResourceSplit:
        return ResourceSplit(self.psi, self.carrier.bandwidth)


@dataclass(frozen=True)
class ResourceSplit:
    psi: float
    total_bandwidth: float

    def __post_init__(self):
        if not (0.0 <= self.psi <= 1.0):
            raise InvalidParameterError("psi must lie in [0, 1]")

    @property
    def backhaul(self) -> float:
        return self.psi * self.total_bandwidth

    @property
    def access(self) -> float:
        return self.total_bandwidth - self.backhaul


# ---------------------------------------------------------------------------
# Vegetation providers
# ---------------------------------------------------------------------------

class FieldFoliage:
    """Vegetation from a sampled tree field, applied to every link."""

    def __init__(self, field: TreeField):
        self.field = field

    def depths(self, a, b, link, pairs=None):
        return self.field.depths(a, b)


class BackhaulFoliage:
    """Fixed vegetation on direct donor-to-SBS links only.

    ``per_link`` maps ``(donor_index, sbs_index)`` to ``(in_leaf, out_of_leaf)``
    depths in metres; every other link is clear.
    """

    def __init__(self, per_link: dict):
        self.per_link = dict(per_link)

    def depths(self, a, b, link, pairs=None):
        n = np.atleast_2d(a).shape[0]
        leaf = np.zeros(n)
        bare = np.zeros(n)
        if link == "direct_backhaul" and pairs is not None:
            for i, key in enumerate(pairs):
                leaf[i], bare[i] = self.per_link.get(tuple(key), (0.0, 0.0))
        return leaf, bare


class _NoFoliage:
    def depths(self, a, b, link, pairs=None):
        n = np.atleast_2d(a).shape[0]
        return np.zeros(n), np.zeros(n)


def _foliage(foliage):
    if foliage is None:
        return _NoFoliage()
    if isinstance(foliage, TreeField):
        return FieldFoliage(foliage)
    return foliage


def _link_loss(a, b, foliage, radio: RadioConfig, link, pairs=None) -> np.ndarray:
    """Path + foliage + rain loss (dB) for segments ``a[k] -> b[k]``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    dist = np.hypot(b[:, 0] - a[:, 0], b[:, 1] - a[:, 1])
    leaf, bare = foliage.depths(a, b, link, pairs)
    clear = (leaf + bare) == 0
    alpha = np.where(clear, radio.path_loss.alpha_los, radio.path_loss.alpha_nlos)
    fc = radio.carrier.fc
    return (path_loss_db(dist, fc, alpha) + foliage_loss_db(leaf, bare, fc)
            + rain_loss_db(radio.rain.rate, dist, radio.rain))


def _access_loss(deployment: Deployment, foliage, radio) -> np.ndarray:
    """Loss matrix (n_ue, n_bs)."""
    ue = deployment.ue_positions
    bs = deployment.bs_positions
    n_ue, n_bs = ue.shape[0], bs.shape[0]
    a = np.repeat(bs, n_ue, axis=0)  # transmitter side, BS-major
    b = np.tile(ue, (n_bs, 1))
    return _link_loss(a, b, foliage, radio, "access").reshape(n_bs, n_ue).T


# ---------------------------------------------------------------------------
# Random inputs of one snapshot
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RandomDraws:
    """Small-scale fading and scheduling draws for one network snapshot.

    ``access[u, j]`` fades the link BS j -> UE u; ``backhaul[k, j]`` the link
    BS j -> BS k; ``ncr[q]`` the (donor -> NCR, NCR -> SBS) hops of NCR q;
    ``beam[j]`` in [0, 1) picks the receiver BS j points at.
    """

    access: np.ndarray
    backhaul: np.ndarray
    ncr: np.ndarray
    beam: np.ndarray

    @classmethod
    def unit(cls, n_ue: int, n_bs: int, n_ncr: int = 0) -> RandomDraws:
        return cls(np.ones((n_ue, n_bs)), np.ones((n_bs, n_bs)), np.ones((n_ncr, 2)),
                   np.zeros(n_bs))


# ---------------------------------------------------------------------------
# Association
# ---------------------------------------------------------------------------

def _mean_access_power(deployment, foliage, radio) -> np.ndarray:
    g = np.array([b.g_main for b in deployment.base_stations])
    return deployment.p_tx + g - _access_loss(deployment, foliage, radio)


def associate_ues(deployment: Deployment, foliage, radio: RadioConfig,
                  draws: RandomDraws | None = None) -> np.ndarray:
    """Serving BS index per UE: largest received power, ties to the lowest id.

    Powers are fading-averaged unless ``radio.association`` is
    ``"instantaneous"``, in which case ``draws.access`` is included.
    """
    rx = _mean_access_power(deployment, _foliage(foliage), radio)
    if radio.association == "instantaneous" and draws is not None:
        rx = rx + linear_to_db(draws.access)
    if rx.shape[0] == 0:
        return np.zeros(0, dtype=int)
    return np.argmax(rx, axis=1)


@dataclass(frozen=True)
class BackhaulChoice:
    donor: int  # BS index of the donor
    path: str  # "direct", "ris" or "ncr"
    assist: int = -1  # index into deployment.ris_panels / deployment.ncrs


@lru_cache(maxsize=4096)
def _ris_unit_gain(donor: Point, panel: RisPanel, child: Point, n_tx: int, n_rx: int,
                   fc: float) -> float:
    """Optimised reflected-channel gain with 0 dB large-scale loss on both hops.

    Phase alignment and MRT are scale invariant, so the gain for real hop
    losses ``L1``, ``L2`` is this value times ``L1 * L2``.
    """
    g_br = synthesize_los_channel(donor, panel.position, n_tx, panel.elements, fc, 0.0,
                                  panel.element_spacing)
    g_rx = synthesize_los_channel(panel.position, child, panel.elements, n_rx, fc, 0.0,
                                  panel.element_spacing)
    # Child combines its array with the dominant left singular vector.
    u = np.linalg.svd(g_rx, full_matrices=False)[0][:, 0]
    g_ru = u.conj() @ g_rx
    return optimize_ris(g_br, g_ru).gain


class _Backhaul:
    """Per-snapshot backhaul link quantities shared by selection and rates."""

    def __init__(self, deployment: Deployment, foliage, radio: RadioConfig):
        self.dep = deployment
        self.fol = foliage
        self.radio = radio
        bs = deployment.bs_positions
        n = bs.shape[0]
        kinds = deployment.kinds
        self.donors = [i for i, k in enumerate(kinds) if k is NodeKind.MBS]
        self.children = [i for i, k in enumerate(kinds) if k is NodeKind.SBS_IAB]
        self.loss = np.full((n, n), np.inf)  # loss[k, j]: BS j -> BS k
        pairs = [(j, k) for k in self.children for j in range(n) if j != k]
        if pairs:
            a = bs[[j for j, _ in pairs]]
            b = bs[[k for _, k in pairs]]
            vals = _link_loss(a, b, foliage, radio, "direct_backhaul", pairs)
            for (j, k), v in zip(pairs, vals):
                self.loss[k, j] = v
        bw = radio.split.backhaul
        self.noise_bw = bw if bw > 0 else radio.carrier.bandwidth
        self.noise_dbm = noise_power_dbm(self.noise_bw, radio.noise_figure)

    def donor_of(self, k: int) -> int:
        return min(self.donors, key=lambda j: (self.loss[k, j], j))

    def _gain_main(self, i):
        return self.dep.base_stations[i].g_main

    def direct_snr_db(self, k, j, fading=1.0):
        b = self.dep.base_stations
        rx = (b[j].p_tx + self._gain_main(j) + self._gain_main(k) - self.loss[k, j]
              + linear_to_db(fading))
        return rx - self.noise_dbm

    def ris_gain(self, k, j, r) -> float:
        """Linear reflected-path power gain (excluding transmit power)."""
        dep, radio = self.dep, self.radio
        panel = dep.ris_panels[r]
        donor = dep.base_stations[j].position
        child = dep.base_stations[k].position
        p = panel.position
        l1 = _link_loss([[donor.x, donor.y]], [[p.x, p.y]], self.fol, radio, "assist")[0]
        l2 = _link_loss([[p.x, p.y]], [[child.x, child.y]], self.fol, radio, "assist")[0]
        g1 = self._gain_main(j) - 10 * math.log10(dep.tx_antennas) + radio.ris_element_gain
        g2 = radio.ris_element_gain + self._gain_main(k) - 10 * math.log10(dep.rx_antennas)
        unit = _ris_unit_gain(donor, panel, child, dep.tx_antennas, dep.rx_antennas,
                              radio.carrier.fc)
        return unit * float(db_to_linear(g1 + g2 - l1 - l2))

    def ncr_signal_noise(self, k, j, q, fading=(1.0, 1.0)):
        """Forwarded signal and forwarded noise at child k, both in dBm."""
        dep, radio = self.dep, self.radio
        ncr = dep.ncrs[q]
        donor = dep.base_stations[j]
        child = dep.base_stations[k]
        p = ncr.position
        l1 = _link_loss([[donor.position.x, donor.position.y]], [[p.x, p.y]], self.fol, radio,
                        "assist")[0]
        l2 = _link_loss([[p.x, p.y]], [[child.position.x, child.position.y]], self.fol, radio,
                        "assist")[0]
        p_in = donor.p_tx + donor.g_main + ncr.antenna_gain - l1 + linear_to_db(fading[0])
        out = ncr_forward(p_in, ncr, self.noise_dbm)
        hop2 = ncr.antenna_gain + child.g_main - l2 + linear_to_db(fading[1])
        return out.signal + hop2, out.noise + hop2

    def ncr_snr_db(self, k, j, q, fading=(1.0, 1.0)):
        s, n_fwd = self.ncr_signal_noise(k, j, q, fading)
        n_tot = db_to_linear(n_fwd) + db_to_linear(self.noise_dbm)
        return s - linear_to_db(n_tot)

    def candidates(self, k, j):
        """Mean SNR (dB) of every path available to child k from donor j."""
        dep = self.dep
        sid = dep.base_stations[k].id
        out = [BackhaulChoice(j, "direct")], [self.direct_snr_db(k, j)]
        for r, panel in enumerate(dep.ris_panels):
            if panel.serves == sid:
                out[0].append(BackhaulChoice(j, "ris", r))
                gain = self.ris_gain(k, j, r)
                out[1].append(dep.base_stations[j].p_tx + linear_to_db(gain) - self.noise_dbm)
        for q, ncr in enumerate(dep.ncrs):
            if ncr.serves == sid:
                out[0].append(BackhaulChoice(j, "ncr", q))
                out[1].append(float(self.ncr_snr_db(k, j, q)))
        return out


def associate_backhaul(deployment: Deployment, foliage, radio: RadioConfig) -> dict:
    """Donor and path for every IAB SBS, keyed by BS index.

    The donor minimises total direct-link loss.  The path is the one with
    the highest fading-averaged backhaul rate among direct and the assisting
    nodes planned for that SBS; with ``assist_selection == "forced"`` the
    direct path is only used when no assisting node is available.
    """
    bh = _Backhaul(deployment, _foliage(foliage), radio)
    return _select_paths(bh)


def _select_paths(bh: _Backhaul) -> dict:
    choices = {}
    for k in bh.children:
        j = bh.donor_of(k)
        opts, snrs = bh.candidates(k, j)
        if bh.radio.assist_selection == "forced" and len(opts) > 1:
            opts, snrs = opts[1:], snrs[1:]
        # Equal bandwidth on every path, so the largest SNR has the largest rate.
        choices[k] = opts[int(np.argmax(snrs))]
    return choices


# ---------------------------------------------------------------------------
# Bandwidth
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Allocation:
    backhaul: np.ndarray  # Hz per BS; zero for non-IAB nodes
    access_per_ue: np.ndarray  # Hz each UE of a BS receives


def allocate_bandwidth(split: ResourceSplit, ue_counts, donor_of: dict | None = None) -> Allocation:
    """Load-proportional backhaul shares and equal per-UE access shares.

    ``donor_of`` maps each IAB SBS index to its donor index; each donor
    divides ``psi B`` among its children in proportion to their UE counts.
    Nodes without UEs get no bandwidth and never cause a division by zero.
    """
    counts = np.asarray(ue_counts, dtype=float)
    backhaul = np.zeros(counts.shape)
    for donor in set((donor_of or {}).values()):
        kids = [k for k, d in donor_of.items() if d == donor]
        total = counts[kids].sum()
        if total > 0:
            backhaul[kids] = split.backhaul * counts[kids] / total
    with np.errstate(divide="ignore", invalid="ignore"):
        access = np.where(counts > 0, split.access / counts, 0.0)
    return Allocation(backhaul, access)


# ---------------------------------------------------------------------------
# Interference and rates
# ---------------------------------------------------------------------------

def _beam_angles(deployment: Deployment, serving: np.ndarray, beam_u: np.ndarray) -> np.ndarray:
    """Access-band beam direction per BS towards one of its UEs; NaN if idle."""
    bs = deployment.bs_positions
    ue = deployment.ue_positions
    out = np.full(bs.shape[0], np.nan)
    for j in range(bs.shape[0]):
        mine = np.flatnonzero(serving == j)
        if mine.size:
            t = ue[mine[min(int(beam_u[j] * mine.size), mine.size - 1)]]
            out[j] = math.atan2(t[1] - bs[j, 1], t[0] - bs[j, 0])
    return out


def _interference_terms(deployment, victims, loss, beams, fading) -> np.ndarray:
    """Received interference power (mW) from every BS at each victim, shape (n, n_bs)."""
    bs = deployment.bs_positions
    victims = np.atleast_2d(victims)
    out = np.zeros((victims.shape[0], bs.shape[0]))
    for j, b in enumerate(deployment.base_stations):
        if np.isnan(beams[j]):
            continue
        ang = np.arctan2(victims[:, 1] - bs[j, 1], victims[:, 0] - bs[j, 0])
        g = antenna_gain_db(ang - beams[j], b.antenna) if b.antenna else 0.0
        out[:, j] = db_to_linear(b.p_tx + g - loss[:, j]) * fading[:, j]
    return out


def aggregate_interference(victim: Point, serving: int, deployment: Deployment,
                           beam_directions, foliage, radio: RadioConfig, fading) -> float:
    """Access-band interference (mW) at a UE located at ``victim``.

    Every BS except ``serving`` with a finite beam direction contributes its
    received power, with its antenna gain taken at the offset between its
    beam and the victim.  UEs do not interfere with each other.
    """
    v = np.array([[victim.x, victim.y]])
    one = Deployment(deployment.base_stations, v, tx_antennas=deployment.tx_antennas,
                     rx_antennas=deployment.rx_antennas)
    loss = _access_loss(one, _foliage(foliage), radio)
    terms = _interference_terms(one, v, loss, np.asarray(beam_directions, dtype=float),
                                np.atleast_2d(np.asarray(fading, dtype=float)))
    terms[:, serving] = 0.0
    return float(terms.sum())


@dataclass(frozen=True)
class Association:
    ue_to_bs: np.ndarray
    backhaul: dict  # BS index -> BackhaulChoice


@dataclass(frozen=True)
class RateReport:
    serving: np.ndarray  # BS index per UE
    access_rx_dbm: np.ndarray
    interference_mw: np.ndarray
    access_noise_dbm: float
    access_sinr: np.ndarray  # linear
    access_bandwidth: np.ndarray  # Hz per UE
    access_rate: np.ndarray  # bit/s
    backhaul_share: np.ndarray  # bit/s per UE; NaN unless served by an IAB SBS
    final_rate: np.ndarray  # bit/s
    ue_counts: np.ndarray  # per BS
    backhaul_bandwidth: np.ndarray  # Hz per BS
    backhaul_sinr: np.ndarray  # linear per BS; NaN for non-IAB nodes
    backhaul_rate: np.ndarray  # bit/s per BS; NaN for non-IAB nodes
    backhaul_path: tuple  # per BS: "", "direct", "ris" or "ncr"

    def equals(self, other: RateReport) -> bool:
        for name in self.__dataclass_fields__:
            a, b = getattr(self, name), getattr(other, name)
            if isinstance(a, np.ndarray):
                if not np.array_equal(a, b, equal_nan=True):
                    return False
            elif a != b:
                return False
        return True


def _rate(bandwidth, sinr):
    bw = np.asarray(bandwidth, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(bw > 0, bw * np.log2(1.0 + sinr), 0.0)


def compute_rates(deployment: Deployment, association: Association, allocation: Allocation,
                  draws: RandomDraws, foliage, radio: RadioConfig) -> RateReport:
    """Per-UE rates: access-limited for MBS and non-IAB SBS UEs, and the
    minimum of access rate and the UE's equal share of its SBS backhaul rate
    for IAB SBS UEs."""
    foliage = _foliage(foliage)
    n_bs = len(deployment.base_stations)
    serving = np.asarray(association.ue_to_bs, dtype=int)
    ue = deployment.ue_positions
    n_ue = ue.shape[0]
    split = radio.split
    counts = np.bincount(serving, minlength=n_bs)

    # Access links
    loss = _access_loss(deployment, foliage, radio)
    rows = np.arange(n_ue)
    g_main = np.array([b.g_main for b in deployment.base_stations])
    rx_dbm = (deployment.p_tx[serving] + g_main[serving] - loss[rows, serving]
              + linear_to_db(draws.access[rows, serving]))
    beams = _beam_angles(deployment, serving, draws.beam)
    terms = _interference_terms(deployment, ue, loss, beams, draws.access)
    terms[rows, serving] = 0.0
    interference = terms.sum(axis=1)
    if split.access > 0:
        access_noise = noise_power_dbm(split.access, radio.noise_figure)
        sinr = db_to_linear(rx_dbm) / (interference + db_to_linear(access_noise))
    else:
        access_noise = -math.inf
        sinr = np.zeros(n_ue)
    access_bw = allocation.access_per_ue[serving]
    access_rate = _rate(access_bw, sinr)

    # Backhaul links
    bh = _Backhaul(deployment, foliage, radio)
    bh_sinr = np.full(n_bs, np.nan)
    bh_rate = np.full(n_bs, np.nan)
    paths = [""] * n_bs
    interf = _backhaul_interference(deployment, bh, association.backhaul, allocation, draws)
    noise_mw = float(db_to_linear(bh.noise_dbm))
    for k, choice in association.backhaul.items():
        j = choice.donor
        paths[k] = choice.path
        if choice.path == "direct":
            s = db_to_linear(bh.direct_snr_db(k, j, draws.backhaul[k, j]) + bh.noise_dbm)
            snr = s / (noise_mw + interf[k])
        elif choice.path == "ris":
            gain = bh.ris_gain(k, j, choice.assist)
            p_tx = deployment.base_stations[j].p_tx
            eff_noise = float(linear_to_db(noise_mw + interf[k]))
            snr = db_to_linear(p_tx) * gain / db_to_linear(eff_noise)
            bh_sinr[k] = snr
            bw = allocation.backhaul[k]
            bh_rate[k] = ris_backhaul_rate(p_tx, gain, eff_noise, bw) if bw > 0 else 0.0
            continue
        else:
            s, n_fwd = bh.ncr_signal_noise(k, j, choice.assist, draws.ncr[choice.assist])
            snr = db_to_linear(s) / (db_to_linear(n_fwd) + noise_mw + interf[k])
        bh_sinr[k] = snr
        bh_rate[k] = _rate(allocation.backhaul[k], snr)

    share = np.full(n_ue, np.nan)
    final = access_rate.copy()
    for k in association.backhaul:
        mine = serving == k
        if counts[k]:
            share[mine] = bh_rate[k] / counts[k]
            final[mine] = np.minimum(access_rate[mine], share[mine])
    return RateReport(
        serving=serving, access_rx_dbm=rx_dbm, interference_mw=interference,
        access_noise_dbm=access_noise, access_sinr=sinr, access_bandwidth=access_bw,
        access_rate=access_rate, backhaul_share=share, final_rate=final, ue_counts=counts,
        backhaul_bandwidth=allocation.backhaul, backhaul_sinr=bh_sinr, backhaul_rate=bh_rate,
        backhaul_path=tuple(paths),
    )


def _backhaul_interference(deployment, bh: _Backhaul, choices: dict, allocation: Allocation,
                           draws: RandomDraws) -> np.ndarray:
    """Backhaul-band interference (mW) at each child from the other donors.

    A donor transmits in the backhaul band only while it has a child with
    bandwidth; it points at one such child (or that child's assisting node)
    and the receiving child points at its own serving hop.  Reflections off
    RIS panels and repeater retransmissions are not counted.
    """
    n_bs = len(deployment.base_stations)
    out = np.zeros(n_bs)
    if len(bh.donors) < 2:
        return out
    pos = deployment.bs_positions

    def aim(k, choice):
        if choice.path == "ris":
            p = deployment.ris_panels[choice.assist].position
        elif choice.path == "ncr":
            p = deployment.ncrs[choice.assist].position
        else:
            return pos[k]
        return np.array([p.x, p.y])

    beam = {}
    for j in bh.donors:
        kids = [k for k, c in sorted(choices.items())
                if c.donor == j and allocation.backhaul[k] > 0]
        if kids:
            k = kids[min(int(draws.beam[j] * len(kids)), len(kids) - 1)]
            beam[j] = aim(k, choices[k]) - pos[j]
    for k, c in choices.items():
        own = (aim(k, c) if c.path != "direct" else pos[c.donor]) - pos[k]
        for j, bdir in beam.items():
            if j == c.donor:
                continue
            tx, rx = deployment.base_stations[j], deployment.base_stations[k]
            to_k = pos[k] - pos[j]
            g_tx = _pattern(tx.antenna, math.atan2(to_k[1], to_k[0]) - math.atan2(bdir[1], bdir[0]))
            g_rx = _pattern(rx.antenna, math.atan2(-to_k[1], -to_k[0]) - math.atan2(own[1], own[0]))
            p_rx = tx.p_tx + g_tx + g_rx - bh.loss[k, j]
            out[k] += float(db_to_linear(p_rx)) * draws.backhaul[k, j]
    return out


def _pattern(antenna, angle):
    return 0.0 if antenna is None else antenna_gain_db(angle, antenna)


def evaluate(deployment: Deployment, foliage, radio: RadioConfig, draws: RandomDraws) -> RateReport:
    """Association, bandwidth allocation and rates for one snapshot."""
    foliage = _foliage(foliage)
    ue_to_bs = associate_ues(deployment, foliage, radio, draws)
    choices = associate_backhaul(deployment, foliage, radio)
    counts = np.bincount(ue_to_bs, minlength=len(deployment.base_stations))
    alloc = allocate_bandwidth(radio.split, counts, {k: c.donor for k, c in choices.items()})
    return compute_rates(deployment, Association(ue_to_bs, choices), alloc, draws, foliage, radio)
