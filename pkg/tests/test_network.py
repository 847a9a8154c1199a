import math

import numpy as np
import pytest

import toy_network as toy
from risiab.channel import AntennaPattern, CarrierConfig, PathLossConfig, RainConfig
from risiab.errors import InvalidParameterError
from risiab.geometry import Point, TreeField, TreeLine
from risiab.network import (Association, BackhaulChoice, BackhaulFoliage, Deployment,
                            NodeDescriptor, NodeKind, RadioConfig, RandomDraws, ResourceSplit,
                            aggregate_interference, allocate_bandwidth, associate_backhaul,
                            associate_ues, compute_rates, evaluate)
from risiab.ris import NcrConfig, RisPanel

ANT = AntennaPattern(20.0, -5.0, math.radians(30))


def pl(d, alpha=2.0, fc=28.0):
    return 32.4 + 10 * alpha * math.log10(d) + 20 * math.log10(fc)


def radio(psi=0.5, bw=400e6, **kw):
    return RadioConfig(CarrierConfig(28.0, bw), PathLossConfig(2.0, 2.9),
                       RainConfig.for_frequency(28.0), psi, kw.pop("noise_figure", 7.0), **kw)


def node(i, kind, x, y, p, antenna=ANT):
    return NodeDescriptor(i, kind, Point(x, y), p, antenna)


def assert_report_matches(report, expected, rel=1e-9):
    for name, want in expected.items():
        got = getattr(report, name)
        if name == "backhaul_path":
            assert got == want
            continue
        got = np.atleast_1d(np.asarray(got, dtype=float))
        want = np.atleast_1d(np.asarray(want, dtype=float))
        assert got.shape == want.shape, name
        assert np.array_equal(np.isnan(got), np.isnan(want)), name
        ok = ~np.isnan(want)
        assert np.allclose(got[ok], want[ok], rtol=rel, atol=0), (name, got, want)


class TestToyOracle:
    def test_full_report(self):
        report = evaluate(toy.deployment(), toy.foliage(), toy.radio(), toy.draws())
        assert_report_matches(report, toy.oracle())

    def test_oracle_regime(self):
        # one UE clears 25 Mbit/s and one is held back by its backhaul
        want = toy.oracle()
        assert want["serving"] == [0, 1]
        assert want["final_rate"][0] > 25e6 > want["final_rate"][1]
        assert want["backhaul_share"][1] < want["access_rate"][1]

    def test_deterministic(self):
        a = evaluate(toy.deployment(), toy.foliage(), toy.radio(), toy.draws())
        b = evaluate(toy.deployment(), toy.foliage(), toy.radio(), toy.draws())
        assert a.equals(b)


class TestAssociation:
    def test_single_bs(self):
        dep = Deployment((node(0, NodeKind.MBS, 0, 0, 40),),
                         np.random.default_rng(0).uniform(0, 500, (20, 2)))
        assert np.all(associate_ues(dep, None, radio()) == 0)

    def test_tie_goes_to_lower_id(self):
        dep = Deployment((node(3, NodeKind.MBS, -50, 0, 30), node(7, NodeKind.MBS, 50, 0, 30)),
                         np.array([[0.0, 10.0]]))
        assert associate_ues(dep, None, radio())[0] == 0

    def test_sbs_margin(self):
        margin = 10 * math.log10(500 ** 2 / 10 ** 2) - 10
        assert round(margin, 2) == 23.98

        def winner(mbs_power):
            dep = Deployment((node(0, NodeKind.MBS, 0, 0, mbs_power),
                              node(1, NodeKind.SBS_NONIAB, 510, 0, 30)), np.array([[500.0, 0.0]]))
            return associate_ues(dep, None, radio())[0]

        assert winner(40.0) == 1
        assert winner(40.0 + margin - 1e-6) == 1
        assert winner(40.0 + margin + 1e-6) == 0

    def test_foliage_changes_association(self):
        dep = Deployment((node(0, NodeKind.MBS, 0, 0, 40),
                          node(1, NodeKind.SBS_NONIAB, 120, 0, 40)), np.array([[40.0, 0.0]]))
        assert associate_ues(dep, None, radio())[0] == 0
        wall = TreeField((TreeLine(Point(20, 0), math.pi / 2, 40, 10, True),))
        assert associate_ues(dep, wall, radio())[0] == 1


def _ris_network(direct_depth):
    nodes = (node(0, NodeKind.MBS, 0, 0, 40), node(1, NodeKind.SBS_IAB, 200, 0, 40))
    panel = RisPanel(Point(185, 15), 200, serves=1)
    dep = Deployment(nodes, np.array([[210.0, 10.0]]), ris_panels=(panel,))
    return dep, BackhaulFoliage({(0, 1): (direct_depth, 0.0)})


class TestBackhaulSelection:
    def test_direct_without_helpers(self):
        dep = Deployment((node(0, NodeKind.MBS, 0, 0, 40), node(1, NodeKind.SBS_IAB, 200, 0, 30)),
                         np.zeros((0, 2)))
        assert associate_backhaul(dep, None, radio()) == {1: BackhaulChoice(0, "direct")}

    def test_heavy_foliage_prefers_ris(self):
        # in-leaf depth giving 80 dB of foliage on the direct link
        depth = (80.0 / (0.39 * 28000 ** 0.39)) ** 4
        dep, fol = _ris_network(depth)
        assert associate_backhaul(dep, fol, radio())[1].path == "ris"

    def test_clear_link_prefers_direct(self):
        dep, fol = _ris_network(0.0)
        assert associate_backhaul(dep, fol, radio())[1].path == "direct"

    def test_nearest_donor(self):
        nodes = (node(0, NodeKind.MBS, 0, 0, 40), node(1, NodeKind.MBS, 500, 0, 40),
                 node(2, NodeKind.SBS_IAB, 400, 0, 30))
        dep = Deployment(nodes, np.zeros((0, 2)))
        assert associate_backhaul(dep, None, radio())[2].donor == 1

    def test_ris_gain_oracle(self):
        # rank-one LoS hops: the optimised gain is M^2 times the per-element budget
        dep, fol = _ris_network(0.0)
        r = radio(psi=0.5, assist_selection="forced")
        report = evaluate(dep, fol, r, RandomDraws.unit(1, 2))
        assert report.backhaul_path == ("", "ris")
        d1, d2 = math.dist((0, 0), (185, 15)), math.dist((185, 15), (200, 0))
        noise = -174 + 10 * math.log10(200e6) + 7.0
        snr_db = 40 + 2 * 20 + 2 * 5.0 - pl(d1) - pl(d2) + 20 * math.log10(200) - noise
        assert math.isclose(report.backhaul_sinr[1], 10 ** (snr_db / 10), rel_tol=1e-9)
        assert math.isclose(report.backhaul_rate[1], 200e6 * math.log2(1 + 10 ** (snr_db / 10)),
                            rel_tol=1e-9)

    def test_ncr_oracle(self):
        nodes = (node(0, NodeKind.MBS, 0, 0, 40), node(1, NodeKind.SBS_IAB, 300, 0, 40))
        rep = NcrConfig(100.0, 40.0, Point(280, 20), 15.0, serves=1)
        dep = Deployment(nodes, np.array([[310.0, 0.0]]), ncrs=(rep,))
        report = evaluate(dep, None, radio(assist_selection="forced"), RandomDraws.unit(1, 2, 1))
        assert report.backhaul_path == ("", "ncr")
        noise = -174 + 10 * math.log10(200e6) + 7.0
        p_in = 40 + 20 + 15 - pl(math.dist((0, 0), (280, 20)))
        applied = min(100.0, 40.0 - p_in)
        hop2 = 15 + 20 - pl(math.dist((280, 20), (300, 0)))
        signal = p_in + applied + hop2
        fwd_noise = noise + applied + hop2
        snr = 10 ** (signal / 10) / (10 ** (fwd_noise / 10) + 10 ** (noise / 10))
        assert math.isclose(report.backhaul_sinr[1], snr, rel_tol=1e-9)

    def test_two_donor_interference_oracle(self):
        # collinear MBS0 - SBS1 - SBS3 - MBS2; MBS2 aims at SBS3 and so also at SBS1,
        # while SBS1 faces its own donor, away from MBS2
        nodes = (node(0, NodeKind.MBS, 0, 0, 40), node(1, NodeKind.SBS_IAB, 100, 0, 40),
                 node(2, NodeKind.MBS, 300, 0, 40), node(3, NodeKind.SBS_IAB, 200, 0, 40))
        dep = Deployment(nodes, np.array([[100.0, 5.0], [200.0, 5.0]]))
        report = evaluate(dep, None, radio(), RandomDraws.unit(2, 4))
        noise = 10 ** ((-174 + 10 * math.log10(200e6) + 7.0) / 10)
        signal = 10 ** ((40 + 20 + 20 - pl(100)) / 10)
        interference = 10 ** ((40 + 20 - 5 - pl(200)) / 10)
        want = signal / (noise + interference)
        assert math.isclose(report.backhaul_sinr[1], want, rel_tol=1e-9)
        assert math.isclose(report.backhaul_sinr[3], want, rel_tol=1e-9)
        assert np.allclose(report.backhaul_bandwidth, [0, 200e6, 0, 200e6])


class TestBandwidth:
    def test_proportional_backhaul(self):
        alloc = allocate_bandwidth(ResourceSplit(0.5, 400e6), [0, 2, 2], {1: 0, 2: 0})
        assert np.allclose(alloc.backhaul, [0, 100e6, 100e6])

    def test_access_per_ue(self):
        alloc = allocate_bandwidth(ResourceSplit(0.5, 400e6), [4])
        assert np.allclose(alloc.access_per_ue, [50e6])

    def test_psi_zero(self):
        alloc = allocate_bandwidth(ResourceSplit(0.0, 400e6), [0, 3, 1], {1: 0, 2: 0})
        assert np.all(alloc.backhaul == 0)

    def test_no_ues(self):
        alloc = allocate_bandwidth(ResourceSplit(0.5, 400e6), [0, 0, 0], {1: 0, 2: 0})
        assert np.all(alloc.backhaul == 0) and np.all(alloc.access_per_ue == 0)

    def test_conserves_band(self):
        counts = [5, 3, 1, 0]
        alloc = allocate_bandwidth(ResourceSplit(0.3, 400e6), counts, {1: 0, 2: 0, 3: 0})
        assert math.isclose(alloc.backhaul.sum(), 0.3 * 400e6)
        assert math.isclose(alloc.access_per_ue[0] * counts[0], 0.7 * 400e6)

    def test_bad_psi(self):
        with pytest.raises(InvalidParameterError):
            ResourceSplit(1.5, 400e6)


class TestInterference:
    def two_bs(self):
        nodes = (node(0, NodeKind.MBS, 0, 0, 40), node(1, NodeKind.MBS, 100, 0, 40))
        return Deployment(nodes, np.zeros((0, 2)))

    def test_single_bs(self):
        dep = Deployment((node(0, NodeKind.MBS, 0, 0, 40),), np.zeros((0, 2)))
        assert aggregate_interference(Point(10, 0), 0, dep, [0.0], None, radio(), [[1.0]]) == 0.0

    def test_boresight_uses_main_lobe(self):
        # victim at (50, 0) served by BS 0; BS 1 points straight at it
        got = aggregate_interference(Point(50, 0), 0, self.two_bs(), [0.0, math.pi], None,
                                     radio(), [[1.0, 1.0]])
        assert math.isclose(got, 10 ** ((40 + 20 - pl(50)) / 10), rel_tol=1e-12)

    def test_off_axis_uses_side_lobe(self):
        got = aggregate_interference(Point(50, 0), 0, self.two_bs(), [0.0, math.pi / 2], None,
                                     radio(), [[1.0, 1.0]])
        assert math.isclose(got, 10 ** ((40 - 5 - pl(50)) / 10), rel_tol=1e-12)

    def test_idle_bs_is_silent(self):
        got = aggregate_interference(Point(50, 0), 0, self.two_bs(), [0.0, math.nan], None,
                                     radio(), [[1.0, 1.0]])
        assert got == 0.0


class TestRates:
    def test_known_sinr(self):
        # choose the transmit power that gives SINR exactly 3 on 100 MHz per UE
        noise = -174 + 10 * math.log10(100e6) + 7.0
        p = noise + 10 * math.log10(3) + pl(100) - 20
        dep = Deployment((node(0, NodeKind.MBS, 0, 0, p),), np.array([[100.0, 0.0]]))
        report = evaluate(dep, None, radio(bw=200e6), RandomDraws.unit(1, 1))
        assert math.isclose(report.access_sinr[0], 3.0, rel_tol=1e-9)
        assert math.isclose(report.final_rate[0], 200e6, rel_tol=1e-9)

    def test_min_rule(self):
        dep = toy.deployment()
        report = evaluate(dep, toy.foliage(), toy.radio(), toy.draws())
        assert report.final_rate[1] == min(report.access_rate[1], report.backhaul_share[1])

    def test_all_access(self):
        dep = toy.deployment()
        r = RadioConfig(**{**toy.radio().__dict__, "psi": 0.0})
        report = evaluate(dep, toy.foliage(), r, toy.draws())
        assert report.final_rate[0] > 0
        assert report.final_rate[1] == 0.0

    def test_all_backhaul(self):
        r = RadioConfig(**{**toy.radio().__dict__, "psi": 1.0})
        report = evaluate(toy.deployment(), toy.foliage(), r, toy.draws())
        assert np.all(report.final_rate == 0.0)

    def test_zero_fading_gives_zero_rate(self):
        draws = RandomDraws(np.zeros((2, 2)), np.ones((2, 2)), np.ones((0, 2)), np.zeros(2))
        report = evaluate(toy.deployment(), toy.foliage(), toy.radio(), draws)
        assert np.all(report.final_rate == 0.0)

    def test_non_iab_sbs_is_access_limited(self):
        nodes = (node(0, NodeKind.MBS, 0, 0, 40), node(1, NodeKind.SBS_NONIAB, 200, 0, 30))
        dep = Deployment(nodes, np.array(toy.UES))
        report = evaluate(dep, None, radio(), RandomDraws.unit(2, 2))
        assert np.isnan(report.backhaul_share).all()
        assert np.array_equal(report.final_rate, report.access_rate)

    def test_explicit_association(self):
        dep = toy.deployment()
        alloc = allocate_bandwidth(toy.radio().split, [1, 1], {1: 0})
        assoc = Association(np.array([0, 1]), {1: BackhaulChoice(0, "direct")})
        report = compute_rates(dep, assoc, alloc, toy.draws(), toy.foliage(), toy.radio())
        assert_report_matches(report, toy.oracle())


class TestDeploymentChecks:
    def test_needs_base_station(self):
        with pytest.raises(InvalidParameterError):
            Deployment((), np.zeros((0, 2)))

    def test_iab_needs_donor(self):
        with pytest.raises(InvalidParameterError):
            Deployment((node(1, NodeKind.SBS_IAB, 0, 0, 30),), np.zeros((0, 2)))

    def test_helper_target(self):
        with pytest.raises(InvalidParameterError):
            Deployment((node(0, NodeKind.MBS, 0, 0, 40),), np.zeros((0, 2)),
                       ris_panels=(RisPanel(Point(5, 5), 10, serves=0),))
