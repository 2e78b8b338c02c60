import numpy as np
import pytest

from fusionslam.errors import InsufficientSatellites
from fusionslam.gnss import GnssObservation, elevation, line_of_sight, range_minus, range_rate, spp
from fusionslam.simulation.synth import constellation


def _epoch(receiver, clock, sats):
    obs = []
    for i, s in enumerate(sats):
        pr = np.linalg.norm(s - receiver) + clock
        obs.append(GnssObservation(0.0, i, s, np.zeros(3), pr, 1.0, 0.0, 0.05,
                                   elevation(s, receiver), 10))
    return obs


def test_range_minus_is_cancellation_free():
    s = np.array([1.2e7, -3.0e6, 2.1e7])
    d = np.array([3.0, -4.0, 0.5])
    exact = np.linalg.norm(s - d) - np.linalg.norm(s)
    assert range_minus(s, d, np.linalg.norm(s)) == pytest.approx(exact, abs=1e-8)


def test_line_of_sight_and_range_rate():
    u = line_of_sight([0, 0, 10], [0, 0, 0])
    np.testing.assert_allclose(u, [0, 0, 1])
    assert range_rate([0, 0, 10], [0, 0, -2], [0, 0, 0], [0, 0, 1]) == pytest.approx(-3.0)


def test_spp_recovers_position_and_clock():
    rng = np.random.default_rng(3)
    sats, _ = constellation(8, rng)
    rx = np.array([12.0, -5.0, 1.0])
    pos, clk = spp(_epoch(rx, 37.0, sats))
    np.testing.assert_allclose(pos, rx, atol=1e-4)
    assert clk == pytest.approx(37.0, abs=1e-4)


def test_spp_needs_four():
    sats = [np.array([1e7, 0, 2e7])] * 3
    with pytest.raises(InsufficientSatellites):
        spp(_epoch(np.zeros(3), 0.0, sats))
