"""Clock model, distance equation and neighbor-table behavior."""

import numpy as np
import pytest

from ultrarange.ranging import (
    DeviceClock,
    IncompleteRoundError,
    InconsistentRoundError,
    NeighborTable,
    RangingConfig,
    RangingRound,
    compute_distance,
    local_time,
    BREACHING,
    CLOSE,
    CONNECTED,
)

C = 343.0


def make_round(true_distance_m, clock_a, clock_c, t_emit_a=0.0, t_emit_c=1.0, c=C):
    """Synthesize the four timestamps for static devices and exact clocks."""
    tof = true_distance_m / c
    return RangingRound(
        "A", "C",
        t_a1=clock_a.local_time(t_emit_a),
        t_c1=clock_c.local_time(t_emit_a + tof),
        t_c3=clock_c.local_time(t_emit_c),
        t_a3=clock_a.local_time(t_emit_c + tof),
    )


class TestDeviceClock:
    def test_identity(self):
        assert local_time(DeviceClock(), 5.0) == 5.0

    def test_pure_offset(self):
        assert local_time(DeviceClock(offset_s=100.0), 5.0) == 105.0

    def test_drift(self):
        assert local_time(DeviceClock(drift_ppm=20.0), 1000.0) == pytest.approx(1000.02)

    def test_inverse(self):
        clk = DeviceClock(offset_s=-321.5, drift_ppm=37.0)
        t = 123.456
        assert clk.true_time(clk.local_time(t)) == pytest.approx(t, abs=1e-12)

    def test_monotonicity_guard(self):
        with pytest.raises(ValueError):
            DeviceClock(drift_ppm=-1e6)


class TestComputeDistance:
    def test_symmetric_zero_offset(self):
        rnd = RangingRound("A", "C", t_a1=0.0, t_c1=2.0 / C, t_c3=1.0, t_a3=1.0 + 2.0 / C)
        assert compute_distance(rnd, RangingConfig()) == pytest.approx(2.0)

    def test_constant_offset_cancels(self):
        base = RangingRound("A", "C", t_a1=0.0, t_c1=2.0 / C, t_c3=1.0, t_a3=1.0 + 2.0 / C)
        shifted = RangingRound(
            "A", "C",
            t_a1=base.t_a1, t_c1=base.t_c1 + 123.456,
            t_c3=base.t_c3 + 123.456, t_a3=base.t_a3,
        )
        cfg = RangingConfig()
        # cancellation is algebraically exact; float64 rounding of the large
        # offset leaves only sub-nanometer residue
        assert compute_distance(shifted, cfg) == pytest.approx(
            compute_distance(base, cfg), abs=1e-9
        )

    def test_offset_cancellation_asymmetric_bookkeeping(self):
        # responder clock 10 s behind: (t_c1-t_a1) = 1/c + 10, (t_a3-t_c3) = 1/c - 10
        rnd = RangingRound("A", "C", t_a1=0.0, t_c1=1.0 / C + 10.0,
                           t_c3=0.0, t_a3=1.0 / C - 10.0)
        # keep causality by shifting both initiator stamps forward
        rnd = RangingRound("A", "C", t_a1=0.0, t_c1=1.0 / C + 10.0,
                           t_c3=10.0 + 1.0 / C + 0.5, t_a3=0.5 + 2.0 / C)
        assert compute_distance(rnd, RangingConfig()) == pytest.approx(1.0)

    def test_random_offsets_cancel(self):
        cfg = RangingConfig()
        rng = np.random.default_rng(77)
        base = make_round(2.0, DeviceClock(), DeviceClock())
        d0 = compute_distance(base, cfg)
        for _ in range(1000):
            off_a = rng.uniform(-1e4, 1e4)
            off_c = rng.uniform(-1e4, 1e4)
            rnd = make_round(2.0, DeviceClock(offset_s=off_a), DeviceClock(offset_s=off_c))
            # well below the 1 mm acceptance bound; residue is float rounding
            assert abs(compute_distance(rnd, cfg) - d0) <= 1e-9

    def test_drift_error_bound(self):
        # drift-induced error <= c * |drift difference| * round span / 2
        cfg = RangingConfig()
        rng = np.random.default_rng(13)
        for _ in range(200):
            da = rng.uniform(-50, 50)
            dc = rng.uniform(-50, 50)
            span = rng.uniform(0.05, 2.0)
            rnd = make_round(2.0, DeviceClock(drift_ppm=da), DeviceClock(drift_ppm=dc),
                             t_emit_a=0.0, t_emit_c=span)
            err = abs(compute_distance(rnd, cfg) - 2.0)
            bound = C * abs(da - dc) * 1e-6 * (span + 2.0 / C) / 2.0 + 2.0 * 60e-6 + 1e-9
            assert err <= bound

    def test_drift_example_magnitude(self):
        # 20 ppm difference over a 0.4 s round: error of order 1.4 mm
        rnd = make_round(2.0, DeviceClock(drift_ppm=20.0), DeviceClock(), t_emit_c=0.4)
        err = abs(compute_distance(rnd, RangingConfig()) - 2.0)
        assert err <= C * 20e-6 * 0.4 / 2.0 + 1e-4

    def test_missing_timestamp(self):
        rnd = RangingRound("A", "C", t_a1=0.0, t_c1=1.0)
        with pytest.raises(IncompleteRoundError, match="t_c3"):
            compute_distance(rnd, RangingConfig())

    def test_non_positive_distance(self):
        rnd = RangingRound("A", "C", t_a1=0.0, t_c1=-5.0, t_c3=-4.0, t_a3=1.0)
        with pytest.raises(InconsistentRoundError):
            compute_distance(rnd, RangingConfig())

    def test_non_causal_rejected(self):
        rnd = RangingRound("A", "C", t_a1=1.0, t_c1=2.0, t_c3=3.0, t_a3=0.5)
        with pytest.raises(InconsistentRoundError):
            compute_distance(rnd, RangingConfig())


class TestNeighborTable:
    def test_breaching_classification(self):
        tab = NeighborTable()
        tab.update("B", 1.5, now_s=0.0)
        assert tab.classification_of("B", 0.0) == BREACHING

    def test_close_classification(self):
        tab = NeighborTable()
        tab.update("B", 3.0, now_s=0.0)
        assert tab.classification_of("B", 0.0) == CLOSE

    def test_exact_tolerance_is_not_breaching(self):
        tab = NeighborTable()
        tab.update("B", 2.0, now_s=0.0)
        assert tab.classification_of("B", 0.0) == CLOSE

    def test_auto_registration(self):
        tab = NeighborTable()
        tab.update("new", 5.0, now_s=0.0)
        assert "new" in tab
        assert tab.classification_of("new", 0.0) == CONNECTED

    def test_set_nesting_random_updates(self):
        rng = np.random.default_rng(5)
        tab = NeighborTable()
        for k in range(500):
            tab.update(f"d{rng.integers(0, 12)}", float(rng.uniform(0.3, 8.0)), now_s=k * 0.1)
            now = k * 0.1
            b, c, x = tab.breaching_set(now), tab.close_set(now), tab.connected_set()
            assert b <= c <= x

    def test_alert_immediate(self):
        tab = NeighborTable()
        tab.update("B", 1.7, now_s=10.0)
        dec = tab.check_alert(10.0)
        assert dec == (True, "B", 1.7)

    def test_alert_staleness(self):
        tab = NeighborTable()
        tab.update("B", 1.7, now_s=0.0)
        assert not tab.check_alert(10.0).alert  # default horizon 5 s

    def test_alert_hysteresis(self):
        cfg = RangingConfig(alert_hysteresis=2)
        tab = NeighborTable(cfg)
        tab.update("B", 2.3, now_s=0.0)
        tab.update("B", 1.8, now_s=0.2)
        assert not tab.check_alert(0.2).alert
        tab.update("B", 1.9, now_s=0.4)
        assert tab.check_alert(0.4).alert

    def test_alert_reports_nearest(self):
        tab = NeighborTable()
        tab.update("B", 1.9, now_s=0.0)
        tab.update("C", 1.2, now_s=0.0)
        dec = tab.check_alert(0.0)
        assert dec.neighbor_id == "C"
        assert dec.distance_m == 1.2

    def test_empty_table_clear(self):
        assert NeighborTable().check_alert(0.0) == (False, None, None)

    def test_rejects_non_positive_distance(self):
        with pytest.raises(ValueError):
            NeighborTable().update("B", 0.0, now_s=0.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RangingConfig(tolerance_m=4.0, close_range_m=3.5)
        with pytest.raises(ValueError):
            RangingConfig(alert_hysteresis=0)
