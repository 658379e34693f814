"""Acoustic paths, obstruction handling, stream mixing, control channel."""

import numpy as np
import pytest

from ultrarange.dsp import PulseTemplate, SampleBuffer, detect_pulses
from ultrarange.sim.channel import (
    AcousticLink,
    ChannelPath,
    ControlChannel,
    add_arrival,
    arrivals_for_link,
)

C = 343.0
T48 = PulseTemplate(sample_rate_hz=48000.0)
T44 = PulseTemplate(sample_rate_hz=44100.0)


def rng():
    return np.random.default_rng(0)


class TestChannelPath:
    def test_direct_cannot_have_extra(self):
        with pytest.raises(ValueError):
            ChannelPath(kind="direct", extra_path_length_m=1.0)

    def test_reflected_needs_extra(self):
        with pytest.raises(ValueError):
            ChannelPath(kind="reflected", extra_path_length_m=0.0)

    def test_gain_bounds(self):
        with pytest.raises(ValueError):
            ChannelPath(gain_factor=0.0)
        with pytest.raises(ValueError):
            ChannelPath(gain_factor=1.5)


class TestArrivals:
    def test_direct_delay_is_distance_over_c(self):
        link = AcousticLink()
        (a,) = arrivals_for_link(link, 2.0, 1.0, C, rng())
        assert a.delay_s == pytest.approx(2.0 / C)  # ~5.831 ms
        assert a.delay_s == pytest.approx(0.005831, abs=2e-6)
        assert a.amplitude == pytest.approx(0.5)    # spherical spreading, ref 1 m

    def test_partial_obstruction_attenuates_direct_only(self):
        link = AcousticLink(
            paths=(ChannelPath(), ChannelPath(kind="reflected",
                                              extra_path_length_m=1.0, gain_factor=0.8)),
            obstruction="partial", attenuation_db=20.0)
        direct, echo = arrivals_for_link(link, 2.0, 1.0, C, rng())
        assert direct.amplitude == pytest.approx(0.5 * 0.1)      # -20 dB
        assert echo.amplitude == pytest.approx(0.8 / 3.0)        # unobstructed

    def test_total_obstruction_drops_direct(self):
        link = AcousticLink(
            paths=(ChannelPath(), ChannelPath(kind="reflected",
                                              extra_path_length_m=1.5)),
            obstruction="total")
        arrivals = arrivals_for_link(link, 2.0, 1.0, C, rng())
        assert len(arrivals) == 1
        assert arrivals[0].delay_s == pytest.approx(3.5 / C)

    def test_total_obstruction_no_reflection_delivers_nothing(self):
        link = AcousticLink(obstruction="total")
        assert arrivals_for_link(link, 2.0, 1.0, C, rng()) == []

    def test_jitter_redraws_within_range(self):
        link = AcousticLink(paths=(ChannelPath(kind="reflected",
                                               extra_path_length_m=0.5,
                                               gain_factor=0.9,
                                               extra_jitter_m=(0.0, 0.4)),))
        g = rng()
        delays = [arrivals_for_link(link, 2.0, 1.0, C, g)[0].delay_s
                  for _ in range(64)]
        assert min(delays) >= 2.5 / C
        assert max(delays) <= (2.9 + 1e-9) / C
        assert len(set(delays)) > 1

    def test_spreading_clamps_below_10cm(self):
        (a,) = arrivals_for_link(AcousticLink(), 0.01, 1.0, C, rng())
        assert a.amplitude == pytest.approx(1.0 / 0.1)


class TestAddArrival:
    def test_mixed_rate_timestamp_accuracy(self):
        # a 44.1 kHz emission received by a 48 kHz device
        buf = np.zeros(12000)
        add_arrival(buf, 0, T44, 48000.0, 3000.25, 1.0)
        events = detect_pulses(SampleBuffer(buf, 48000.0), T48)
        assert len(events) == 1
        got = events[0].arrival_time_s * 48000.0
        assert got == pytest.approx(3000.25, abs=0.2)

    def test_buffer_base_offset(self):
        buf = np.zeros(12000)
        add_arrival(buf, 500, T48, 48000.0, 3000.0, 0.7)
        events = detect_pulses(SampleBuffer(buf, 48000.0), T48)
        got = events[0].arrival_time_s * 48000.0 + 500
        assert got == pytest.approx(3000.0, abs=0.01)
        assert events[0].peak_amplitude == pytest.approx(0.7, rel=0.02)

    def test_clips_before_base_without_error(self):
        buf = np.zeros(4000)
        add_arrival(buf, 0, T48, 48000.0, 10.0, 1.0)  # guard region clipped
        assert np.isfinite(buf).all()
        assert np.abs(buf).max() > 0.5


class TestControlChannel:
    def test_degenerate_latency_exact(self):
        ch = ControlChannel(latency_min_s=0.01, latency_max_s=0.01)
        t = ch.delivery_time("a", "b", 5.0, 1.0, rng())
        assert t == pytest.approx(5.01)

    def test_total_loss(self):
        ch = ControlChannel(loss_probability=1.0)
        assert ch.delivery_time("a", "b", 0.0, 1.0, rng()) is None

    def test_out_of_radio_range_drops(self):
        ch = ControlChannel(radio_range_m=10.0)
        assert ch.delivery_time("a", "b", 0.0, 11.0, rng()) is None

    def test_fifo_per_pair(self):
        ch = ControlChannel(latency_min_s=0.0, latency_max_s=0.05)
        g = rng()
        times = []
        t_send = 0.0
        for _ in range(200):
            t = ch.delivery_time("a", "b", t_send, 1.0, g)
            times.append(t)
            t_send += 0.001
        assert all(b > a for a, b in zip(times, times[1:]))

    def test_loss_rate_statistics(self):
        ch = ControlChannel(loss_probability=0.3)
        g = rng()
        drops = sum(ch.delivery_time("a", "b", i * 1.0, 1.0, g) is None
                    for i in range(2000))
        assert 0.25 < drops / 2000 < 0.35
