from __future__ import annotations

import math
import socket
import struct
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridstorm.netio import (
    ACTION_CLOSE, ACTION_OPEN, COMMAND_SIZE, TELEMETRY_SIZE, BreakerCommand, CommandListener, MalformedDatagram,
    Pacer, Pacing, ReplyStatus, TelemetryFrame, TelemetryPublisher, decode_command, decode_reply, decode_sync,
    decode_telemetry, encode_command, encode_reply, encode_sync, encode_telemetry, parse_endpoint, peek_magic,
)
from oracles import command_fields, telemetry_bytes

FRAME = TelemetryFrame(seq=7, sim_time_us=1_234_000, bus_id=24, island_id=1, frequency_hz=60.0, v_mag_pu=1.02,
                       v_ang_rad=-0.25, p_mw=12.5, q_mvar=-3.25, breaker_state=1, fault_flag=0)

frames = st.builds(
    TelemetryFrame, seq=st.integers(0, 2**32 - 1), sim_time_us=st.integers(0, 2**64 - 1),
    bus_id=st.integers(0, 2**16 - 1), island_id=st.integers(0, 2**16 - 1),
    frequency_hz=st.floats(allow_nan=False), v_mag_pu=st.floats(allow_nan=False),
    v_ang_rad=st.floats(allow_nan=False), p_mw=st.floats(allow_nan=False), q_mvar=st.floats(allow_nan=False),
    breaker_state=st.integers(0, 255), fault_flag=st.integers(0, 255))


class TestTelemetryLayout:
    def test_size(self):
        assert len(encode_telemetry(FRAME)) == TELEMETRY_SIZE == 64

    def test_frequency_at_offset_24(self):
        data = encode_telemetry(FRAME)
        assert data[24:32] == struct.pack("<d", 60.0)
        assert data[24:32] == bytes.fromhex("0000000000004e40")

    def test_matches_byte_table(self):
        f = FRAME
        assert encode_telemetry(f) == telemetry_bytes(f.seq, f.sim_time_us, f.bus_id, f.island_id, f.frequency_hz,
                                                      f.v_mag_pu, f.v_ang_rad, f.p_mw, f.q_mvar, f.breaker_state,
                                                      f.fault_flag)

    def test_nan_frequency_survives(self):
        frame = TelemetryFrame(**{**FRAME.__dict__, "frequency_hz": math.nan})
        assert math.isnan(decode_telemetry(encode_telemetry(frame)).frequency_hz)

    @settings(max_examples=300)
    @given(frames)
    def test_round_trip(self, frame):
        assert decode_telemetry(encode_telemetry(frame)) == frame

    def test_round_trip_10k(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            raw = rng.bytes(40)
            floats = struct.unpack("<5d", raw)
            frame = TelemetryFrame(int(rng.integers(0, 2**32)), int(rng.integers(0, 2**63)),
                                   int(rng.integers(0, 2**16)), int(rng.integers(0, 2**16)), *floats,
                                   int(rng.integers(0, 256)), int(rng.integers(0, 256)))
            data = encode_telemetry(frame)
            assert encode_telemetry(decode_telemetry(data)) == data

    @pytest.mark.parametrize("mutate", [
        lambda d: d[:-1], lambda d: d + b"\0", lambda d: b"XXXX" + d[4:], lambda d: d[:4] + b"\x02" + d[5:]])
    def test_rejects(self, mutate):
        with pytest.raises(MalformedDatagram):
            decode_telemetry(mutate(encode_telemetry(FRAME)))

    def test_encode_range_checked(self):
        with pytest.raises(ValueError):
            encode_telemetry(TelemetryFrame(**{**FRAME.__dict__, "bus_id": 70000}))


class TestCommand:
    def test_layout(self):
        data = encode_command(BreakerCommand(5, 1, ACTION_CLOSE, 1_500_000))
        assert len(data) == COMMAND_SIZE
        assert command_fields(data) == (5, 1, 1, 1_500_000)

    @settings(max_examples=300)
    @given(st.integers(0, 2**32 - 1), st.integers(0, 2**16 - 1), st.sampled_from([0, 1]), st.integers(0, 2**64 - 1))
    def test_round_trip(self, seq, brk, action, at):
        cmd = BreakerCommand(seq, brk, action, at)
        assert decode_command(encode_command(cmd)) == cmd

    def test_invalid_action(self):
        data = bytearray(encode_command(BreakerCommand(1, 1, ACTION_OPEN)))
        data[14] = 2
        with pytest.raises(MalformedDatagram, match="action"):
            decode_command(bytes(data))
        with pytest.raises(ValueError):
            BreakerCommand(1, 1, 2)

    @pytest.mark.parametrize("offset", [5, 6, 7, 15])
    def test_padding_must_be_zero(self, offset):
        data = bytearray(encode_command(BreakerCommand(1, 1, ACTION_OPEN)))
        data[offset] = 1
        with pytest.raises(MalformedDatagram, match="padding"):
            decode_command(bytes(data))

    @settings(max_examples=2000)
    @given(st.binary(max_size=64))
    def test_random_bytes_agree_with_oracle(self, data):
        expect = command_fields(data)
        try:
            got = decode_command(data)
        except MalformedDatagram:
            assert expect is None
        else:
            assert (got.seq, got.breaker_id, got.action, got.execute_at_us) == expect


class TestSyncReply:
    def test_sync(self):
        data = encode_sync(99)
        assert len(data) == 12 and decode_sync(data) == 99
        assert peek_magic(data) == 0x4D475331

    def test_reply(self):
        for status in ReplyStatus:
            assert decode_reply(encode_reply(3, status)) == (3, status)
        bad = bytearray(encode_reply(3, ReplyStatus.ACCEPTED))
        bad[5] = 9
        with pytest.raises(MalformedDatagram):
            decode_reply(bytes(bad))

    def test_peek_short(self):
        assert peek_magic(b"ab") is None


class TestEndpoint:
    def test_forms(self):
        assert parse_endpoint("10.0.0.2:7401") == ("10.0.0.2", 7401)
        assert parse_endpoint("7402") == ("127.0.0.1", 7402)
        assert parse_endpoint(":7402", "0.0.0.0") == ("0.0.0.0", 7402)

    @pytest.mark.parametrize("text", ["host:abc", "host:70000", ""])
    def test_bad(self, text):
        with pytest.raises(ValueError):
            parse_endpoint(text)


def wait_for(pred, timeout=2.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(0.01)
    return pred()


class TestLoopback:
    def test_listener_routes_datagrams(self):
        lst = CommandListener(("127.0.0.1", 0))
        try:
            with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
                s.sendto(encode_command(BreakerCommand(1, 1, ACTION_OPEN, 10)), lst.address)
                s.sendto(b"garbage", lst.address)
                s.sendto(encode_sync(4), lst.address)
                assert lst.wait_ack(4, 2.0)
                assert wait_for(lambda: lst.stats.datagrams == 3)
                cmds = lst.drain()
                assert [c.command for c in cmds] == [BreakerCommand(1, 1, ACTION_OPEN, 10)]
                assert cmds[0].sender[1] == s.getsockname()[1]
                assert lst.stats.malformed == 1 and lst.stats.syncs == 1
                assert not lst.wait_ack(5, 0.05)
        finally:
            lst.close()

    def test_publisher_delivers_in_order(self):
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as rx:
            rx.bind(("127.0.0.1", 0))
            rx.settimeout(2.0)
            pub = TelemetryPublisher(rx.getsockname())
            for k in range(20):
                pub.publish(TelemetryFrame(**{**FRAME.__dict__, "seq": k}))
            assert pub.flush()
            got = [decode_telemetry(rx.recvfrom(128)[0]).seq for _ in range(20)]
            pub.close()
        assert got == list(range(20))

    def test_publisher_drops_oldest_when_full(self):
        pub = TelemetryPublisher(("127.0.0.1", 9), capacity=4)
        with pub._cv:  # re-entrant: holding it parks the sender thread
            for k in range(10):
                pub.send_raw(bytes([k]), ("127.0.0.1", 9))
            assert [d[0] for d, _ in pub._out] == [6, 7, 8, 9]
            assert pub.dropped == 6
        pub.close()

    def test_publisher_survives_unreachable_peer(self):
        pub = TelemetryPublisher(("127.0.0.1", 1))
        for _ in range(5):
            pub.publish(FRAME)
        assert pub.flush()
        pub.close()
        assert pub.sent + pub.send_errors == 5


def test_realtime_pacer_waits():
    p = Pacer(Pacing.REALTIME)
    t0 = time.monotonic()
    p.wait_until(0.0)
    p.wait_until(0.05)
    assert time.monotonic() - t0 >= 0.045


def test_lockstep_pacer_does_not_wait():
    p = Pacer(Pacing.LOCKSTEP)
    t0 = time.monotonic()
    p.wait_until(100.0)
    assert time.monotonic() - t0 < 0.01
