"""Wire protocol tests.

The golden heartbeat frame is assembled by hand from the documented
byte layout, independent of the codec, so the codec cannot drift from
the layout silently. Round trips are property-tested with 32-bit-representable
floats because the wire narrows doubles to f32 by design.
"""

import struct
import threading
import time
import urllib.request
import zlib

import pytest
from hypothesis import given, settings, strategies as st

from gelteleop.wire import (
    CONTROL_START,
    HEADER,
    MAX_PAYLOAD,
    BadMagicError,
    BadVersionError,
    ControlMsg,
    CrcMismatchError,
    DecodeError,
    Disconnected,
    FlowFieldMsg,
    ForceMsg,
    GripCmdMsg,
    HapticCmdMsg,
    Heartbeat,
    MalformedPayloadError,
    OversizeError,
    RawFrameServer,
    RigTelemetryMsg,
    SensorFrame,
    TrailingDataError,
    TruncatedError,
    UnknownMessage,
    WebServer,
    WebSocketClient,
    channel,
    connect_raw,
    decode,
    decode_prefix,
    encode,
)

f32 = st.floats(width=32, allow_nan=False)
u8 = st.integers(min_value=0, max_value=255)
u16 = st.integers(min_value=0, max_value=65535)
u32 = st.integers(min_value=0, max_value=2**32 - 1)
u64 = st.integers(min_value=0, max_value=2**64 - 1)


@st.composite
def sensor_frames(draw):
    width = draw(st.integers(min_value=0, max_value=48))
    height = draw(st.integers(min_value=0, max_value=48))
    pixels = draw(st.binary(min_size=width * height, max_size=width * height))
    return SensorFrame(width=width, height=height, pixels=pixels)


messages = st.one_of(
    sensor_frames(),
    st.lists(st.tuples(f32, f32, f32, f32, st.booleans()), max_size=40).map(
        lambda e: FlowFieldMsg(entries=tuple(e))
    ),
    st.builds(
        ForceMsg,
        fx=f32,
        fy=f32,
        fn=f32,
        tau=f32,
        total=f32,
        quality_percent=st.integers(min_value=0, max_value=100),
    ),
    st.lists(u16, min_size=5, max_size=5).map(
        lambda v: HapticCmdMsg(intensities_fixed=tuple(v))
    ),
    st.builds(GripCmdMsg, aperture=f32, max_rate=f32),
    st.builds(
        RigTelemetryMsg,
        time_s=f32,
        motor_pos=f32,
        object_pos=f32,
        tension=f32,
        normal=f32,
        slipping=f32,
    ),
    st.builds(ControlMsg, code=u8),
    st.just(Heartbeat()),
    st.builds(
        UnknownMessage,
        msg_type=st.integers(min_value=9, max_value=255),
        payload=st.binary(max_size=64),
    ),
)


class TestGoldenBytes:
    def test_heartbeat_frame_hand_assembled(self):
        # magic, version, type, flags, then seq/timestamp/length all zero.
        golden = bytes([0x54, 0x54, 0x01, 0x08, 0x00]) + b"\x00" * 4 + b"\x00" * 8 + b"\x00" * 4
        assert len(golden) == 21
        assert encode(Heartbeat(), seq=0, timestamp_ns=0) == golden

    def test_header_size(self):
        assert HEADER.size == 21

    def test_haptic_full_intensity_all_ffff(self):
        msg = HapticCmdMsg.from_intensities((1.0,) * 5)
        payload = encode(msg, seq=0, timestamp_ns=0)[HEADER.size :]
        assert payload == b"\x05" + b"\xff\xff" * 5

    def test_sensor_frame_payload_length(self):
        msg = SensorFrame(width=320, height=240, pixels=bytes(320 * 240))
        frame = encode(msg, seq=1, timestamp_ns=2)
        payload_len = struct.unpack_from("<I", frame, 17)[0]
        assert payload_len == 5 + 76800

    def test_little_endian_seq_and_timestamp(self):
        frame = encode(Heartbeat(), seq=0x01020304, timestamp_ns=0x1122334455667788)
        assert frame[5:9] == bytes([0x04, 0x03, 0x02, 0x01])
        assert frame[9:17] == bytes([0x88, 0x77, 0x66, 0x55, 0x44, 0x33, 0x22, 0x11])


class TestRoundTrip:
    @settings(max_examples=300)
    @given(messages, u32, u64, st.booleans())
    def test_decode_encode_identity(self, msg, seq, ts, with_crc):
        frame = encode(msg, seq=seq, timestamp_ns=ts, with_crc=with_crc)
        got_msg, got_seq, got_ts = decode(frame)
        assert got_msg == msg
        assert got_seq == seq
        assert got_ts == ts
        assert encode(got_msg, seq=got_seq, timestamp_ns=got_ts, with_crc=with_crc) == frame

    @given(messages)
    def test_crc_adds_four_bytes(self, msg):
        bare = encode(msg, seq=0, timestamp_ns=0, with_crc=False)
        checked = encode(msg, seq=0, timestamp_ns=0, with_crc=True)
        assert len(checked) == len(bare) + 4
        payload = bare[HEADER.size :]
        assert checked[-4:] == struct.pack("<I", zlib.crc32(payload))

    def test_decode_prefix_walks_a_stream(self):
        frames = [
            encode(Heartbeat(), seq=i, timestamp_ns=i * 10, with_crc=bool(i % 2))
            for i in range(5)
        ]
        stream = b"".join(frames)
        seen = []
        while stream:
            (msg, seq, ts), consumed = decode_prefix(stream)
            seen.append(seq)
            stream = stream[consumed:]
        assert seen == [0, 1, 2, 3, 4]

    def test_decode_prefix_incomplete_returns_none(self):
        frame = encode(ControlMsg(code=CONTROL_START), seq=9, timestamp_ns=9)
        for cut in range(len(frame)):
            assert decode_prefix(frame[:cut]) is None


class TestDecodeErrors:
    FRAME = encode(GripCmdMsg(aperture=0.5, max_rate=1.0), seq=3, timestamp_ns=4)

    def test_bad_magic(self):
        with pytest.raises(BadMagicError):
            decode(b"\x00" + self.FRAME[1:])

    def test_bad_version(self):
        bad = bytearray(self.FRAME)
        bad[2] = 99
        with pytest.raises(BadVersionError):
            decode(bytes(bad))

    def test_truncated(self):
        with pytest.raises(TruncatedError):
            decode(self.FRAME[:10])

    def test_trailing_bytes(self):
        with pytest.raises(TrailingDataError):
            decode(self.FRAME + b"\x00")

    def test_crc_mismatch(self):
        frame = bytearray(encode(ForceMsg(1, 2, 3, 4, 5, 6), seq=0, timestamp_ns=0, with_crc=True))
        frame[HEADER.size] ^= 0xFF  # corrupt payload, leave stated CRC alone
        with pytest.raises(CrcMismatchError):
            decode(bytes(frame))

    def test_oversize_header_rejected_before_allocation(self):
        header = HEADER.pack(b"\x54\x54", 1, 0x08, 0, 0, 0, MAX_PAYLOAD + 1)
        with pytest.raises(OversizeError):
            decode_prefix(header)

    def test_oversize_encode_rejected(self):
        with pytest.raises(OversizeError):
            encode(UnknownMessage(msg_type=200, payload=bytes(MAX_PAYLOAD + 1)), 0, 0)

    def test_malformed_flow_count(self):
        frame = bytearray(encode(FlowFieldMsg(entries=((1, 2, 3, 4, True),)), 0, 0))
        frame[HEADER.size] = 7  # claim 7 entries, carry 1
        frame[17] = 19  # keep payload_len consistent with the byte count
        with pytest.raises(MalformedPayloadError):
            decode(bytes(frame))

    def test_unknown_type_is_skippable_not_an_error(self):
        frame = encode(UnknownMessage(msg_type=0x7F, payload=b"abc"), seq=1, timestamp_ns=2)
        msg, seq, ts = decode(frame)
        assert msg == UnknownMessage(msg_type=0x7F, payload=b"abc")

    def test_fuzz_random_bytes_never_crash(self):
        import random

        rng = random.Random(1234)
        outcomes = {"ok": 0, "rejected": 0}
        for _ in range(20_000):
            n = rng.randrange(0, 64)
            blob = rng.randbytes(n)
            if rng.random() < 0.5:
                blob = b"\x54\x54\x01" + blob  # exercise paths past the magic check
            try:
                decode(blob)
                outcomes["ok"] += 1
            except (DecodeError, OversizeError):
                outcomes["rejected"] += 1
        assert sum(outcomes.values()) == 20_000


class TestChannels:
    def test_latest_wins_keeps_only_the_newest(self):
        producer, consumer = channel("latest_wins")
        for i in range(1, 101):
            producer.put(i)
        assert consumer.get(timeout=1) == 100
        assert len(consumer) == 0

    def test_latest_wins_never_blocks(self):
        producer, consumer = channel("latest_wins")
        start = time.perf_counter()
        for i in range(10_000):
            producer.put(i)
        assert time.perf_counter() - start < 1.0
        assert consumer.get(timeout=1) == 9999

    def test_fifo_preserves_order(self):
        producer, consumer = channel("fifo", capacity=2)
        producer.put("a")
        producer.put("b")
        assert consumer.get(timeout=1) == "a"
        assert consumer.get(timeout=1) == "b"

    def test_fifo_backpressure_times_out(self):
        producer, _ = channel("fifo", capacity=1)
        producer.put(1)
        with pytest.raises(TimeoutError):
            producer.put(2, timeout=0.05)

    def test_fifo_backpressure_releases_on_consume(self):
        producer, consumer = channel("fifo", capacity=1)
        producer.put(1)
        got = []

        def drain():
            time.sleep(0.05)
            got.append(consumer.get(timeout=1))

        thread = threading.Thread(target=drain)
        thread.start()
        producer.put(2, timeout=1)  # must unblock when the consumer drains
        thread.join()
        assert got == [1]
        assert consumer.get(timeout=1) == 2

    def test_consumer_sees_disconnect_after_drain(self):
        producer, consumer = channel("fifo", capacity=4)
        producer.put("last")
        producer.close()
        assert consumer.get(timeout=1) == "last"
        with pytest.raises(Disconnected):
            consumer.get(timeout=1)

    def test_producer_sees_consumer_disconnect(self):
        producer, consumer = channel("latest_wins")
        consumer.close()
        with pytest.raises(Disconnected):
            producer.put(1)

    def test_get_times_out_when_empty(self):
        _, consumer = channel("fifo", capacity=1)
        with pytest.raises(TimeoutError):
            consumer.get(timeout=0.05)

    def test_staleness_bound_under_concurrent_load(self):
        # Slot holds at most one item, so a consumer that keeps up is
        # never more than one item behind the producer.
        producer, consumer = channel("latest_wins")
        lags = []
        produced = [0]
        stop = threading.Event()

        def produce():
            for i in range(1, 2001):
                produced[0] = i
                producer.put(i)
            stop.set()

        def consume():
            while not stop.is_set() or len(consumer) > 0:
                ok, item = consumer.try_get()
                if ok:
                    lags.append(produced[0] - item)

        threads = [threading.Thread(target=produce), threading.Thread(target=consume)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert lags, "consumer never observed an item"
        assert max(lags) <= 1

    def test_bad_policy_and_capacity(self):
        with pytest.raises(ValueError):
            channel("newest")
        with pytest.raises(ValueError):
            channel("fifo", capacity=0)


class TestRawTransport:
    def test_frames_across_split_writes(self):
        received = []
        done = threading.Event()

        def on_frame(client_id, message, seq, ts):
            received.append((message, seq, ts))
            if len(received) == 3:
                done.set()

        server = RawFrameServer("127.0.0.1", 0, on_frame=on_frame)
        server.start()
        try:
            sock = connect_raw("127.0.0.1", server.port)
            frames = b"".join(
                encode(ControlMsg(code=i + 1), seq=i, timestamp_ns=i) for i in range(3)
            )
            mid = len(frames) // 2 + 3  # split inside a frame on purpose
            sock.sendall(frames[:mid])
            time.sleep(0.02)
            sock.sendall(frames[mid:])
            assert done.wait(timeout=2.0)
            assert [m.code for m, _, _ in received] == [1, 2, 3]
            assert [s for _, s, _ in received] == [0, 1, 2]
            sock.close()
        finally:
            server.stop()

    def test_broadcast_reaches_client(self):
        server = RawFrameServer("127.0.0.1", 0)
        server.start()
        try:
            sock = connect_raw("127.0.0.1", server.port)
            deadline = time.time() + 2.0
            while server.broadcast(encode(Heartbeat(), seq=5, timestamp_ns=6)) == 0:
                assert time.time() < deadline, "client never registered"
                time.sleep(0.01)
            sock.settimeout(2.0)
            buffer = b""
            while True:
                result = decode_prefix(buffer)
                if result is not None:
                    break
                buffer += sock.recv(4096)
            (msg, seq, ts), _ = result
            assert msg == Heartbeat()
            assert (seq, ts) == (5, 6)
            sock.close()
        finally:
            server.stop()


class TestWebTransport:
    def make_root(self, tmp_path):
        (tmp_path / "index.html").write_text("<!doctype html><p>console</p>")
        (tmp_path / "app.js").write_text("console.log('hi')")
        return tmp_path

    def test_static_files(self, tmp_path):
        server = WebServer("127.0.0.1", 0, web_root=self.make_root(tmp_path))
        server.start()
        try:
            base = f"http://127.0.0.1:{server.port}"
            with urllib.request.urlopen(f"{base}/") as response:
                assert b"console" in response.read()
                assert "text/html" in response.headers["Content-Type"]
            with urllib.request.urlopen(f"{base}/app.js") as response:
                assert b"hi" in response.read()
            with pytest.raises(urllib.error.HTTPError) as err:
                urllib.request.urlopen(f"{base}/missing.js")
            assert err.value.code == 404
        finally:
            server.stop()

    def test_path_traversal_blocked(self, tmp_path):
        root = tmp_path / "web"
        root.mkdir()
        (root / "index.html").write_text("ok")
        (tmp_path / "secret.txt").write_text("nope")
        server = WebServer("127.0.0.1", 0, web_root=root)
        server.start()
        try:
            import http.client

            conn = http.client.HTTPConnection("127.0.0.1", server.port, timeout=2)
            conn.request("GET", "/../secret.txt")
            assert conn.getresponse().status == 404
        finally:
            server.stop()

    def test_websocket_round_trip(self, tmp_path):
        received = []
        got_one = threading.Event()

        def on_frame(client_id, message, seq, ts):
            received.append(message)
            got_one.set()

        server = WebServer("127.0.0.1", 0, web_root=self.make_root(tmp_path), on_frame=on_frame)
        server.start()
        try:
            client = WebSocketClient("127.0.0.1", server.port)
            client.send_frame(encode(GripCmdMsg(aperture=0.5, max_rate=1.0), seq=1, timestamp_ns=2))
            assert got_one.wait(timeout=2.0)
            assert received[0].aperture == 0.5

            deadline = time.time() + 2.0
            frame = encode(ForceMsg(1, 0, 2, 0, 2.5, 100), seq=7, timestamp_ns=8)
            while server.broadcast(frame) == 0:
                assert time.time() < deadline
                time.sleep(0.01)
            msg, seq, ts = decode(client.recv_frame())
            assert msg.total == 2.5
            assert (seq, ts) == (7, 8)

            assert client.ping(b"abc") == b"abc"
            client.close()
        finally:
            server.stop()

    def test_websocket_fragmented_message(self, tmp_path):
        from gelteleop.wire.transport import _WS_GUID  # noqa: F401  (handshake sanity)

        received = []
        got_one = threading.Event()

        def on_frame(client_id, message, seq, ts):
            received.append(message)
            got_one.set()

        server = WebServer("127.0.0.1", 0, on_frame=on_frame)
        server.start()
        try:
            client = WebSocketClient("127.0.0.1", server.port)
            frame = encode(ControlMsg(code=CONTROL_START), seq=0, timestamp_ns=0)
            half = len(frame) // 2

            def fragment(payload, opcode, fin):
                head = bytes([(0x80 if fin else 0x00) | opcode, 0x80 | len(payload)])
                key = b"\x01\x02\x03\x04"
                masked = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
                return head + key + masked

            client.sock.sendall(fragment(frame[:half], opcode=0x2, fin=False))
            client.sock.sendall(fragment(frame[half:], opcode=0x0, fin=True))
            assert got_one.wait(timeout=2.0)
            assert received[0] == ControlMsg(code=CONTROL_START)
            client.close()
        finally:
            server.stop()
