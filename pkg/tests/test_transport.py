import socket
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dfd.estimators import Evaluation
from dfd.transport import (EncodeError, EsPairMsg, EvalMsg, FrameDecoder, Hello, LoopbackChannel,
                           NeedMoreBytes, PolicyMsg, ProtocolError, Shutdown, SocketConnection,
                           decode, decode_frame, encode)
from wire_samples import random_chunks, random_message


def test_eval_msg_documented_bytes():
    data = encode(EvalMsg(1, 0.0, 1, 0))
    assert data == bytes([0x01, 1, 0, 0, 0, 0, 0, 0, 0]) + bytes(8) + bytes([1, 0, 0, 0]) + bytes(4)
    assert len(data) == 25


def test_eval_msg_float_little_endian():
    data = encode(EvalMsg(0, 1.5, 0, 0))
    assert data[9:17] == struct.pack("<d", 1.5)


def test_policy_msg_size():
    data = encode(PolicyMsg(7, np.array([1.0, 2.0, 3.0])))
    assert len(data) == 1 + 4 + 4 + 24
    assert data[:9] == bytes([0x02, 7, 0, 0, 0, 3, 0, 0, 0])


def test_small_frames():
    assert encode(Shutdown()) == b"\x04"
    assert encode(Hello(258)) == b"\x03\x02\x01\x00\x00"
    assert len(encode(EsPairMsg(1, 0.0, 0.0, 0, 0))) == 33


def test_round_trip_random():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        m = random_message(rng)
        assert decode(encode(m)) == m


@given(st.integers(0, 2**64 - 1), st.floats(allow_nan=False), st.integers(0, 2**32 - 1),
       st.integers(0, 2**32 - 1))
def test_eval_round_trip_property(seed, reward, length, origin):
    m = EvalMsg(seed, reward, length, origin)
    assert decode(encode(m)) == m


def test_eval_frame_size_independent_of_dim():
    sizes = {len(encode(EvalMsg(s, 0.5, 10, 3))) for s in (0, 2**64 - 1)}
    assert sizes == {25}


def test_evaluation_conversion():
    ev = Evaluation(5, 1.25, 30, 2)
    assert EvalMsg.from_evaluation(ev).to_evaluation() == ev


def test_errors():
    with pytest.raises(NeedMoreBytes):
        decode(b"")
    with pytest.raises(NeedMoreBytes):
        decode(encode(EvalMsg(1, 0.0, 1, 0))[:-1])
    with pytest.raises(NeedMoreBytes):
        decode(encode(PolicyMsg(0, np.ones(4)))[:-3])
    with pytest.raises(ProtocolError):
        decode(b"\xff")
    with pytest.raises(ProtocolError):
        decode(encode(Shutdown()) + b"\x00")
    with pytest.raises(EncodeError):
        encode(EvalMsg(-1, 0.0, 0, 0))
    with pytest.raises(EncodeError):
        encode(EvalMsg(0, 0.0, 2**32, 0))
    with pytest.raises(EncodeError):
        encode(PolicyMsg(0, np.ones((2, 2))))
    with pytest.raises(EncodeError):
        encode("hello")


def test_decode_frame_offsets():
    data = encode(Hello(1)) + encode(Shutdown())
    m, end = decode_frame(data)
    assert m == Hello(1) and end == 5
    assert decode_frame(data, end) == (Shutdown(), 6)


def test_chunked_reassembly():
    rng = np.random.default_rng(1)
    msgs = [random_message(rng) for _ in range(50)]
    stream = b"".join(encode(m) for m in msgs)
    for _ in range(20):
        dec = FrameDecoder()
        out = []
        for chunk in random_chunks(stream, rng):
            out.extend(dec.feed(chunk))
        assert out == msgs
        assert dec.pending == 0


def test_byte_at_a_time():
    msgs = [EvalMsg(3, -1.0, 2, 1), PolicyMsg(4, np.arange(3.0)), Shutdown()]
    stream = b"".join(encode(m) for m in msgs)
    dec = FrameDecoder()
    out = [m for i in range(len(stream)) for m in dec.feed(stream[i:i + 1])]
    assert out == msgs


def test_decoder_bad_tag_raises():
    with pytest.raises(ProtocolError):
        FrameDecoder().feed(encode(Hello(1)) + b"\x09")


def test_loopback_channel():
    ch = LoopbackChannel()
    ch.send(EvalMsg(1, 2.0, 3, 4))
    ch.send(Shutdown())
    assert ch.receive() == [EvalMsg(1, 2.0, 3, 4), Shutdown()]
    assert ch.bytes_sent == 26
    assert ch.receive() == []


def test_policy_msg_equality_is_bitwise():
    assert PolicyMsg(1, np.array([0.0])) != PolicyMsg(1, np.array([-0.0]))
    assert PolicyMsg(1, np.array([1.0])) == PolicyMsg(1, np.array([1.0]))


def test_socket_connection_pair():
    a, b = socket.socketpair()
    ca, cb = SocketConnection(a), SocketConnection(b)
    try:
        msgs = [Hello(2), PolicyMsg(1, np.linspace(0, 1, 1000)), EvalMsg(9, 0.5, 10, 1)]
        for m in msgs:
            ca.send(m)
        assert [cb.recv(timeout=5) for _ in msgs] == msgs
        assert cb.recv(timeout=0.05) is None
        ca.close()
        with pytest.raises(ConnectionError):
            cb.recv(timeout=5)
    finally:
        cb.close()
