import queue
import socket

import pytest

import codec
from errors import BindError, DecodeError, HandshakeTimeout, RuntimeFailure
from ports import FIRST_PORT, LAST_PORT, PORT_BLOCK, block_is_free, next_base_port
from timekeeper import Deadline
from transport import Delivery, QueueOutbound, TcpEndpoint, TcpOutbound, recv_line

ADDR = "127.0.0.1"

def drain(inbox: "queue.Queue", timeout: "float" = 10.0) -> "list[Delivery]":
    """Deliveries up to and including the first end of stream or error."""
    out = []
    while True:
        d = inbox.get(timeout=timeout)
        out.append(d)
        if d.eos or d.error is not None:
            return out

def values_of(deliveries) -> "list":
    return [v for d in deliveries for v in d.values]

def test_queue_outbound_batches():
    inbox = queue.Queue()
    out = QueueOutbound(inbox, 3, batch=2)
    out.write(1)
    assert inbox.empty()
    out.write((2, "x"))
    assert inbox.get_nowait() == Delivery(3, [1, (2, "x")])
    out.write(4)
    out.close()
    assert inbox.get_nowait() == Delivery(3, [4])
    assert inbox.get_nowait() == Delivery(3, [], eos=True)

def test_queue_outbound_roundtrip_rejects_unencodable():
    out = QueueOutbound(queue.Queue(), 0)
    with pytest.raises(TypeError):
        out.write(object())
    QueueOutbound(queue.Queue(), 0, roundtrip=False).write(object())

def test_tcp_channel_is_fifo(base_port):
    inbox = queue.Queue()
    endpoint = TcpEndpoint(ADDR, base_port, inbox, {0: 1})
    try:
        out = TcpOutbound(ADDR, base_port, 0, Deadline(5))
        endpoint.wait_ready(Deadline(5))
        for i in range(10_000):
            out.write(i)
        out.close()
        out.join()
        deliveries = drain(inbox)
    finally:
        endpoint.close()
    assert deliveries[-1] == Delivery(0, [], eos=True)
    assert {d.channel for d in deliveries} == {0}
    assert values_of(deliveries) == list(range(10_000))

def test_tcp_channels_are_independent(base_port):
    inbox = queue.Queue()
    endpoint = TcpEndpoint(ADDR, base_port, inbox, {0: 1, 1: 2})
    try:
        outs = [TcpOutbound(ADDR, base_port, c, Deadline(5)) for c in (0, 1, 1)]
        endpoint.wait_ready(Deadline(5))
        for n, out in enumerate(outs):
            out.write(("from", n))
            out.close()
            out.join()
        got = [drain(inbox) for _ in outs]
    finally:
        endpoint.close()
    assert sorted(v for ds in got for v in values_of(ds)) == [("from", 0), ("from", 1), ("from", 2)]
    assert sorted(ds[-1].channel for ds in got) == [0, 1, 1]

def test_bad_handshake_is_dropped(base_port):
    inbox = queue.Queue()
    endpoint = TcpEndpoint(ADDR, base_port, inbox, {0: 1})
    try:
        for line in (b"HELLO 0\n", b"CHANNEL x\n", b"CHANNEL 7\n"):
            with socket.create_connection((ADDR, base_port)) as s:
                s.sendall(line)
        with pytest.raises(HandshakeTimeout) as e:
            endpoint.wait_ready(Deadline(0.5))
        assert e.value.channel == 0
        assert inbox.empty()

        out = TcpOutbound(ADDR, base_port, 0, Deadline(5))
        endpoint.wait_ready(Deadline(5))
        out.close()
        out.join()
        assert drain(inbox) == [Delivery(0, [], eos=True)]
    finally:
        endpoint.close()

def test_wait_ready_times_out(base_port):
    endpoint = TcpEndpoint(ADDR, base_port, queue.Queue(), {2: 1})
    try:
        with pytest.raises(HandshakeTimeout):
            endpoint.wait_ready(Deadline(0.2))
    finally:
        endpoint.close()

def test_nothing_expected_is_ready(base_port):
    endpoint = TcpEndpoint(ADDR, base_port, queue.Queue(), {})
    try:
        endpoint.wait_ready(Deadline(0))
    finally:
        endpoint.close()

def test_port_in_use(base_port):
    first = TcpEndpoint(ADDR, base_port, queue.Queue(), {})
    try:
        with pytest.raises(BindError) as e:
            TcpEndpoint(ADDR, base_port, queue.Queue(), {})
        assert e.value.port == base_port
    finally:
        first.close()

def test_connect_gives_up(base_port):
    with pytest.raises(HandshakeTimeout) as e:
        TcpOutbound(ADDR, base_port + 1, 4, Deadline(0.3))
    assert e.value.channel == 4
    assert e.value.peer == f"{ADDR}:{base_port + 1}"

def test_early_close_is_an_error(base_port):
    inbox = queue.Queue()
    endpoint = TcpEndpoint(ADDR, base_port, inbox, {0: 1})
    try:
        with socket.create_connection((ADDR, base_port)) as s:
            s.sendall(b"CHANNEL 0\n" + codec.frame(codec.encode(1)))
        deliveries = drain(inbox)
    finally:
        endpoint.close()
    assert values_of(deliveries) == [1]
    assert isinstance(deliveries[-1].error, RuntimeFailure)

def test_garbage_frame_is_an_error(base_port):
    inbox = queue.Queue()
    endpoint = TcpEndpoint(ADDR, base_port, inbox, {0: 1})
    try:
        with socket.create_connection((ADDR, base_port)) as s:
            s.sendall(b"CHANNEL 0\n" + codec.frame(b"Q"))
            assert isinstance(drain(inbox)[-1].error, DecodeError)
    finally:
        endpoint.close()

def test_recv_line_stops_at_newline():
    a, b = socket.socketpair()
    with a, b:
        a.sendall(b"CHANNEL 12\nrest")
        assert recv_line(b, 64) == b"CHANNEL 12"
        assert b.recv(4) == b"rest"

def test_recv_line_limits():
    a, b = socket.socketpair()
    with a, b:
        a.sendall(b"x" * 10)
        with pytest.raises(DecodeError):
            recv_line(b, 5)
    a, b = socket.socketpair()
    with b:
        a.sendall(b"abc")
        a.close()
        with pytest.raises(DecodeError):
            recv_line(b, 64)

def test_port_blocks_stay_below_ephemeral_range():
    ports = [next_base_port() for _ in range(5)]
    assert len(set(ports)) == 5
    assert all(FIRST_PORT <= p and p + PORT_BLOCK <= LAST_PORT for p in ports)

def test_block_with_a_listener_is_busy(base_port):
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.bind((ADDR, base_port + 3))
    sock.listen()
    try:
        assert not block_is_free(base_port)
    finally:
        sock.close()
    assert block_is_free(base_port)
