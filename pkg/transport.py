"""
Channels between location instances.

Every instance owns one inbox. Senders push Delivery batches into it, either
directly (oracle, in-memory) or through TCP connections whose reader threads
decode frames into it. Delivery within one channel connection is FIFO.

TCP wire protocol, per channel and per (sender, receiver) instance pair:
    "CHANNEL <id>\\n" handshake line, sent by the connecting (sending) side
    frames as defined in codec.py, the last one is the zero length EOS frame
"""

from typing import NamedTuple
import queue
import socket
import threading

import codec
from errors import BindError, DecodeError, HandshakeTimeout, RuntimeFailure
import log
import timekeeper as time

# Outbound frames per batch handed to a writer thread.
FRAME_BATCH = 256
# Frames buffered per outbound connection before write() blocks.
QUEUE_SIZE = 1024
RECV_SIZE = 65536
HANDSHAKE_PREFIX = b"CHANNEL "
MAX_HANDSHAKE = 64
# A sender has this long to finish its handshake line once connected.
HANDSHAKE_READ_TIME = 5.0
# How often blocking loops look at their stop flag.
POLL_TIME = 0.05

class Delivery(NamedTuple):
    channel: "int"
    values: "list"
    eos: "bool" = False
    error: "Exception | None" = None

class QueueOutbound(object):
    """
    Sends straight into another instance's inbox.
    With roundtrip=True every value goes through the codec, like on the wire.
    """
    def __init__(self, inbox: "queue.Queue", channel: "int", batch: "int" = FRAME_BATCH,
            roundtrip: "bool" = True):
        self.inbox = inbox
        self.channel = channel
        self.batch = batch
        self.roundtrip = roundtrip
        self.pending = []

    def write(self, value):
        if self.roundtrip:
            value = codec.decode(codec.encode(value))
        self.pending.append(value)
        if len(self.pending) >= self.batch:
            self.flush()

    def flush(self):
        if self.pending:
            self.inbox.put(Delivery(self.channel, self.pending))
            self.pending = []

    def close(self):
        self.flush()
        self.inbox.put(Delivery(self.channel, [], eos=True))

    def join(self):
        pass

class TcpOutbound(object):
    """One connection carrying one channel to one receiving instance."""
    def __init__(self, addr: "str", port: "int", channel: "int", deadline: "time.Deadline"):
        self.addr = addr
        self.port = port
        self.channel = channel
        self.sock = _connect(addr, port, channel, deadline)
        self.sock.sendall(HANDSHAKE_PREFIX + f"{channel}\n".encode())
        self.queue: "queue.Queue[list[bytes] | None]" = queue.Queue(max(1, QUEUE_SIZE // FRAME_BATCH))
        self.pending: "list[bytes]" = []
        self.error: "Exception | None" = None
        self.thread = threading.Thread(target=self._writer, daemon=True,
            name=f"send-{channel}-{port}")
        self.thread.start()

    def write(self, value):
        self.pending.append(codec.frame(codec.encode(value)))
        if len(self.pending) >= FRAME_BATCH:
            self.flush()

    def flush(self):
        if self.pending:
            batch, self.pending = self.pending, []
            self._put(batch)

    def close(self):
        self.pending.append(codec.EOS_FRAME)
        self.flush()
        self._put(None)

    def _put(self, batch):
        """Blocking enqueue that gives up once the writer has failed."""
        while True:
            if self.error is not None:
                raise RuntimeFailure(f"channel {self.channel} to {self.addr}:{self.port}: {self.error}")
            try:
                self.queue.put(batch, timeout=POLL_TIME)
                return
            except queue.Full:
                continue

    def join(self):
        self.thread.join()
        if self.error is not None:
            raise RuntimeFailure(f"channel {self.channel} to {self.addr}:{self.port}: {self.error}")

    def abort(self):
        try:
            self.sock.close()
        except OSError:
            pass

    def _writer(self):
        try:
            while True:
                batch = self.queue.get()
                if batch is None:
                    break
                self.sock.sendall(b"".join(batch))
        except OSError as e:
            self.error = e
        finally:
            self.sock.close()

def _connect(addr: "str", port: "int", channel: "int", deadline: "time.Deadline") -> "socket.socket":
    """Connect, retrying while the peer is not listening yet."""
    while True:
        try:
            sock = socket.create_connection((addr, port), timeout=max(deadline.remaining(), POLL_TIME))
            sock.settimeout(None)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            return sock
        except OSError:
            if deadline.expired():
                raise HandshakeTimeout(f"channel {channel}: nobody listening on {addr}:{port} "
                    f"after {deadline.secs}s", channel, f"{addr}:{port}") from None
            time.sleep(POLL_TIME)

class TcpEndpoint(object):
    """
    The listening side of one instance.
    Accepts one connection per expected (channel, sender) and feeds the inbox.
    """
    def __init__(self, addr: "str", port: "int", inbox: "queue.Queue", expected: "dict[int, int]"):
        self.addr = addr
        self.port = port
        self.inbox = inbox
        # channel -> number of sending instances still to connect
        self.expected = dict(expected)
        self.connected = {c: 0 for c in expected}
        self.ready = threading.Condition()
        self.stopped = threading.Event()
        self.readers: "list[threading.Thread]" = []
        self.conns: "list[socket.socket]" = []

        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind((addr, port))
        except OSError as e:
            self.sock.close()
            raise BindError(f"cannot listen on {addr}:{port}: {e.strerror}", addr, port) from None
        self.sock.listen(64)
        self.sock.settimeout(POLL_TIME)
        self.thread = threading.Thread(target=self._accept, daemon=True, name=f"accept-{port}")
        self.thread.start()

    def all_connected(self) -> "bool":
        return all(self.connected[c] >= n for c, n in self.expected.items())

    def wait_ready(self, deadline: "time.Deadline"):
        """Block until every expected sender has completed its handshake."""
        with self.ready:
            while not self.all_connected():
                if deadline.expired():
                    missing = sorted(c for c, n in self.expected.items() if self.connected[c] < n)
                    raise HandshakeTimeout(f"{self.addr}:{self.port}: no handshake on channels "
                        f"{missing} after {deadline.secs}s", missing[0])
                self.ready.wait(POLL_TIME)

    def close(self):
        self.stopped.set()
        self.thread.join()
        for conn in self.conns:
            try:
                conn.close()
            except OSError:
                pass
        self.sock.close()

    def _accept(self):
        while not self.stopped.is_set():
            try:
                conn, _ = self.sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            self.conns.append(conn)
            t = threading.Thread(target=self._serve, args=(conn,), daemon=True,
                name=f"recv-{self.port}-{len(self.readers)}")
            self.readers.append(t)
            t.start()

    def _serve(self, conn: "socket.socket"):
        try:
            channel = self._handshake(conn)
        except (OSError, DecodeError) as e:
            log.debug("Dropped connection on", (str(self.port), "BLUE"), f"({e})")
            conn.close()
            return
        with self.ready:
            self.connected[channel] += 1
            self.ready.notify_all()
        self._read(conn, channel)

    def _handshake(self, conn: "socket.socket") -> "int":
        conn.settimeout(HANDSHAKE_READ_TIME)
        line = recv_line(conn, MAX_HANDSHAKE)
        conn.settimeout(None)
        if not line.startswith(HANDSHAKE_PREFIX):
            raise DecodeError(f"bad handshake {line[:MAX_HANDSHAKE]!r}")
        try:
            channel = int(line[len(HANDSHAKE_PREFIX):])
        except ValueError:
            raise DecodeError(f"bad handshake {line!r}") from None
        if channel not in self.expected:
            raise DecodeError(f"unexpected channel {channel}")
        log.debug("Accepted channel", (str(channel), "MAGENTA"), "on", (str(self.port), "BLUE"))
        return channel

    def _read(self, conn: "socket.socket", channel: "int"):
        reader = codec.FrameReader()
        try:
            while True:
                data = conn.recv(RECV_SIZE)
                if not data:
                    raise RuntimeFailure(f"channel {channel}: connection closed before end of stream")
                values = []
                for payload in reader.feed(data):
                    if not payload:
                        if values:
                            self.inbox.put(Delivery(channel, values))
                        self.inbox.put(Delivery(channel, [], eos=True))
                        return
                    values.append(codec.decode(payload))
                if values:
                    self.inbox.put(Delivery(channel, values))
        except (RuntimeFailure, DecodeError) as e:
            self.inbox.put(Delivery(channel, [], error=e))
        except OSError as e:
            if not self.stopped.is_set():
                self.inbox.put(Delivery(channel, [], error=RuntimeFailure(f"channel {channel}: {e}")))
        finally:
            conn.close()

def recv_line(sock: "socket.socket", limit: "int") -> "bytes":
    """Read up to and including a newline, one byte at a time so no frame bytes are consumed."""
    data = [b""]
    so_far = 0
    while so_far < limit:
        b = sock.recv(1)
        if not b:
            raise DecodeError("connection closed during handshake")
        data.append(b)
        so_far += 1
        if b == b"\n":
            return b"".join(data)[:-1]
    raise DecodeError("handshake line too long")
