"""UDP packet-train prober: wire format, paced sender, receiver agent.

Probe packet layout (big-endian), padded with zeros to the packet size::

    magic     4s   b"PABP"
    version   B    1
    train_id  I
    seq       I    0-based
    total     I    packets in the train
    depart_ns Q    sender monotonic clock at departure
    tau_ns    Q    nominal inter-departure gap

The receiver stamps arrivals with its own monotonic clock; only differences
of timestamps from the same clock are ever used, so no synchronization is
needed.

The control channel is a TCP connection on the same port number carrying
newline-delimited JSON requests::

    {"cmd": "start"}                           -> {"ok": true}
    {"cmd": "report", "train_id": 7, "timeout": 2.0}
        -> {"ok": true, "train_id": 7, "complete": true,
            "packets": [[seq, depart_ns, arrival_ns], ...]}
    {"cmd": "stop"}                            -> {"ok": true}
"""

from __future__ import annotations

import itertools
import json
import logging
import queue
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field

from .probing import (
    HEADER_SIZE, Measurement, ProbeConfig, ProbeError, ReceivedPacket, VoidTrainError,
    compute_output_rate, decide,
)

log = logging.getLogger(__name__)

MAGIC = b"PABP"
VERSION = 1
_HEADER = struct.Struct(">4sBIIIQQ")
assert _HEADER.size == HEADER_SIZE

# Sleep until this close to a departure, then spin.
_SPIN_NS = 200_000


@dataclass(frozen=True)
class ProbePacket:
    train_id: int
    seq: int
    total: int
    departure_ns: int
    tau_ns: int


def encode_packet(pkt: ProbePacket, size: int) -> bytes:
    if size < HEADER_SIZE:
        raise ValueError(f"packet size {size} is below the {HEADER_SIZE}-byte header")
    head = _HEADER.pack(MAGIC, VERSION, pkt.train_id, pkt.seq, pkt.total, pkt.departure_ns, pkt.tau_ns)
    return head + bytes(size - HEADER_SIZE)


def decode_packet(data: bytes) -> ProbePacket:
    if len(data) < HEADER_SIZE:
        raise ValueError("datagram shorter than the probe header")
    magic, version, train_id, seq, total, dep, tau = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError("not a probe packet")
    if version != VERSION:
        raise ValueError(f"unsupported probe version {version}")
    return ProbePacket(train_id, seq, total, dep, tau)


def parse_endpoint(text: str, default_port: int = 9000) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        return text, default_port
    return host or "0.0.0.0", int(port)


@dataclass
class SenderLog:
    train_id: int
    tau_ns: int
    departures_ns: list[int] = field(default_factory=list)

    @property
    def packets_sent(self) -> int:
        return len(self.departures_ns)


def send_train(sock: socket.socket, dest: tuple[str, int], rate: float, cfg: ProbeConfig,
               train_id: int) -> SenderLog:
    """Send one paced train of ``cfg.train_length`` packets at ``rate`` Mbps.

    Departures follow an absolute schedule ``t0 + i * tau``; a packet that
    misses its slot leaves as soon as possible and its real departure time
    is recorded (the receiver decides validity).
    """
    tau_ns = int(round(cfg.inter_packet_gap(rate) * 1e9))
    out = SenderLog(train_id, tau_ns)
    t0 = time.monotonic_ns()
    for seq in range(cfg.train_length):
        target = t0 + seq * tau_ns
        while True:
            now = time.monotonic_ns()
            wait = target - now
            if wait <= 0:
                break
            if wait > _SPIN_NS:
                time.sleep((wait - _SPIN_NS) / 1e9)
        now = time.monotonic_ns()
        pkt = ProbePacket(train_id, seq, cfg.train_length, now, tau_ns)
        try:
            sock.sendto(encode_packet(pkt, cfg.packet_size), dest)
        except OSError as exc:
            raise ProbeError(f"sending to {dest[0]}:{dest[1]} failed: {exc}") from exc
        out.departures_ns.append(now)
    return out


@dataclass
class TrainLog:
    train_id: int
    total: int
    packets: list[ReceivedPacket] = field(default_factory=list)
    complete: bool = False

    def to_dict(self) -> dict:
        return {
            "ok": True, "train_id": self.train_id, "complete": self.complete,
            "packets": [[p.seq, p.departure_ns, p.arrival_ns] for p in self.packets],
        }


class ProbeReceiver:
    """Receiver agent: a UDP collector plus a TCP control server on one port.

    The UDP thread appends packets to the train they belong to and hands a
    train to the completed-train queue once its last packet arrives. The
    control side is the single consumer of that queue.
    """

    def __init__(self, host: str = "0.0.0.0", port: int = 9000):
        self.udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.udp.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
        self.udp.bind((host, port))
        self.address = self.udp.getsockname()
        self._lock = threading.Lock()
        self._partial: dict[int, TrainLog] = {}
        self._done: queue.Queue[TrainLog] = queue.Queue()
        self._stop = threading.Event()
        receiver = self

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                for line in self.rfile:
                    try:
                        reply = receiver.handle_request(json.loads(line))
                    except (ValueError, KeyError, TypeError) as exc:
                        reply = {"ok": False, "error": str(exc)}
                    self.wfile.write(json.dumps(reply).encode() + b"\n")
                    self.wfile.flush()

        socketserver.ThreadingTCPServer.allow_reuse_address = True
        self.control = socketserver.ThreadingTCPServer((host, self.address[1]), Handler)
        self.control.daemon_threads = True
        self._threads = [
            threading.Thread(target=self._collect, name="pab-recv-udp", daemon=True),
            threading.Thread(target=self.control.serve_forever, name="pab-recv-ctl", daemon=True),
        ]

    def start(self) -> "ProbeReceiver":
        for t in self._threads:
            t.start()
        return self

    def serve_forever(self) -> None:
        self.start()
        try:
            while not self._stop.wait(0.5):
                pass
        finally:
            self.close()

    def close(self) -> None:
        self._stop.set()
        self.control.shutdown()
        self.control.server_close()
        self.udp.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    def _collect(self) -> None:
        self.udp.settimeout(0.2)
        while not self._stop.is_set():
            try:
                data, _ = self.udp.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            arrival = time.monotonic_ns()
            try:
                pkt = decode_packet(data)
            except ValueError:
                continue
            with self._lock:
                train = self._partial.setdefault(pkt.train_id, TrainLog(pkt.train_id, pkt.total))
                train.packets.append(ReceivedPacket(pkt.seq, pkt.departure_ns, arrival))
                if pkt.seq == pkt.total - 1:
                    train.complete = True
                    self._done.put(self._partial.pop(pkt.train_id))

    def reset(self) -> None:
        with self._lock:
            self._partial.clear()
            while not self._done.empty():
                self._done.get_nowait()

    def wait_train(self, train_id: int, timeout: float = 2.0) -> TrainLog:
        """Block until ``train_id`` completes; on timeout return what arrived."""
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            try:
                train = self._done.get(timeout=max(remaining, 0.0))
            except queue.Empty:
                with self._lock:
                    return self._partial.pop(train_id, TrainLog(train_id, 0))
            if train.train_id == train_id:
                return train

    def handle_request(self, req: dict) -> dict:
        cmd = req["cmd"]
        if cmd == "start":
            self.reset()
            return {"ok": True}
        if cmd == "report":
            return self.wait_train(int(req["train_id"]), float(req.get("timeout", 2.0))).to_dict()
        if cmd == "stop":
            self._stop.set()
            return {"ok": True}
        raise ValueError(f"unknown command {cmd!r}")


class ControlClient:
    def __init__(self, host: str, port: int, timeout: float = 10.0):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ProbeError(f"receiver {host}:{port} unreachable: {exc}") from exc
        self.rfile = self.sock.makefile("rb")

    def request(self, **req) -> dict:
        try:
            self.sock.sendall(json.dumps(req).encode() + b"\n")
            line = self.rfile.readline()
        except OSError as exc:
            raise ProbeError(f"control channel failed: {exc}") from exc
        if not line:
            raise ProbeError("receiver closed the control channel")
        reply = json.loads(line)
        if not reply.get("ok"):
            raise ProbeError(f"receiver error: {reply.get('error')}")
        return reply

    def close(self) -> None:
        self.rfile.close()
        self.sock.close()


class UdpProber:
    """Measures paths by sending real packet trains to receiver agents.

    ``endpoints`` maps each path id to the ``(host, port)`` of the receiver
    at the path's destination.
    """

    def __init__(self, endpoints: dict[str, tuple[str, int]], cfg: ProbeConfig | None = None,
                 report_timeout: float = 2.0):
        self.endpoints = endpoints
        self.cfg = cfg or ProbeConfig()
        self.report_timeout = report_timeout
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._controls: dict[tuple[str, int], ControlClient] = {}
        self._train_ids = itertools.count(1)

    def _control(self, dest: tuple[str, int]) -> ControlClient:
        if dest not in self._controls:
            client = ControlClient(*dest)
            client.request(cmd="start")
            self._controls[dest] = client
        return self._controls[dest]

    def run_train(self, dest: tuple[str, int], rate: float, cfg: ProbeConfig) -> tuple[float, int, int]:
        """One train: returns (output rate, valid gaps, packets sent)."""
        ctl = self._control(dest)
        train_id = next(self._train_ids)
        sent = send_train(self.sock, dest, rate, cfg, train_id)
        report = ctl.request(cmd="report", train_id=train_id, timeout=self.report_timeout)
        packets = [ReceivedPacket(*p) for p in report["packets"]]
        try:
            r, n_valid = compute_output_rate(packets, sent.tau_ns, cfg.packet_size, cfg.slack)
        except VoidTrainError as exc:
            raise _VoidWithCost(str(exc), sent.packets_sent) from None
        return r, n_valid, sent.packets_sent

    def measure(self, path: str, rate: float, cfg: ProbeConfig | None = None) -> Measurement:
        cfg = cfg or self.cfg
        if path not in self.endpoints:
            raise ProbeError(f"no receiver endpoint for path {path!r}")
        dest = self.endpoints[path]
        rates, valid, packets = [], [], 0
        for _ in range(cfg.n_trains):
            for attempt in range(2):
                try:
                    r, n_valid, n_sent = self.run_train(dest, rate, cfg)
                except _VoidWithCost as exc:
                    packets += exc.packets
                    log.info("void train on %s (attempt %d): %s", path, attempt + 1, exc)
                    continue
                packets += n_sent
                rates.append(r)
                valid.append(n_valid)
                break
        if not rates:
            raise ProbeError(f"every train on {path} was void")
        return Measurement(
            path, float(rate), decide(rate, rates, cfg.epsilon), tuple(rates), tuple(valid),
            packets * cfg.packet_size, time.time(),
        )

    def close(self) -> None:
        for c in self._controls.values():
            try:
                c.request(cmd="start")
            except ProbeError:
                pass
            c.close()
        self.sock.close()


class _VoidWithCost(VoidTrainError):
    def __init__(self, msg: str, packets: int):
        super().__init__(msg)
        self.packets = packets
