"""Networked mode: the server and clients run as separate processes over TCP.

Clients receive the experiment configuration from the server and rebuild
their own shard from it, so raw data never crosses the wire.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import socket
import struct
import threading

from .errors import ProtocolError
from .experiment import ExperimentConfig, RunSummary, execute_run, prepare_run
from .federation import ClientUpdate
from .models import ModelWeights
from .transport import (
    Message,
    MsgType,
    Session,
    decode_update,
    decode_weights,
    encode_update,
    encode_weights,
    frame_message,
    read_message,
)

log = logging.getLogger(__name__)

HELLO = struct.Struct("<I")


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


class Connection:
    """One framed, order-checked byte stream."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.reader = sock.makefile("rb")
        self.session = Session()

    def send(self, msg_type, payload: bytes = b"") -> None:
        self.session.advance(msg_type)
        self.sock.sendall(frame_message(msg_type, payload))

    def recv(self) -> Message:
        msg = read_message(self.reader)
        try:
            self.session.advance(msg.msg_type)
        except ProtocolError:
            self.fail("out-of-order message")
            raise
        if msg.msg_type is MsgType.ERROR:
            raise ProtocolError(f"peer reported error: {msg.payload.decode('utf-8', 'replace')}")
        return msg

    def fail(self, reason: str) -> None:
        """Best-effort ERROR frame, then teardown."""
        try:
            self.sock.sendall(frame_message(MsgType.ERROR, reason.encode("utf-8")))
        except OSError:
            pass
        self.close()

    def close(self) -> None:
        try:
            self.reader.close()
            self.sock.close()
        except OSError:
            pass


class RemoteClient:
    """Server-side proxy with the same ``fit`` interface as an in-process client."""

    def __init__(self, client_id: int, conn: Connection, arch_name: str):
        self.client_id = client_id
        self.conn = conn
        self.arch_name = arch_name

    def fit(self, global_weights: ModelWeights, round_index: int) -> ClientUpdate:
        self.conn.send(MsgType.GLOBAL_WEIGHTS, encode_weights(global_weights))
        msg = self.conn.recv()
        if msg.msg_type is not MsgType.CLIENT_UPDATE:
            raise ProtocolError(f"client {self.client_id} sent {msg.msg_type.name} instead of an update")
        return decode_update(msg.payload, self.client_id, self.arch_name)


def _accept_clients(server: socket.socket, config: ExperimentConfig, run: int) -> list[RemoteClient]:
    clients: dict[int, RemoteClient] = {}
    cfg_payload = json.dumps({"config": config.to_dict(), "run": run}).encode("utf-8")
    while len(clients) < config.nbr_clients:
        sock, addr = server.accept()
        conn = Connection(sock)
        msg = conn.recv()
        if len(msg.payload) != HELLO.size:
            conn.fail("HELLO payload must be a 4-byte client id")
            continue
        (cid,) = HELLO.unpack(msg.payload)
        if cid >= config.nbr_clients or cid in clients:
            conn.fail(f"client id {cid} is out of range or already taken")
            continue
        conn.send(MsgType.CONFIG, cfg_payload)
        clients[cid] = RemoteClient(cid, conn, config.model)
        log.info("client %d joined from %s:%d", cid, *addr[:2])
    return [clients[k] for k in sorted(clients)]


def serve(config: ExperimentConfig, listen: str = "127.0.0.1:0", run: int = 0, ready=None,
          on_round=None) -> RunSummary:
    """Run one federated run with ``config.nbr_clients`` remote clients.

    ``ready(port)`` is called once the socket listens (useful with port 0);
    ``on_round(report)`` after each round's report has been broadcast.
    """
    host, port = parse_address(listen)
    with socket.create_server((host, port)) as server:
        if ready:
            ready(server.getsockname()[1])
        clients = _accept_clients(server, config, run)
        try:
            def broadcast(report):
                payload = json.dumps(report.to_dict()).encode("utf-8")
                for c in clients:
                    c.conn.send(MsgType.EVAL_REPORT, payload)
                if on_round:
                    on_round(report)

            # one worker per connection so remote clients train concurrently
            net_config = dataclasses.replace(config, workers=len(clients))
            summary = execute_run(net_config, run, clients=clients, on_round=broadcast)
            for c in clients:
                c.conn.send(MsgType.SHUTDOWN)
        except Exception as exc:
            for c in clients:
                c.conn.fail(str(exc))
            raise
        finally:
            for c in clients:
                c.conn.close()
    return summary


def join(connect: str, client_id: int) -> int:
    """Participate as ``client_id`` until the server shuts the session down.

    Returns the number of rounds trained.
    """
    host, port = parse_address(connect)
    conn = Connection(socket.create_connection((host, port)))
    rounds = 0
    try:
        conn.send(MsgType.HELLO, HELLO.pack(client_id))
        msg = conn.recv()
        setup = json.loads(msg.payload)
        config = ExperimentConfig.from_dict(setup["config"])
        ctx = prepare_run(config, int(setup["run"]))
        client = ctx.make_client(client_id)
        while True:
            msg = conn.recv()
            if msg.msg_type is MsgType.SHUTDOWN:
                break
            if msg.msg_type is MsgType.EVAL_REPORT:
                report = json.loads(msg.payload)
                log.info("round %d: global accuracy %.4f", report["round"], report["test_accuracy"])
                continue
            weights = decode_weights(msg.payload, config.model)
            update = client.fit(weights, rounds)
            conn.send(MsgType.CLIENT_UPDATE, encode_update(update))
            rounds += 1
    except Exception as exc:
        conn.fail(str(exc))
        raise
    finally:
        conn.close()
    return rounds


def run_local_network(config: ExperimentConfig, run: int = 0, on_round=None) -> RunSummary:
    """Server plus ``nbr_clients`` client threads on localhost; for testing."""
    port_ready = threading.Event()
    port = []

    def ready(p):
        port.append(p)
        port_ready.set()

    result: dict = {}

    def server_main():
        try:
            result["summary"] = serve(config, "127.0.0.1:0", run, ready, on_round)
        except BaseException as exc:  # surfaced below
            result["error"] = exc
            port_ready.set()

    server_thread = threading.Thread(target=server_main)
    server_thread.start()
    port_ready.wait()
    if "error" in result:
        raise result["error"]
    errors = []

    def client_main(k):
        try:
            join(f"127.0.0.1:{port[0]}", k)
        except BaseException as exc:
            errors.append(exc)

    threads = [threading.Thread(target=client_main, args=(k,)) for k in range(config.nbr_clients)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    server_thread.join()
    if "error" in result:
        raise result["error"]
    if errors:
        raise errors[0]
    return result["summary"]
