"""Networked execution: node service and coordinator-side backend.

Wire protocol: each frame is a 4-byte big-endian length prefix followed by a
UTF-8 JSON payload (at most 16 MiB).  Within an iteration the message order is
SOLVE -> SOLUTION -> AVERAGE -> OBJECTIVE; a HELLO exchange opens a run and
TERMINATE closes it.  Raw observation coordinates never cross the wire: a node
receives only its dual coefficients and averaged centroids, and replies with
centroids, Lagrangian values, and objective values.
"""

from __future__ import annotations

import json
import os
import socket
import struct
from dataclasses import dataclass

import numpy as np

from .core import BoundingBox
from .coordinator import NodeSolveReply, compute_node_objective, perform_node_solve

__all__ = [
    "MAX_FRAME_BYTES",
    "MESSAGE_KINDS",
    "NetworkError",
    "NetworkedBackend",
    "decode_frame",
    "encode_frame",
    "default_timeout",
    "serve_node",
]

MAX_FRAME_BYTES = 16 * 1024 * 1024
MESSAGE_KINDS = ("HELLO", "SOLVE", "SOLUTION", "AVERAGE", "OBJECTIVE", "TERMINATE", "ERROR")
TIMEOUT_ENV_VAR = "FEDKMEANS_NET_TIMEOUT_S"


class NetworkError(RuntimeError):
    pass


def default_timeout() -> float:
    return float(os.environ.get(TIMEOUT_ENV_VAR, "60"))


def encode_frame(message: dict) -> bytes:
    payload = json.dumps(message).encode("utf-8")
    if len(payload) > MAX_FRAME_BYTES:
        raise NetworkError(f"frame of {len(payload)} bytes exceeds the 16 MiB limit")
    return struct.pack(">I", len(payload)) + payload


def decode_frame(data: bytes) -> dict:
    if len(data) < 4:
        raise NetworkError("truncated frame header")
    (length,) = struct.unpack(">I", data[:4])
    if length > MAX_FRAME_BYTES:
        raise NetworkError(f"declared frame length {length} exceeds the 16 MiB limit")
    if len(data) != 4 + length:
        raise NetworkError("frame length prefix does not match payload size")
    return json.loads(data[4:].decode("utf-8"))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            raise NetworkError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_message(sock: socket.socket) -> dict:
    header = _recv_exact(sock, 4)
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME_BYTES:
        raise NetworkError(f"declared frame length {length} exceeds the 16 MiB limit")
    payload = _recv_exact(sock, length)
    message = json.loads(payload.decode("utf-8"))
    if message.get("kind") not in MESSAGE_KINDS:
        raise NetworkError(f"unknown message kind {message.get('kind')!r}")
    return message


def send_message(sock: socket.socket, message: dict) -> None:
    sock.sendall(encode_frame(message))


# -------------------------------- node side ---------------------------------


def serve_node(dataset, bind_address: tuple[str, int], *, ready_event=None) -> None:
    """Serve one node's solve/objective steps until a TERMINATE message.

    ``dataset`` is a :class:`fedkmeans.core.NodeDataset`; problem metadata
    (K, box, solver settings) arrives in the HELLO message.  Requests on a
    connection are handled sequentially.
    """
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind(bind_address)
        server.listen(1)
        if ready_event is not None:
            ready_event.set()
        while True:
            conn, _ = server.accept()
            with conn:
                if _serve_connection(conn, dataset):
                    return


def _serve_connection(conn: socket.socket, dataset) -> bool:
    """Handle one coordinator connection; True once TERMINATE was received."""
    context = None
    while True:
        try:
            message = read_message(conn)
        except NetworkError:
            return False  # connection dropped; wait for a new coordinator
        kind = message["kind"]
        try:
            if kind == "HELLO":
                body = message["body"]
                context = {
                    "run_id": message.get("run_id"),
                    "K": int(body["K"]),
                    "box": BoundingBox(np.array(body["box"]["lo"]), np.array(body["box"]["hi"])),
                    "big_m": np.array(body["big_m"], dtype=float),
                    "rel_tol": float(body["rel_tol"]),
                    "max_nodes": int(body["max_nodes"]),
                    "lloyd_starts": int(body["lloyd_starts"]),
                    "seed": int(body["seed"]),
                }
                send_message(conn, {"kind": "HELLO", "run_id": context["run_id"],
                                    "body": {"node_id": dataset.node_id}})
            elif kind == "SOLVE":
                if context is None:
                    raise NetworkError("SOLVE before HELLO")
                body = message["body"]
                reference = body.get("reference")
                reply = perform_node_solve(
                    dataset.observations, context["K"], context["box"], body["c"],
                    None if reference is None else np.array(reference, dtype=float),
                    rel_tol=context["rel_tol"], max_nodes=context["max_nodes"],
                    lloyd_starts=context["lloyd_starts"], seed=context["seed"],
                    node_id=dataset.node_id, t=int(message["t"]),
                )
                send_message(conn, {
                    "kind": "SOLUTION", "run_id": context["run_id"], "t": message["t"],
                    "body": {
                        "centroids": reply.centroids.tolist(),
                        "lagrangian_value": reply.lagrangian_value,
                        "solve_time": reply.solve_time,
                    },
                })
            elif kind == "AVERAGE":
                if context is None:
                    raise NetworkError("AVERAGE before HELLO")
                z = compute_node_objective(dataset.observations, np.array(message["body"]["mean_centroids"]))
                send_message(conn, {"kind": "OBJECTIVE", "run_id": context["run_id"],
                                    "t": message["t"], "body": {"z": z}})
            elif kind == "TERMINATE":
                return True
            else:
                raise NetworkError(f"unexpected message kind {kind!r}")
        except NetworkError:
            raise
        except Exception as exc:  # solver failure: report and close
            try:
                send_message(conn, {"kind": "ERROR", "run_id": message.get("run_id"),
                                    "t": message.get("t"), "body": {"error": str(exc)}})
            finally:
                return False


# ----------------------------- coordinator side ------------------------------


@dataclass
class NetworkedBackend:
    """Coordinator-side backend speaking the framed protocol to remote nodes.

    Drop-in replacement for the in-process backend in
    :func:`fedkmeans.coordinator.run`.  ``capture``, when given a list,
    records every (direction, payload) pair for traffic inspection.
    """

    addresses: list[tuple[str, int]]
    instance: "object"
    config: "object"
    run_id: str = "run"
    timeout: float | None = None
    capture: list | None = None

    def __post_init__(self):
        if self.timeout is None:
            self.timeout = default_timeout()
        self._socks = []
        try:
            for host, port in self.addresses:
                sock = socket.create_connection((host, port), timeout=self.timeout)
                sock.settimeout(self.timeout)
                self._socks.append(sock)
            for i, sock in enumerate(self._socks):
                node = self.instance.nodes[i]
                hello = {
                    "kind": "HELLO", "run_id": self.run_id, "t": 0,
                    "body": {
                        "K": self.instance.K,
                        "n_y": self.instance.n_y,
                        "box": {"lo": self.instance.box.lo.tolist(), "hi": self.instance.box.hi.tolist()},
                        "big_m": np.asarray(self.instance.big_m[node.node_id]).tolist(),
                        "rel_tol": self.config.rel_tol,
                        "max_nodes": self.config.max_nodes,
                        "lloyd_starts": self.config.lloyd_starts,
                        "seed": self.config.seed,
                    },
                }
                reply = self._exchange(i, hello)
                if reply["kind"] != "HELLO":
                    raise NetworkError(f"node {i}: unexpected HELLO reply {reply['kind']}")
        except OSError as exc:
            self.close()
            raise NetworkError(f"connecting to nodes failed: {exc}") from exc

    def _send(self, i: int, message: dict) -> None:
        if self.capture is not None:
            self.capture.append(("send", message))
        try:
            send_message(self._socks[i], message)
        except OSError as exc:
            raise NetworkError(f"node {i}: send failed: {exc}") from exc

    def _recv(self, i: int) -> dict:
        try:
            message = read_message(self._socks[i])
        except (OSError, socket.timeout) as exc:
            raise NetworkError(f"node {i}: receive failed or timed out: {exc}") from exc
        if self.capture is not None:
            self.capture.append(("recv", message))
        if message["kind"] == "ERROR":
            raise NetworkError(f"node {i} reported: {message['body'].get('error')}")
        return message

    def _exchange(self, i: int, message: dict) -> dict:
        self._send(i, message)
        return self._recv(i)

    def solve_batch(self, t, c_list, reference, node_indices) -> list[NodeSolveReply]:
        ref = None if reference is None else np.asarray(reference).tolist()
        for i in node_indices:
            self._send(i, {"kind": "SOLVE", "run_id": self.run_id, "t": t,
                           "body": {"c": np.asarray(c_list[i]).tolist(), "reference": ref}})
        replies = []
        for i in node_indices:  # gather preserves node-index order
            message = self._recv(i)
            if message["kind"] != "SOLUTION":
                raise NetworkError(f"node {i}: expected SOLUTION, got {message['kind']}")
            body = message["body"]
            replies.append(NodeSolveReply(
                centroids=np.array(body["centroids"], dtype=float),
                lagrangian_value=float(body["lagrangian_value"]),
                solve_time=float(body["solve_time"]),
            ))
        return replies

    def objective_batch(self, t, mean_centroids) -> list[float]:
        payload = {"kind": "AVERAGE", "run_id": self.run_id, "t": t,
                   "body": {"mean_centroids": np.asarray(mean_centroids).tolist()}}
        for i in range(len(self._socks)):
            self._send(i, payload)
        zs = []
        for i in range(len(self._socks)):
            message = self._recv(i)
            if message["kind"] != "OBJECTIVE":
                raise NetworkError(f"node {i}: expected OBJECTIVE, got {message['kind']}")
            zs.append(float(message["body"]["z"]))
        return zs

    def close(self):
        for i, sock in enumerate(self._socks):
            try:
                send_message(sock, {"kind": "TERMINATE", "run_id": self.run_id, "t": -1, "body": {}})
            except OSError:
                pass
            try:
                sock.close()
            except OSError:
                pass
        self._socks = []
