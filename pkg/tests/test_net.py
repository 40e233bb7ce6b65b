"""Tests for the framed wire protocol and the networked backend."""

import json
import socket
import threading

import numpy as np
import pytest

from fedkmeans.coordinator import RunConfig, run
from fedkmeans.core import BoundingBox, NodeDataset, ProblemInstance
from fedkmeans.net import (
    MAX_FRAME_BYTES,
    MESSAGE_KINDS,
    NetworkError,
    NetworkedBackend,
    decode_frame,
    default_timeout,
    encode_frame,
    serve_node,
)


def make_instance(seed=0):
    rng = np.random.default_rng(seed)
    nodes = tuple(
        NodeDataset(node_id=i, observations=rng.normal(size=(6, 2)))
        for i in range(2)
    )
    box = BoundingBox.of_data([n.observations for n in nodes])
    return ProblemInstance(name="net", K=2, n_y=2, nodes=nodes, box=box)


def start_servers(instance):
    """Serve each node on an ephemeral localhost port; returns addresses and threads."""
    addresses = []
    threads = []
    for node in instance.nodes:
        with socket.socket() as probe:
            probe.bind(("127.0.0.1", 0))
            port = probe.getsockname()[1]
        ready = threading.Event()
        thread = threading.Thread(
            target=serve_node, args=(node, ("127.0.0.1", port)),
            kwargs={"ready_event": ready}, daemon=True,
        )
        thread.start()
        assert ready.wait(5.0)
        addresses.append(("127.0.0.1", port))
        threads.append(thread)
    return addresses, threads


class TestFrames:
    def test_round_trip_all_kinds(self):
        for kind in MESSAGE_KINDS:
            message = {"kind": kind, "run_id": "r", "t": 3, "body": {"x": [1.5, -2.0]}}
            assert decode_frame(encode_frame(message)) == message

    def test_length_prefix(self):
        frame = encode_frame({"kind": "HELLO", "body": {}})
        assert int.from_bytes(frame[:4], "big") == len(frame) - 4

    def test_oversize_frame_rejected(self):
        big = {"kind": "SOLVE", "body": {"x": "a" * (MAX_FRAME_BYTES + 1)}}
        with pytest.raises(NetworkError):
            encode_frame(big)

    def test_truncated_frame_rejected(self):
        frame = encode_frame({"kind": "HELLO", "body": {}})
        with pytest.raises(NetworkError):
            decode_frame(frame[:-1])
        with pytest.raises(NetworkError):
            decode_frame(b"\x00\x00")

    def test_default_timeout_env(self, monkeypatch):
        monkeypatch.delenv("FEDKMEANS_NET_TIMEOUT_S", raising=False)
        assert default_timeout() == 60.0
        monkeypatch.setenv("FEDKMEANS_NET_TIMEOUT_S", "2.5")
        assert default_timeout() == 2.5


class TestNetworkedRun:
    def test_matches_in_process_bit_exactly(self):
        instance = make_instance(seed=3)
        config = RunConfig(algorithm="qnda", t_max=5)
        local = run(instance, config)

        addresses, _ = start_servers(instance)
        capture = []
        backend = NetworkedBackend(addresses=addresses, instance=instance,
                                   config=config, capture=capture)
        try:
            remote = run(instance, config, backend=backend)
        finally:
            backend.close()

        assert len(local.records) == len(remote.records)
        for a, b in zip(local.records, remote.records):
            assert a.numeric_key() == b.numeric_key()

        # Privacy: the schema carries only derived quantities, never the raw
        # observation table.  (A singleton cluster's centroid can coincide with
        # one observation, so the check is structural, not value-based.)
        allowed_body_keys = {
            "HELLO": {"K", "n_y", "box", "big_m", "rel_tol", "max_nodes",
                      "lloyd_starts", "seed", "node_id"},
            "SOLVE": {"c", "reference"},
            "SOLUTION": {"centroids", "lagrangian_value", "solve_time"},
            "AVERAGE": {"mean_centroids"},
            "OBJECTIVE": {"z"},
            "TERMINATE": set(),
        }
        assert capture
        for _, message in capture:
            assert set(message["body"]) <= allowed_body_keys[message["kind"]]
        assert "observations" not in json.dumps([m for _, m in capture])

    def test_dropped_connection_aborts(self):
        from fedkmeans.coordinator import RunAborted

        instance = make_instance(seed=4)
        config = RunConfig(algorithm="sg", t_max=10)
        addresses, _ = start_servers(instance)
        backend = NetworkedBackend(addresses=addresses, instance=instance, config=config)

        original = backend.solve_batch
        calls = {"n": 0}

        def failing(t, c_list, reference, node_indices):
            calls["n"] += 1
            if t >= 3:
                backend._socks[0].close()
            return original(t, c_list, reference, node_indices)

        backend.solve_batch = failing
        with pytest.raises(RunAborted) as err:
            run(instance, config, backend=backend)
        assert len(err.value.records) == 2
        backend.close()

    def test_connect_failure(self):
        instance = make_instance(seed=5)
        with pytest.raises(NetworkError):
            NetworkedBackend(addresses=[("127.0.0.1", 9), ("127.0.0.1", 9)],
                             instance=instance,
                             config=RunConfig(algorithm="sg"), timeout=0.5)
