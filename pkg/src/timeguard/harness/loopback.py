"""Smoke run over real UDP sockets on 127.0.0.1.

Time stays virtual (the CC clock advances one heartbeat period per round),
but every datagram crosses the OS network stack with the same wire bytes the
simulator uses. Not part of any metric.
"""

from __future__ import annotations

import random
import socket
from dataclasses import dataclass

from ..agent import ActionKind, agent_on_challenge, new_agent
from ..controller import CheckConfig, CloudController, SweepKind
from ..core_time import clock_read
from ..protocol import (
    DEFAULT_CIPHER,
    AgentKey,
    Direction,
    NodeRole,
    decode_heartbeat,
    derive_nonce,
    encode_heartbeat,
)

MAX_DATAGRAM = 2048


@dataclass
class LoopbackResult:
    rounds: int
    downs_sent: int
    ups_received: int
    verdicts: int


def run_loopback(minutes: int = 1, agents: int = 4, seed: int = 0, timeout_s: float = 2.0,
                 check: CheckConfig | None = None) -> LoopbackResult:
    """One host plus ``agents - 1`` guests exchanging heartbeats over UDP."""
    if agents < 1:
        raise ValueError("need at least one agent")
    check = check or CheckConfig()
    cc = CloudController(check, rng=random.Random(f"{seed}:cc"))
    cipher = DEFAULT_CIPHER
    host = 1
    states = {}
    for node in range(1, agents + 1):
        role = NodeRole.HOST if node == host else NodeRole.GUEST
        key = AgentKey.derive(node, seed)
        states[node] = new_agent(node, role, key, host=None if node == host else host)
        cc.register_node(node, key, role, 0, host=None if node == host else host)

    socks: dict[int, socket.socket] = {}
    try:
        for node in [0, *states]:
            s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            s.bind(("127.0.0.1", 0))
            s.settimeout(timeout_s)
            socks[node] = s
        addr = {node: s.getsockname() for node, s in socks.items()}
        rounds = max(1, minutes * 60_000 // check.hb_period_ms)
        downs = ups = 0
        for r in range(rounds):
            now = r * check.hb_period_ms
            for node, down in cc.cc_tick(now):
                data = cipher.seal_bytes(states[node].key, derive_nonce(Direction.DOWN, down.ordinal),
                                         encode_heartbeat(down))
                socks[0].sendto(data, addr[node])
                downs += 1
            for node in states:
                data, _ = socks[node].recvfrom(MAX_DATAGRAM)
                msg = decode_heartbeat(cipher.open_bytes(states[node].key, data))
                st = states[node]
                if st.role is NodeRole.GUEST:
                    peers = {host: clock_read(states[host].clock, now)}
                else:
                    peers = {g: clock_read(states[g].clock, now) for g in states if g != host}
                st, action = agent_on_challenge(st, msg, now, peers)
                states[node] = st
                if action.kind is ActionKind.SEND_UP:
                    up = cipher.seal_bytes(st.key, derive_nonce(Direction.UP, action.msg.ordinal),
                                           encode_heartbeat(action.msg))
                    socks[node].sendto(up, addr[0])
            for _ in states:
                data, _ = socks[0].recvfrom(MAX_DATAGRAM)
                cc.on_heartbeat(data, now + 1)
                ups += 1
            for kind in SweepKind:
                cc.sweep(now + 1, kind)
        cc.flush(rounds * check.hb_period_ms)
        return LoopbackResult(rounds, downs, ups, len(cc.published))
    finally:
        for s in socks.values():
            s.close()
