"""Binary agent checkpoints.

Layout: 4-byte magic ``HSAC``, little-endian uint32 version, uint64 header
length, a JSON header (utf-8) describing dimensions, hyperparameters,
counters, and an ordered array manifest, then the arrays themselves as
little-endian float64, concatenated in manifest order. Round-trips are
bit-exact, optimizer state included.
"""

from __future__ import annotations

import json
import struct
from typing import Tuple

import numpy as np

from .sac import SacAgent, SacConfig

MAGIC = b"HSAC"
VERSION = 1


class CheckpointError(RuntimeError):
    """Corrupt, truncated, or incompatible checkpoint data."""


def _array_table(agent: SacAgent):
    return [
        ("v_net", agent.v_net.flat()),
        ("v_target", agent.v_target.flat()),
        ("q1", agent.q1.flat()),
        ("q2", agent.q2.flat()),
        ("policy", agent.policy.flat()),
        ("opt_v", agent.opt_v.flat_state()),
        ("opt_q1", agent.opt_q1.flat_state()),
        ("opt_q2", agent.opt_q2.flat_state()),
        ("opt_pi", agent.opt_pi.flat_state()),
        ("input_scale", agent.input_scale.astype(np.float64)),
        (
            "alpha_state",
            np.array(
                [
                    agent.log_alpha,
                    float(agent.opt_alpha.t),
                    agent.opt_alpha.m,
                    agent.opt_alpha.v,
                ]
            ),
        ),
    ]


def save_agent(agent: SacAgent) -> bytes:
    cfg = agent.config
    arrays = _array_table(agent)
    header = {
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "span": list(agent.span),
        "config": {
            "hidden": list(cfg.hidden),
            "lr": cfg.lr,
            "gamma": cfg.gamma,
            "tau": cfg.tau,
            "batch_size": cfg.batch_size,
            "alpha_init": cfg.alpha_init,
            "auto_alpha": cfg.auto_alpha,
            "target_entropy": cfg.target_entropy,
            "warmup_decisions": cfg.warmup_decisions,
            "memory_capacity": cfg.memory_capacity,
        },
        "counters": {"decisions": agent.decisions, "updates": agent.updates},
        "arrays": [{"name": name, "size": int(arr.size)} for name, arr in arrays],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<Q", len(head))
    blob += head
    for _, arr in arrays:
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return bytes(blob)


def load_agent(data: bytes) -> SacAgent:
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError("not an agent checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CheckpointError("unsupported checkpoint version %d" % version)
    (head_len,) = struct.unpack_from("<Q", data, 8)
    if len(data) < 16 + head_len:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[16 : 16 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError("unreadable checkpoint header: %s" % exc)

    cfg_raw = header["config"]
    cfg = SacConfig(
        hidden=tuple(cfg_raw["hidden"]),
        lr=cfg_raw["lr"],
        gamma=cfg_raw["gamma"],
        tau=cfg_raw["tau"],
        batch_size=cfg_raw["batch_size"],
        alpha_init=cfg_raw["alpha_init"],
        auto_alpha=cfg_raw["auto_alpha"],
        target_entropy=cfg_raw["target_entropy"],
        warmup_decisions=cfg_raw["warmup_decisions"],
        memory_capacity=cfg_raw["memory_capacity"],
    )
    agent = SacAgent(
        header["state_dim"], header["action_dim"], tuple(header["span"]), cfg, seed=0
    )
    offset = 16 + head_len
    values = {}
    for entry in header["arrays"]:
        size = entry["size"]
        nbytes = size * 8
        if len(data) < offset + nbytes:
            raise CheckpointError("truncated checkpoint payload at %r" % entry["name"])
        values[entry["name"]] = np.frombuffer(data, dtype="<f8", count=size, offset=offset).copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")

    try:
        agent.v_net.set_flat(values["v_net"])
        agent.v_target.set_flat(values["v_target"])
        agent.q1.set_flat(values["q1"])
        agent.q2.set_flat(values["q2"])
        agent.policy.set_flat(values["policy"])
        agent.opt_v.set_flat_state(values["opt_v"])
        agent.opt_q1.set_flat_state(values["opt_q1"])
        agent.opt_q2.set_flat_state(values["opt_q2"])
        agent.opt_pi.set_flat_state(values["opt_pi"])
        agent.input_scale = values["input_scale"].copy()
    except (KeyError, ValueError) as exc:
        raise CheckpointError("checkpoint arrays inconsistent: %s" % exc)
    alpha_state = values["alpha_state"]
    agent.log_alpha = float(alpha_state[0])
    agent.opt_alpha.t = int(alpha_state[1])
    agent.opt_alpha.m = float(alpha_state[2])
    agent.opt_alpha.v = float(alpha_state[3])
    agent.decisions = int(header["counters"]["decisions"])
    agent.updates = int(header["counters"]["updates"])
    return agent


def describe(data: bytes) -> dict:
    """Header of a checkpoint without loading the arrays."""
    if len(data) < 16 or data[:4] != MAGIC:
        raise CheckpointError("not an agent checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    (head_len,) = struct.unpack_from("<Q", data, 8)
    if len(data) < 16 + head_len:
        raise CheckpointError("truncated checkpoint header")
    header = json.loads(data[16 : 16 + head_len].decode("utf-8"))
    header["version"] = version
    return header
