"""Writes the hand-built KOOPDS1 fixtures with a plain struct-based writer."""

import pathlib
import struct

HERE = pathlib.Path(__file__).parent


def write(path, obs, ctrl, dt=0.1):
    d_obs, d_ctrl = len(obs[0]), len(ctrl[0])
    out = bytearray(b"KOOPDS1\0")
    out += struct.pack("<IIQd", d_obs, d_ctrl, len(obs), dt)
    for o, c in zip(obs, ctrl):
        out += struct.pack(f"<{d_obs}f", *o)
        out += struct.pack(f"<{d_ctrl}f", *c)
    path.write_bytes(bytes(out))


write(HERE / "handmade.kds",
      [[0.5, 0.0], [0.75, -0.25], [1.0, 0.5]],
      [[-1.0], [2.5], [4.75]])
write(HERE / "wide_ctrl12.kds",
      [[float(t), -float(t)] for t in range(4)],
      [[t + 0.125 * j for j in range(12)] for t in range(4)])
