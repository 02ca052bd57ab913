"""Versioned plain-text network checkpoints with bit-exact round-trips.

Parameters are written with 17 significant digits, which is enough for a
float64 to survive the decimal round-trip unchanged.
"""

from __future__ import annotations

import numpy as np

from .network import NetworkSpec, ReluNetwork

FORMAT_HEADER = "gatelab checkpoint v1"


class CheckpointError(ValueError):
    """Unreadable, wrong-version, or shape-inconsistent checkpoint."""


def _fmt(values: np.ndarray) -> str:
    return " ".join(format(v, ".17g") for v in values)


def save_checkpoint(net: ReluNetwork, path: str) -> None:
    spec = net.spec
    lines = [
        FORMAT_HEADER,
        "dims: " + ",".join(str(d) for d in spec.layer_dims),
        "skips: " + ",".join("1" if s else "0" for s in spec.skip_connections),
        f"seed: {spec.seed}",
    ]
    for j, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"layer {j} weight {w.shape[0]} {w.shape[1]}")
        for row in w:
            lines.append(_fmt(row))
        lines.append(f"layer {j} bias {b.size}")
        lines.append(_fmt(b))
    lines.append("end")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_checkpoint(path: str) -> ReluNetwork:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or lines[0] != FORMAT_HEADER:
        got = lines[0] if lines else "<empty file>"
        raise CheckpointError(f"{path}: expected header {FORMAT_HEADER!r}, got {got!r}")
    try:
        dims = tuple(int(d) for d in lines[1].removeprefix("dims: ").split(","))
        skips_text = lines[2].removeprefix("skips: ")
        skips = tuple(s == "1" for s in skips_text.split(",")) if skips_text else ()
        seed = int(lines[3].removeprefix("seed: "))
    except (IndexError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed header block: {exc}") from exc
    spec = NetworkSpec(dims, skips, seed=seed)

    weights, biases = [], []
    pos = 4
    for j in range(spec.num_layers):
        expect = (dims[j], dims[j + 1])
        tag = lines[pos] if pos < len(lines) else "<eof>"
        if tag != f"layer {j} weight {expect[0]} {expect[1]}":
            raise CheckpointError(f"{path}: layer {j} weight header mismatch: {tag!r}")
        pos += 1
        rows = []
        for _ in range(expect[0]):
            rows.append(np.array([float(v) for v in lines[pos].split()]))
            pos += 1
        w = np.stack(rows)
        if w.shape != expect:
            raise CheckpointError(f"{path}: layer {j} weight shape {w.shape} != {expect}")
        tag = lines[pos] if pos < len(lines) else "<eof>"
        if tag != f"layer {j} bias {expect[1]}":
            raise CheckpointError(f"{path}: layer {j} bias header mismatch: {tag!r}")
        pos += 1
        b = np.array([float(v) for v in lines[pos].split()])
        pos += 1
        if b.size != expect[1]:
            raise CheckpointError(f"{path}: layer {j} bias size {b.size} != {expect[1]}")
        weights.append(w)
        biases.append(b)
    if pos >= len(lines) or lines[pos] != "end":
        raise CheckpointError(f"{path}: missing end marker")
    return ReluNetwork(spec, weights, biases)
