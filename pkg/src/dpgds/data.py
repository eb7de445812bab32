"""Count-matrix ingestion, checkpoint persistence, and the synthetic
bouncing-ball generator.

File formats
------------
dense-csv:      a header row of time labels, then one row per vocabulary
                entry with T integer counts.
sparse-triplet: first line "V,T", then lines "v,t,count" (0-based indices);
                duplicate (v, t) pairs accumulate.
checkpoint:     versioned JSON; every float is encoded with float.hex() so
                round trips are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .model import CountMatrix, GlobalParams, HyperParams, LatentState
from .rng import RngStream

CHECKPOINT_VERSION = 1


class DataFormatError(ValueError):
    """Malformed input file; carries the offending 1-based line number."""

    def __init__(self, msg: str, line: int | None = None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


class CheckpointVersionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# count-matrix ingestion


def load_count_matrix(path, format: str = "dense-csv", kind: str = "count") -> CountMatrix:
    if format == "dense-csv":
        return _load_dense_csv(path, kind)
    if format == "sparse-triplet":
        return _load_sparse_triplet(path, kind)
    raise DataFormatError(f"unknown format {format!r}")


def _parse_int(token: str, line_no: int) -> int:
    token = token.strip()
    try:
        value = int(token)
    except ValueError:
        raise DataFormatError(f"non-integer entry {token!r}", line_no) from None
    if value < 0:
        raise DataFormatError(f"negative entry {value}", line_no)
    return value


def _load_dense_csv(path, kind: str) -> CountMatrix:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise DataFormatError("empty file", 1)
    T = len(lines[0].split(","))
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != T:
            raise DataFormatError(f"expected {T} columns, found {len(cells)}", i)
        rows.append([_parse_int(c, i) for c in cells])
    if not rows:
        raise DataFormatError("no data rows after header", 2)
    return CountMatrix(entries=np.array(rows, dtype=np.int64), kind=kind)


def _load_sparse_triplet(path, kind: str) -> CountMatrix:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise DataFormatError("empty file", 1)
    dims = lines[0].split(",")
    if len(dims) != 2:
        raise DataFormatError("first line must declare 'V,T'", 1)
    V, T = _parse_int(dims[0], 1), _parse_int(dims[1], 1)
    out = np.zeros((V, T), dtype=np.int64)
    for i, ln in enumerate(lines[1:], start=2):
        cells = ln.split(",")
        if len(cells) != 3:
            raise DataFormatError("expected 'v,t,count'", i)
        v, t, c = (_parse_int(x, i) for x in cells)
        if v >= V or t >= T:
            raise DataFormatError(f"index ({v},{t}) outside declared {V}x{T}", i)
        out[v, t] += c
    return CountMatrix(entries=out, kind=kind)


def save_count_matrix(X: CountMatrix, path, format: str = "dense-csv") -> None:
    with open(path, "w") as fh:
        if format == "dense-csv":
            fh.write(",".join(f"t{t}" for t in range(X.T)) + "\n")
            for row in X.entries:
                fh.write(",".join(str(int(c)) for c in row) + "\n")
        elif format == "sparse-triplet":
            fh.write(f"{X.V},{X.T}\n")
            for v, t in zip(*np.nonzero(X.entries)):
                fh.write(f"{v},{t},{int(X.entries[v, t])}\n")
        else:
            raise DataFormatError(f"unknown format {format!r}")


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    hyper: HyperParams
    globals_: GlobalParams
    latents: LatentState | None
    rng_cursor: dict
    iteration: int
    engine_state: dict | None = None  # opaque extra sampler state (JSON-safe)
    format_version: int = CHECKPOINT_VERSION


def _encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a)
    if np.issubdtype(a.dtype, np.floating):
        data = [float(x).hex() for x in a.ravel()]
        dtype = "float"
    else:
        data = [int(x) for x in a.ravel()]
        dtype = "int"
    return {"shape": list(a.shape), "dtype": dtype, "data": data}


def _decode_array(d: dict) -> np.ndarray:
    if d["dtype"] == "float":
        flat = np.array([float.fromhex(x) for x in d["data"]], dtype=np.float64)
    else:
        flat = np.array(d["data"], dtype=np.int64)
    return flat.reshape(d["shape"])


def save_checkpoint(c: Checkpoint, path) -> None:
    h = c.hyper
    payload = {
        "format_version": c.format_version,
        "iteration": c.iteration,
        "hyper": {
            "L": h.L, "K": h.K, "V": h.V,
            "tau0": float(h.tau0).hex(), "gamma0": float(h.gamma0).hex(),
            "eta": [float(e).hex() for e in h.eta],
            "eps0": float(h.eps0).hex(),
            "tie_delta": h.tie_delta,
            "observation_link": h.observation_link,
        },
        "globals": {
            "Phi": [_encode_array(m) for m in c.globals_.Phi],
            "Pi": [_encode_array(m) for m in c.globals_.Pi],
            "nu": [_encode_array(v) for v in c.globals_.nu],
            "xi": [float(x).hex() for x in c.globals_.xi],
            "beta": [float(b).hex() for b in c.globals_.beta],
            "delta": _encode_array(np.atleast_1d(c.globals_.delta)),
            "delta_tied": c.globals_.delta.ndim == 0,
        },
        "latents": None if c.latents is None else {
            "Theta": [_encode_array(m) for m in c.latents.Theta],
            "zeta": None if c.latents.zeta is None else _encode_array(c.latents.zeta),
        },
        "rng_cursor": c.rng_cursor,
        "engine_state": c.engine_state,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {payload.get('format_version')} is not "
            f"supported (expected {CHECKPOINT_VERSION})")
    hd = payload["hyper"]
    hyper = HyperParams(
        L=hd["L"], K=hd["K"], V=hd["V"],
        tau0=float.fromhex(hd["tau0"]), gamma0=float.fromhex(hd["gamma0"]),
        eta=[float.fromhex(e) for e in hd["eta"]],
        eps0=float.fromhex(hd["eps0"]),
        tie_delta=hd["tie_delta"], observation_link=hd["observation_link"])
    gd = payload["globals"]
    delta = _decode_array(gd["delta"])
    if gd["delta_tied"]:
        delta = np.asarray(float(delta[0]))
    globals_ = GlobalParams(
        Phi=[_decode_array(m) for m in gd["Phi"]],
        Pi=[_decode_array(m) for m in gd["Pi"]],
        nu=[_decode_array(v) for v in gd["nu"]],
        xi=[float.fromhex(x) for x in gd["xi"]],
        beta=[float.fromhex(b) for b in gd["beta"]],
        delta=delta)
    latents = None
    if payload["latents"] is not None:
        ld = payload["latents"]
        latents = LatentState(
            Theta=[_decode_array(m) for m in ld["Theta"]],
            zeta=None if ld["zeta"] is None else _decode_array(ld["zeta"]))
    return Checkpoint(hyper=hyper, globals_=globals_, latents=latents,
                      rng_cursor=payload["rng_cursor"],
                      iteration=payload["iteration"],
                      engine_state=payload.get("engine_state"))


# ---------------------------------------------------------------------------
# bouncing balls


def simulate_ball_positions(n_balls: int, frame_size: int, T: int, rng: RngStream,
                            radius: float | None = None, speed: float | None = None,
                            collisions: bool = True,
                            initial: tuple[np.ndarray, np.ndarray] | None = None):
    """Ballistic centers with elastic wall reflection; returns (T, n, 2).

    Balls travel at constant speed; with `collisions` enabled, overlapping
    approaching pairs exchange their velocity components along the center
    line (equal-mass elastic collision), otherwise they pass through.
    `initial` optionally pins (positions, velocities) for deterministic tests.
    """
    if n_balls < 1 or frame_size < 8:
        raise ValueError("need n_balls >= 1 and frame_size >= 8")
    r = radius if radius is not None else 2.0 * frame_size / 15.0
    v0 = speed if speed is not None else frame_size / 15.0
    lo, hi = r, frame_size - r
    if initial is not None:
        pos, vel = (np.array(a, dtype=np.float64) for a in initial)
    else:
        for _ in range(1000):
            pos = rng.gen.uniform(lo, hi, size=(n_balls, 2))
            d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
            d[np.diag_indices(n_balls)] = np.inf
            if d.min() > 2 * r:
                break
        else:
            raise RuntimeError("could not place balls without overlap")
        ang = rng.gen.uniform(0, 2 * np.pi, size=n_balls)
        vel = v0 * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    traj = np.empty((T, n_balls, 2))
    for t in range(T):
        traj[t] = pos
        pos = pos + vel
        for ax in range(2):
            under = pos[:, ax] < lo
            over = pos[:, ax] > hi
            pos[under, ax] = 2 * lo - pos[under, ax]
            pos[over, ax] = 2 * hi - pos[over, ax]
            vel[under | over, ax] *= -1
        if collisions and n_balls > 1:
            for i in range(n_balls):
                for j in range(i + 1, n_balls):
                    dp = pos[i] - pos[j]
                    dist = np.linalg.norm(dp)
                    if dist < 2 * r and dist > 0:
                        n_hat = dp / dist
                        rel = vel[i] - vel[j]
                        vn = float((rel * n_hat).sum())
                        if vn < 0:  # approaching
                            vel[i] -= vn * n_hat
                            vel[j] += vn * n_hat
    return traj


def rasterize_frames(traj: np.ndarray, frame_size: int, radius: float) -> np.ndarray:
    """Binary frames, flattened row-major to frame_size^2 x T."""
    T, n_balls, _ = traj.shape
    yy, xx = np.mgrid[0:frame_size, 0:frame_size]
    out = np.zeros((frame_size * frame_size, T), dtype=np.int64)
    for t in range(T):
        frame = np.zeros((frame_size, frame_size), dtype=bool)
        for b in range(n_balls):
            cx, cy = traj[t, b]
            frame |= (xx - cx) ** 2 + (yy - cy) ** 2 <= radius ** 2
        out[:, t] = frame.ravel()
    return out


def generate_bouncing_balls(n_balls: int, frame_size: int, T: int, n_sequences: int,
                            rng: RngStream, radius: float | None = None,
                            speed: float | None = None,
                            collisions: bool = True) -> list[CountMatrix]:
    """Binary video sequences as V x T matrices with V = frame_size^2."""
    r = radius if radius is not None else 2.0 * frame_size / 15.0
    out = []
    for _ in range(n_sequences):
        traj = simulate_ball_positions(n_balls, frame_size, T, rng,
                                       radius=r, speed=speed, collisions=collisions)
        out.append(CountMatrix(entries=rasterize_frames(traj, frame_size, r),
                               kind="binary"))
    return out
