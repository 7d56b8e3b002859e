"""Closed-loop flow-control simulator with a stick-slip valve.

Provides labeled synthetic OP/PV data: a PI controller drives a
first-order process through a valve whose static friction is modeled by
the standard two-parameter deadband/slip-jump abstraction. With both
parameters zero the valve is ideal and the loop settles; with a nonzero
deadband the integrator must ramp the controller output until the valve
breaks free and jumps, producing the sustained OP sawtooth / PV limit
cycle signature of stiction.

All randomness comes from numpy's PCG64 generator seeded per run, with
exactly one Gaussian PV-noise draw per simulated minute, so identical
configurations reproduce bit-identical series.

Units: valve demand/position and OP are percent of span [0, 100]; PV and
setpoints share the process engineering unit; times are minutes.
"""

from __future__ import annotations

import configparser
import csv
import os
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .errors import EmptyInput, IoFailure, OverlappingEpisodes
from .seriesio import (
    FORWARD_FILLED,
    MINUTE,
    OBSERVED,
    UniformSeries,
    _parse_timestamp,
)

DEFAULT_T0 = datetime(2024, 1, 1, 0, 0)


@dataclass(frozen=True)
class StictionParams:
    """Two-parameter valve stiction model.

    ``deadband_s`` is the demand change (percent of span) needed to
    unstick the valve; ``slip_jump_j`` is the abrupt jump short-fall on
    release. Both zero means an ideal valve.
    """

    deadband_s: float = 0.0
    slip_jump_j: float = 0.0

    def __post_init__(self) -> None:
        if self.deadband_s < 0 or self.slip_jump_j < 0:
            raise ValueError("stiction parameters must be nonnegative")
        if self.slip_jump_j > self.deadband_s:
            raise ValueError("slip jump cannot exceed the deadband")

    @property
    def active(self) -> bool:
        return self.deadband_s > 0 or self.slip_jump_j > 0


@dataclass(frozen=True)
class LoopConfig:
    """PI loop and process parameters for one simulated episode."""

    kp: float = 0.5
    ti: float = 8.0
    process_gain: float = 1.0
    process_tau: float = 6.0
    sp_profile: tuple[tuple[int, float], ...] = ((0, 50.0),)
    noise_sigma: float = 0.3
    seed: int = 0
    duration: int = 1440

    def __post_init__(self) -> None:
        if self.ti <= 0 or self.process_tau <= 0:
            raise ValueError("ti and process_tau must be positive")
        if self.duration < 1:
            raise ValueError("duration must be at least one minute")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if not self.sp_profile:
            raise ValueError("sp_profile needs at least one segment")

    def setpoint_at(self, minute: int) -> float:
        """Piecewise-constant setpoint: value of the last segment at or before t."""
        value = self.sp_profile[0][1]
        for start, sp in self.sp_profile:
            if start <= minute:
                value = sp
            else:
                break
        return value


@dataclass
class EpisodeInfo:
    """Placement of one simulated episode on the global minute axis."""

    start_minute: int
    end_minute: int  # exclusive
    sticky: bool


@dataclass
class SimulatedData:
    """A simulated series with per-minute ground-truth stiction flags."""

    series: UniformSeries
    ground_truth: np.ndarray
    episodes: list[EpisodeInfo] = field(default_factory=list)


def _clamp(x: float, lo: float = 0.0, hi: float = 100.0) -> float:
    return lo if x < lo else hi if x > hi else x


def valve_step(demand: float, last_moved: float, params: StictionParams) -> float:
    """Advance the stick-slip valve one step and return its new position.

    The valve holds ``last_moved`` until the demand differs from it by
    more than the deadband; it then slips to
    ``demand - sign(demand - last_moved) * (deadband - slip_jump)``,
    clamped to [0, 100]. The returned position is the new ``last_moved``.
    """
    delta = demand - last_moved
    if abs(delta) <= params.deadband_s:
        return last_moved
    direction = 1.0 if delta > 0 else -1.0
    position = demand - direction * (params.deadband_s - params.slip_jump_j)
    return _clamp(position)


def simulate_loop(
    cfg: LoopConfig,
    stiction: StictionParams,
    t0: datetime = DEFAULT_T0,
) -> SimulatedData:
    """Run one PI-controlled episode and return its OP/PV series.

    Per minute: measure PV (process output plus Gaussian noise), update
    the PI controller (integrator clamped while OP saturates), move the
    valve through the stiction model, then Euler-step the first-order
    process. The loop starts at steady state for the initial setpoint so
    healthy episodes begin settled.
    """
    n = cfg.duration
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    noise = rng.normal(0.0, cfg.noise_sigma, n) if cfg.noise_sigma > 0 else np.zeros(n)

    sp0 = cfg.setpoint_at(0)
    u0 = _clamp(sp0 / cfg.process_gain if cfg.process_gain != 0 else 0.0)
    y = cfg.process_gain * u0
    integrator = u0
    last_moved = u0

    op_arr = np.zeros(n, dtype=np.float64)
    pv_arr = np.zeros(n, dtype=np.float64)
    for t in range(n):
        sp = cfg.setpoint_at(t)
        pv = y + noise[t]
        error = sp - pv
        delta_i = (cfg.kp / cfg.ti) * error
        op_try = cfg.kp * error + integrator + delta_i
        if (op_try > 100.0 and delta_i > 0) or (op_try < 0.0 and delta_i < 0):
            op = _clamp(cfg.kp * error + integrator)  # hold integrator at the limit
        else:
            integrator += delta_i
            op = _clamp(cfg.kp * error + integrator)
        last_moved = valve_step(op, last_moved, stiction)
        op_arr[t] = op
        pv_arr[t] = pv
        y += (cfg.process_gain * last_moved - y) / cfg.process_tau

    mask = np.full(n, OBSERVED, dtype=np.uint8)
    series = UniformSeries(
        t0=t0, op=op_arr, pv=pv_arr, op_fill=mask, pv_fill=mask.copy()
    )
    truth = np.full(n, stiction.active, dtype=bool)
    episode = EpisodeInfo(start_minute=0, end_minute=n, sticky=stiction.active)
    return SimulatedData(series=series, ground_truth=truth, episodes=[episode])


Episode = tuple[LoopConfig, StictionParams, int]


def make_dataset(episodes: list[Episode], t0: datetime = DEFAULT_T0) -> SimulatedData:
    """Stitch independently simulated episodes onto one minute axis.

    Episodes are (config, stiction, start-offset) with offsets in minutes
    from ``t0``; they must not overlap. Gaps between episodes are carried
    forward from the previous episode's last values (flagged ``ffill``)
    with ground truth false. The axis is re-anchored at the earliest
    episode so the result has no leading gap.
    """
    if not episodes:
        raise EmptyInput("no episodes to simulate")
    ordered = sorted(episodes, key=lambda e: e[2])
    base = ordered[0][2]
    spans = [(off - base, off - base + cfg.duration) for cfg, _, off in ordered]
    for (s0, e0), (s1, _) in zip(spans, spans[1:]):
        if s1 < e0:
            raise OverlappingEpisodes(
                f"episode starting at minute {s1 + base} overlaps previous ending {e0 + base}"
            )

    total = spans[-1][1]
    op = np.zeros(total, dtype=np.float64)
    pv = np.zeros(total, dtype=np.float64)
    fill = np.full(total, FORWARD_FILLED, dtype=np.uint8)
    truth = np.zeros(total, dtype=bool)
    infos: list[EpisodeInfo] = []

    for (cfg, stiction, _), (start, end) in zip(ordered, spans):
        sim = simulate_loop(cfg, stiction)
        op[start:end] = sim.series.op
        pv[start:end] = sim.series.pv
        fill[start:end] = OBSERVED
        truth[start:end] = sim.ground_truth
        infos.append(EpisodeInfo(start_minute=start, end_minute=end, sticky=stiction.active))

    # forward-fill any inter-episode gaps
    gap = fill == FORWARD_FILLED
    if gap.any():
        last = np.where(~gap, np.arange(total), -1)
        np.maximum.accumulate(last, out=last)
        op[gap] = op[last[gap]]
        pv[gap] = pv[last[gap]]

    series = UniformSeries(
        t0=t0 + base * MINUTE, op=op, pv=pv, op_fill=fill, pv_fill=fill.copy()
    )
    return SimulatedData(series=series, ground_truth=truth, episodes=infos)


def write_ground_truth(data: SimulatedData, path_or_file) -> None:
    """Write the sidecar ``timestamp,ground_truth`` table (0/1 flags)."""
    own = isinstance(path_or_file, (str, os.PathLike))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "ground_truth"])
        ts = data.series.t0
        for flag in data.ground_truth:
            writer.writerow([ts.isoformat(timespec="minutes"), int(flag)])
            ts += MINUTE
    finally:
        if own:
            fh.close()


def read_ground_truth(path_or_file) -> np.ndarray:
    """Read a ground-truth sidecar back into a boolean array."""
    own = isinstance(path_or_file, (str, os.PathLike))
    try:
        fh = open(path_or_file, "r", newline="") if own else path_or_file
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp", "ground_truth"]:
            raise EmptyInput(f"unexpected ground-truth header: {header}")
        flags = [bool(int(row[1])) for row in reader if row]
    finally:
        if own:
            fh.close()
    if not flags:
        raise EmptyInput("ground-truth table has no rows")
    return np.asarray(flags, dtype=bool)


def _parse_sp_profile(text: str) -> tuple[tuple[int, float], ...]:
    """Parse ``50`` (constant) or ``0:50, 360:60`` (minute:value schedule)."""
    text = text.strip()
    if ":" not in text:
        return ((0, float(text)),)
    segments = []
    for chunk in text.split(","):
        minute_s, _, value_s = chunk.partition(":")
        segments.append((int(minute_s.strip()), float(value_s.strip())))
    segments.sort(key=lambda s: s[0])
    if segments[0][0] != 0:
        segments.insert(0, (0, segments[0][1]))
    return tuple(segments)


def parse_episode_config(path_or_file) -> tuple[list[Episode], datetime]:
    """Load an episode schedule from a key = value section file.

    The ``[loop]`` section sets shared defaults (kp, ti, process_gain,
    process_tau, noise_sigma, seed, t0); each ``[episode:NAME]`` section
    gives ``start``, ``duration``, ``deadband``, ``slip_jump``,
    ``setpoint`` and may override any loop key. Episodes without an
    explicit ``seed`` get ``loop seed + episode index`` so runs stay
    reproducible but episodes are not noise-correlated.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if isinstance(path_or_file, (str, os.PathLike)):
        read = parser.read(path_or_file)
        if not read:
            raise IoFailure(f"cannot read config file: {path_or_file}")
    else:
        parser.read_file(path_or_file)

    loop = parser["loop"] if parser.has_section("loop") else {}
    t0 = _parse_timestamp(loop.get("t0", DEFAULT_T0.isoformat()))
    base_seed = int(loop.get("seed", "0"))

    episodes: list[Episode] = []
    index = 0
    for section in parser.sections():
        if not section.startswith("episode"):
            continue
        ep = parser[section]

        def get(key: str, fallback: str) -> str:
            return ep.get(key, loop.get(key, fallback))

        cfg = LoopConfig(
            kp=float(get("kp", "0.5")),
            ti=float(get("ti", "8.0")),
            process_gain=float(get("process_gain", "1.0")),
            process_tau=float(get("process_tau", "6.0")),
            sp_profile=_parse_sp_profile(ep.get("setpoint", loop.get("setpoint", "50"))),
            noise_sigma=float(get("noise_sigma", "0.3")),
            seed=int(ep["seed"]) if "seed" in ep else base_seed + index,
            duration=int(ep["duration"]),
        )
        stiction = StictionParams(
            deadband_s=float(ep.get("deadband", "0")),
            slip_jump_j=float(ep.get("slip_jump", "0")),
        )
        episodes.append((cfg, stiction, int(ep.get("start", "0"))))
        index += 1

    if not episodes:
        raise EmptyInput("config file defines no [episode:*] sections")
    return episodes, t0
