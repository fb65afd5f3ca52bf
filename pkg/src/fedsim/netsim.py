"""Heterogeneous network/compute model, synchronous round timing and client sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple, Sequence

import numpy as np

# (down, up) in Mbps; only the download figures are measured values, uplinks are assumptions
PROFILE_3G = (7.0, 7.0 / 4.0)
PROFILE_4G = (40.0, 10.0)
DEFAULT_COMPUTE_RATE = 1e4  # examples per second

Strategy = Literal["uniform", "speed_adaptive"]


@dataclass(frozen=True)
class NetworkProfile:
    client_id: int
    down_mbps: float
    up_mbps: float
    compute_rate: float = DEFAULT_COMPUTE_RATE
    availability: float = 1.0

    def __post_init__(self):
        if not (self.down_mbps > 0 and self.up_mbps > 0 and self.compute_rate > 0):
            raise ValueError("bandwidths and compute_rate must be positive")
        if not 0 < self.availability <= 1:
            raise ValueError("availability must be in (0, 1]")

    @property
    def network(self) -> str:
        return "3g" if self.down_mbps == PROFILE_3G[0] else "4g" if self.down_mbps == PROFILE_4G[0] else "custom"


def assign_profiles(
    num_clients: int,
    fraction_3g: float,
    seed: int,
    compute_rate: float = DEFAULT_COMPUTE_RATE,
    availability: float = 1.0,
) -> list[NetworkProfile]:
    """Independently make each client 3G with probability ``fraction_3g``, else 4G."""
    if num_clients < 1:
        raise ValueError("num_clients must be >= 1")
    if not 0 <= fraction_3g <= 1:
        raise ValueError("fraction_3g must be in [0, 1]")
    is_3g = np.random.default_rng(seed).random(num_clients) < fraction_3g
    return [
        NetworkProfile(i, *(PROFILE_3G if slow else PROFILE_4G), compute_rate, availability)
        for i, slow in enumerate(is_3g)
    ]


class Participant(NamedTuple):
    profile: NetworkProfile
    model_bytes_down: int
    update_bytes_up: int
    samples_processed: int


@dataclass(frozen=True)
class ClientTiming:
    client_id: int
    download_s: float
    compute_s: float
    upload_s: float

    @property
    def total_s(self) -> float:
        return self.download_s + self.compute_s + self.upload_s


@dataclass(frozen=True)
class RoundTiming:
    clients: tuple[ClientTiming, ...]
    round_wall_s: float
    bytes_up: int
    bytes_down: int


def transfer_seconds(num_bytes: int, mbps: float) -> float:
    return 8 * num_bytes / (mbps * 1e6)


def round_time(participants: Sequence[Participant]) -> RoundTiming:
    """Per-client download/compute/upload times; the round ends at the slowest client."""
    if not participants:
        raise ValueError("round_time needs at least one participant")
    timings = tuple(
        ClientTiming(
            p.profile.client_id,
            transfer_seconds(p.model_bytes_down, p.profile.down_mbps),
            p.samples_processed / p.profile.compute_rate,
            transfer_seconds(p.update_bytes_up, p.profile.up_mbps),
        )
        for p in participants
    )
    return RoundTiming(
        clients=timings,
        round_wall_s=max(t.total_s for t in timings),
        bytes_up=sum(p.update_bytes_up for p in participants),
        bytes_down=sum(p.model_bytes_down for p in participants),
    )


def num_sampled(num_clients: int, sampling_ratio: float) -> int:
    if not 0 < sampling_ratio <= 1:
        raise ValueError(f"sampling ratio must be in (0, 1], got {sampling_ratio}")
    return max(1, min(num_clients, math.floor(sampling_ratio * num_clients + 0.5)))


def selection_weights(history: Sequence[float], alpha: float = 2.0) -> np.ndarray:
    """(1 + deficit)**alpha, where deficit is how far a client lags the busiest one in samples processed."""
    h = np.asarray(history, dtype=np.float64)
    top = h.max() if h.size else 0.0
    deficit = (top - h) / (top + 1.0)
    return (1.0 + deficit) ** alpha


def sample_clients(
    strategy: Strategy,
    num_clients: int,
    sampling_ratio: float,
    history: Sequence[float] | None,
    rng: np.random.Generator,
    alpha: float = 2.0,
) -> list[int]:
    """Choose K = round(C * m) distinct clients, returned in ascending id order."""
    k = num_sampled(num_clients, sampling_ratio)
    if k == num_clients:
        return list(range(num_clients))
    if strategy == "uniform":
        picked = rng.choice(num_clients, size=k, replace=False)
    elif strategy == "speed_adaptive":
        hist = np.zeros(num_clients) if history is None else np.asarray(history, dtype=np.float64)
        if hist.size != num_clients:
            raise ValueError("history must have one entry per client")
        w = selection_weights(hist, alpha)
        if np.all(w == w[0]):
            # no deficits: draw exactly as the uniform strategy would
            picked = rng.choice(num_clients, size=k, replace=False)
        else:
            picked = rng.choice(num_clients, size=k, replace=False, p=w / w.sum())
    else:
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    return sorted(int(i) for i in picked)


def drop_unavailable(ids: Sequence[int], profiles: Sequence[NetworkProfile], rng: np.random.Generator) -> list[int]:
    """Keep each sampled client with probability equal to its availability."""
    draws = rng.random(len(ids))
    return [i for i, u in zip(ids, draws) if u < profiles[i].availability]
