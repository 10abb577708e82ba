r"""Monte Carlo fading ensembles for the secondary MAC and BC.

All ergodic quantities in this package are sample-average
approximations over a finite ensemble of channel states, so the
ensemble is drawn once, up front, and then treated as immutable data.
Gains are linear-scale power gains; the receiver noise is normalized
to unit variance throughout, so `rayleigh-unit-mean` fading makes every
gain an i.i.d. Exponential(1) variate.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError

_KINDS = ("rayleigh-unit-mean",)


@dataclass(frozen=True)
class FadingModel:
    """Specification of one i.i.d. fading ensemble.

    K secondary users, M primary receivers, `n_states` joint fading
    states, and a counter-based seed so the draw is reproducible and
    independent of evaluation order.
    """

    K: int
    M: int
    n_states: int
    seed: int
    kind: str = "rayleigh-unit-mean"

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigurationError(f"unknown fading kind {self.kind!r}")
        if self.K < 1:
            raise ConfigurationError("need at least one secondary user")
        if self.M < 0:
            raise ConfigurationError("M must be nonnegative")
        if self.n_states < 1:
            raise ConfigurationError("n_states must be positive")


@dataclass(frozen=True)
class ChannelStateMac:
    """One fading state of the secondary MAC.

    h[k] is the direct power gain from secondary transmitter k to the
    secondary base station; g[k, m] is the interference power gain from
    transmitter k to primary receiver m.
    """

    h: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        g = np.asarray(self.g, dtype=float)
        if h.ndim != 1 or g.ndim != 2 or g.shape[0] != h.shape[0]:
            raise ConfigurationError("h must be (K,), g must be (K, M)")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(g))):
            raise ConfigurationError("gains must be finite")
        if np.any(h < 0) or np.any(g < 0):
            raise ConfigurationError("power gains are nonnegative")
        h.flags.writeable = False
        g.flags.writeable = False
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "g", g)

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @property
    def M(self) -> int:
        return self.g.shape[1]


@dataclass(frozen=True)
class ChannelStateBc:
    """One fading state of the secondary BC.

    h[k] is the power gain from the secondary base station to user k;
    f[m] is the interference power gain from the base station to
    primary receiver m.
    """

    h: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        f = np.asarray(self.f, dtype=float)
        if h.ndim != 1 or f.ndim != 1:
            raise ConfigurationError("h must be (K,), f must be (M,)")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(f))):
            raise ConfigurationError("gains must be finite")
        if np.any(h < 0) or np.any(f < 0):
            raise ConfigurationError("power gains are nonnegative")
        h.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "f", f)

    @property
    def K(self) -> int:
        return self.h.shape[0]

    @property
    def M(self) -> int:
        return self.f.shape[0]


def _rng(seed: int) -> np.random.Generator:
    # Philox is counter-based: the stream depends only on the key, not
    # on how previous draws were chunked.
    return np.random.Generator(np.random.Philox(key=seed))


def sample_mac_states(model: FadingModel) -> list[ChannelStateMac]:
    """Draw the MAC ensemble for `model`. Same model => same states."""
    rng = _rng(model.seed)
    H = rng.exponential(1.0, size=(model.n_states, model.K))
    G = rng.exponential(1.0, size=(model.n_states, model.K, model.M))
    return [ChannelStateMac(h=H[t], g=G[t]) for t in range(model.n_states)]


def sample_bc_states(model: FadingModel) -> list[ChannelStateBc]:
    """Draw the BC ensemble for `model`. Same model => same states."""
    rng = _rng(model.seed)
    H = rng.exponential(1.0, size=(model.n_states, model.K))
    F = rng.exponential(1.0, size=(model.n_states, model.M))
    return [ChannelStateBc(h=H[t], f=F[t]) for t in range(model.n_states)]


def mac_arrays(states: list[ChannelStateMac]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a MAC ensemble into (H, G) of shapes (n, K) and (n, K, M)."""
    if not states:
        raise UsageError("empty ensemble")
    H = np.stack([s.h for s in states])
    G = np.stack([s.g for s in states])
    return H, G


def bc_arrays(states: list[ChannelStateBc]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a BC ensemble into (H, F) of shapes (n, K) and (n, M)."""
    if not states:
        raise UsageError("empty ensemble")
    H = np.stack([s.h for s in states])
    F = np.stack([s.f for s in states])
    return H, F


def _mac_header(K: int, M: int) -> list[str]:
    cols = [f"h_{k}" for k in range(1, K + 1)]
    cols += [f"g_{k}_{m}" for k in range(1, K + 1) for m in range(1, M + 1)]
    return cols


def _bc_header(K: int, M: int) -> list[str]:
    cols = [f"h_{k}" for k in range(1, K + 1)]
    cols += [f"f_{m}" for m in range(1, M + 1)]
    return cols


def export_mac_csv(states: list[ChannelStateMac], path) -> None:
    """Write a MAC ensemble as CSV (header row is mandatory)."""
    K, M = states[0].K, states[0].M
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_mac_header(K, M))
        for s in states:
            w.writerow([repr(float(x)) for x in np.concatenate([s.h, s.g.ravel()])])


def import_mac_csv(path) -> list[ChannelStateMac]:
    """Read a MAC ensemble written by `export_mac_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise UsageError(f"{path}: empty ensemble file")
    header = rows[0]
    K = sum(1 for c in header if c.startswith("h_"))
    M = (len(header) - K) // K if K else 0
    if K < 1 or header != _mac_header(K, M):
        raise UsageError(f"{path}: malformed MAC ensemble header")
    out = []
    for row in rows[1:]:
        vals = np.array([float(x) for x in row])
        if vals.size != K + K * M:
            raise UsageError(f"{path}: row with {vals.size} fields, expected {K + K * M}")
        out.append(ChannelStateMac(h=vals[:K], g=vals[K:].reshape(K, M)))
    if not out:
        raise UsageError(f"{path}: no states in file")
    return out


def export_bc_csv(states: list[ChannelStateBc], path) -> None:
    """Write a BC ensemble as CSV (header row is mandatory)."""
    K, M = states[0].K, states[0].M
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_bc_header(K, M))
        for s in states:
            w.writerow([repr(float(x)) for x in np.concatenate([s.h, s.f])])


def import_bc_csv(path) -> list[ChannelStateBc]:
    """Read a BC ensemble written by `export_bc_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise UsageError(f"{path}: empty ensemble file")
    header = rows[0]
    K = sum(1 for c in header if c.startswith("h_"))
    M = len(header) - K
    if K < 1 or header != _bc_header(K, M):
        raise UsageError(f"{path}: malformed BC ensemble header")
    out = []
    for row in rows[1:]:
        vals = np.array([float(x) for x in row])
        if vals.size != K + M:
            raise UsageError(f"{path}: row with {vals.size} fields, expected {K + M}")
        out.append(ChannelStateBc(h=vals[:K], f=vals[K:]))
    if not out:
        raise UsageError(f"{path}: no states in file")
    return out
