"""Additive-noise and flat Rayleigh fading channels for constellation symbols."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .encoder import EmbeddingTable, pack_symbols, unpack_symbols

MODELS = ("awgn", "rayleigh")
PACKINGS = ("real", "complex")


@dataclass(frozen=True)
class ChannelConfig:
    """Channel model settings.

    ``snr_db`` may be ``+inf`` for a noiseless link. ``csi_at_receiver``
    defaults to on for Rayleigh and is irrelevant for AWGN.
    """

    model: str = "awgn"
    snr_db: float = 10.0
    packing: str = "real"
    csi_at_receiver: bool | None = None
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"channel model must be one of {MODELS}")
        if self.packing not in PACKINGS:
            raise ValueError(f"packing must be one of {PACKINGS}")
        if math.isnan(self.snr_db) or self.snr_db == -math.inf:
            raise ValueError(f"snr_db must be finite or +inf, got {self.snr_db}")
        if self.csi_at_receiver is None:
            object.__setattr__(self, "csi_at_receiver", self.model == "rayleigh")


@dataclass
class TransmitRecord:
    """One channel use over a block of symbols; ``y == h * x + delta``."""

    x: np.ndarray
    h: np.ndarray
    delta: np.ndarray
    y: np.ndarray
    packing: str = "real"
    csi: bool = False
    sigma: float = 0.0

    def equalized(self) -> np.ndarray:
        """Received symbols divided by the fading gain when it is known."""
        if not self.csi:
            return self.y
        return self.y / self.h

    def received_vectors(self) -> np.ndarray:
        """Equalized symbols mapped back to real constellation coordinates."""
        return unpack_symbols(self.equalized(), self.packing)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["index", "x", "h", "delta", "y"])
        for i, row in enumerate(zip(*(np.ravel(a) for a in (self.x, self.h, self.delta, self.y)))):
            w.writerow([i, *(repr(v.item()) for v in row)])
        return buf.getvalue()


def measure_signal_power(table: EmbeddingTable) -> float:
    """Mean squared entity coordinate."""
    if table.entities.size == 0:
        raise ValueError("cannot measure power of an empty table")
    return float(np.mean(table.entities ** 2))


def snr_to_sigma(snr_db: float, signal_power_per_dim: float) -> float:
    """Noise standard deviation per real coordinate for a given SNR."""
    if not signal_power_per_dim > 0:
        raise ValueError(f"signal power must be positive, got {signal_power_per_dim}")
    if snr_db == math.inf:
        return 0.0
    return math.sqrt(signal_power_per_dim / 10.0 ** (snr_db / 10.0))


def _fading(shape, packing: str, rng: np.random.Generator) -> np.ndarray:
    if packing == "complex":
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    # Rayleigh amplitude with unit mean square
    return rng.rayleigh(scale=1.0 / np.sqrt(2.0), size=shape)


def transmit(x, cfg: ChannelConfig, table_power: float,
             rng: np.random.Generator | None = None, h=None) -> TransmitRecord:
    """Send real constellation vectors ``x`` (last axis = coordinates).

    Vectors are packed into channel symbols per ``cfg.packing``. Noise is
    Gaussian with variance set by :func:`snr_to_sigma` on every real
    coordinate; complex symbols get independent real and imaginary parts.
    ``h`` overrides the fading draw and is mainly for tests.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("symbols must be finite")
    sym = pack_symbols(x, cfg.packing)
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    sigma = snr_to_sigma(cfg.snr_db, table_power)

    if h is not None:
        gain = np.broadcast_to(np.asarray(h), sym.shape).copy()
    elif cfg.model == "rayleigh":
        gain = _fading(sym.shape, cfg.packing, rng)
    else:
        gain = np.ones(sym.shape, dtype=sym.dtype)

    if cfg.packing == "complex":
        noise = sigma * (rng.standard_normal(sym.shape) + 1j * rng.standard_normal(sym.shape))
    else:
        noise = sigma * rng.standard_normal(sym.shape)
    if sigma == 0.0:
        # skip the addition so signed zeros survive untouched
        noise = np.zeros_like(noise)
        y = gain * sym
    else:
        y = gain * sym + noise
    return TransmitRecord(sym, gain, noise, y, cfg.packing, bool(cfg.csi_at_receiver), sigma)
