"""Seeded synthetic load and generation profiles.

Stand-ins for unavailable metered datasets: a diurnal solar bell, a smoother
wind ramble, and household load with morning/evening peaks plus appliance
noise. All shapes are deterministic functions of the supplied generator.
"""

from __future__ import annotations

import numpy as np


def _slot_hours(horizon: int, slot_minutes: int) -> np.ndarray:
    return (np.arange(horizon) * slot_minutes / 60.0) % 24.0


def solar_series(
    rng: np.random.Generator, horizon: int, slot_minutes: int = 15, scale: float = 1.0
) -> np.ndarray:
    """Daylight bell around 13:00 with mild seeded weather noise, kWh per slot."""
    h = _slot_hours(horizon, slot_minutes)
    bell = np.exp(-0.5 * ((h - 13.0) / 2.8) ** 2)
    bell[(h < 6.0) | (h > 20.0)] = 0.0
    noise = 1.0 + 0.15 * rng.standard_normal(horizon)
    return np.clip(scale * bell * noise, 0.0, None) * (slot_minutes / 60.0)


def wind_series(
    rng: np.random.Generator, horizon: int, slot_minutes: int = 15, scale: float = 1.0
) -> np.ndarray:
    """Clipped random walk; windy spells persist across slots."""
    steps = rng.standard_normal(horizon) * 0.2
    level = 0.6 + np.cumsum(steps) * 0.15
    level = 0.6 + (level - level.mean()) * 0.5
    return np.clip(scale * level, 0.0, None) * (slot_minutes / 60.0)


def load_series(
    rng: np.random.Generator, horizon: int, slot_minutes: int = 15, scale: float = 1.0
) -> np.ndarray:
    """Household demand: base load, breakfast and evening peaks, noise."""
    h = _slot_hours(horizon, slot_minutes)
    base = 0.25
    morning = 0.5 * np.exp(-0.5 * ((h - 7.5) / 1.2) ** 2)
    evening = 0.9 * np.exp(-0.5 * ((h - 19.0) / 1.8) ** 2)
    noise = np.abs(1.0 + 0.25 * rng.standard_normal(horizon))
    return np.clip(scale * (base + morning + evening) * noise, 0.0, None) * (
        slot_minutes / 60.0
    )
