"""Unit helpers: canonical wire units are bits/second and seconds.

The CLI accepts human suffixes ("10Mbps", "30ms") and converts once at the
boundary; everything past the boundary is plain floats in canonical units.
"""

from __future__ import annotations

import re

MINUTES_PER_YEAR = 365 * 24 * 60  # 525600

_RATE_SUFFIX = {
    "bps": 1.0,
    "kbps": 1e3,
    "mbps": 1e6,
    "gbps": 1e9,
}

_TIME_SUFFIX = {
    "s": 1.0,
    "ms": 1e-3,
    "us": 1e-6,
    "ns": 1e-9,
}

_NUM = r"([0-9]+(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)"


def parse_rate(text: str | float | int) -> float:
    """Parse a rate into bits/second. Accepts bare numbers or bps/kbps/Mbps/Gbps."""
    if isinstance(text, (int, float)):
        return float(text)
    m = re.fullmatch(_NUM + r"\s*([a-zA-Z]*)", text.strip())
    if not m:
        raise ValueError(f"cannot parse rate: {text!r}")
    value, suffix = float(m.group(1)), m.group(2).lower()
    if not suffix:
        return value
    if suffix not in _RATE_SUFFIX:
        raise ValueError(f"unknown rate suffix {suffix!r} in {text!r}")
    return value * _RATE_SUFFIX[suffix]


def parse_time(text: str | float | int) -> float:
    """Parse a duration into seconds. Accepts bare numbers or s/ms/us/ns."""
    if isinstance(text, (int, float)):
        return float(text)
    m = re.fullmatch(_NUM + r"\s*([a-zA-Z]*)", text.strip())
    if not m:
        raise ValueError(f"cannot parse time: {text!r}")
    value, suffix = float(m.group(1)), m.group(2).lower()
    if not suffix:
        return value
    if suffix not in _TIME_SUFFIX:
        raise ValueError(f"unknown time suffix {suffix!r} in {text!r}")
    return value * _TIME_SUFFIX[suffix]


def downtime_minutes_per_year(availability: float) -> float:
    """Yearly downtime budget for an availability fraction.

    0.9999 maps to 52.56 minutes per year.
    """
    if not 0.0 <= availability <= 1.0:
        raise ValueError(f"availability must be in [0,1], got {availability}")
    return (1.0 - availability) * MINUTES_PER_YEAR


def fmt_rate(bps: float) -> str:
    for suffix, scale in (("Gbps", 1e9), ("Mbps", 1e6), ("kbps", 1e3)):
        if bps >= scale:
            return f"{bps / scale:g} {suffix}"
    return f"{bps:g} bps"


def fmt_time(seconds: float) -> str:
    for suffix, scale in (("s", 1.0), ("ms", 1e-3), ("us", 1e-6)):
        if seconds >= scale:
            return f"{seconds / scale:.3g} {suffix}"
    return f"{seconds * 1e9:.3g} ns"
