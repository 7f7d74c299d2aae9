"""Bundled example data."""
from __future__ import annotations

import hashlib
from importlib import resources

from .inference import DetecteeHistogram

# Detectees per index case, Karnataka (India) contact tracing, n = 956.
KARNATAKA_SHA256 = "4f57bc17d51487f11c15d7a06af838e7d38536c2da1a7647f9f5260edb7f2692"


def karnataka_text() -> str:
    text = resources.files("tracefit").joinpath("data/karnataka.csv").read_text()
    digest = hashlib.sha256(text.encode()).hexdigest()
    if digest != KARNATAKA_SHA256:
        raise RuntimeError(f"bundled karnataka.csv is corrupted (sha256 {digest})")
    return text


def karnataka() -> DetecteeHistogram:
    """Observed detectee histogram of 956 index cases."""
    return DetecteeHistogram.from_csv_text(karnataka_text(), "karnataka.csv")
