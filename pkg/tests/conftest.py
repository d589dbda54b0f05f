import numpy as np
import pytest

from stepaudit.audio import AudioClip
from stepaudit.evaluate import ScenarioRun, rir_scenario, sine_scenario

RATE = 16_000


def tone(freq_hz: float, duration_s: float = 1.0, amp: float = 0.5,
         rate: int = RATE, phase: float = 0.0) -> AudioClip:
    t = np.arange(int(duration_s * rate)) / rate
    return AudioClip(amp * np.sin(2 * np.pi * freq_hz * t + phase), rate)


@pytest.fixture
def sine_clip():
    return tone(440.0)


@pytest.fixture(scope="session")
def sine_run():
    """Canonical additive-trigger scenario, shared across the session."""
    run = ScenarioRun(sine_scenario())
    run._detections()  # force calibration + test profiling once
    return run


@pytest.fixture(scope="session")
def rir_run():
    """Canonical transformation-trigger scenario, shared across the session."""
    run = ScenarioRun(rir_scenario())
    run._detections()
    return run
