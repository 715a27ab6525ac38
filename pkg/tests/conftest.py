import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chaingrape.cavity import CavityParams, standard_pulse
from chaingrape.grape import CostSpec, optimize, transform_axis
from chaingrape.spin import rotation

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# reference cavity used throughout: gamma = 20 /us, omega_max = 24 MHz
GAMMA, OMEGA_MAX = 20.0, 24.0

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def params():
    return CavityParams(GAMMA, OMEGA_MAX, 10)


@pytest.fixture(scope="session")
def optimized_pulses(params):
    """Optimized x controls for pi and pi/2 with their optimization reports."""
    out = {}
    for key, theta in (("pi", np.pi), ("pi/2", np.pi / 2)):
        spec = CostSpec.uniform(rotation(theta, "x"), span=5.0, points=21, fidelity_threshold=1e-3, max_iters=3000)
        out[key] = optimize(None, params, spec, seed=0)
    return out


@pytest.fixture(scope="session")
def optimized_library_controls(optimized_pulses):
    controls = {}
    for key, (ctrl, _) in optimized_pulses.items():
        controls[key, "x"] = ctrl
        controls[key, "y"] = transform_axis(ctrl)
    return controls


@pytest.fixture(scope="session")
def standard_library_controls(params):
    return {
        (key, axis): standard_pulse(params, theta, axis=axis)[1]
        for key, theta in (("pi", np.pi), ("pi/2", np.pi / 2))
        for axis in ("x", "y")
    }


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
