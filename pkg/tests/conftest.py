import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "camtrap", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("camtrap")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def tiny_dataset(n_classes=3, per_class=8, side=8, seed=0):
    """Separable toy images: class c lights up channel c % 3 in a class-specific quadrant."""
    from camtrap.datakit import ArrayDataset

    r = np.random.default_rng(seed)
    x = r.random((n_classes * per_class, 3, side, side)).astype(np.float32) * 0.2
    y = np.repeat(np.arange(n_classes), per_class)
    h = side // 2
    for i, c in enumerate(y):
        qy, qx = divmod(c % 4, 2)
        x[i, c % 3, qy * h : (qy + 1) * h, qx * h : (qx + 1) * h] += 0.8
    return ArrayDataset(x, y, [f"s{i}" for i in range(len(y))])


# criterion number -> list of (part, passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def record_criterion(number, passed, detail, part=""):
    ACCEPTANCE.setdefault(number, []).append((part, bool(passed), detail))
    print(f"criterion {number}{part}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[number]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name}: {d}" if name else d for name, _, d in parts)
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
