import pytest

from fieldpose.core import build_coco_skeleton


@pytest.fixture(scope="session")
def skeleton():
    return build_coco_skeleton()


def random_fields(rng, skeleton, grid=None, stride=None):
    """Random valid PIF/PAF fields: sparse confidences, arbitrary offsets."""
    import numpy as np

    from fieldpose.fields import FieldGeometry, PafField, PifField

    gw, gh = grid if grid is not None else (int(rng.integers(1, 12)), int(rng.integers(1, 12)))
    geometry = FieldGeometry(int(stride or rng.integers(1, 17)), gw, gh)
    pif = rng.normal(0, 3, size=(skeleton.n_keypoints, 5, gh, gw)).astype(np.float32)
    paf = rng.normal(0, 3, size=(skeleton.n_connections, 7, gh, gw)).astype(np.float32)
    for data, spreads in ((pif, (3, 4)), (paf, (3, 6))):
        data[:, 0] = np.where(rng.random(data[:, 0].shape) < 0.3, rng.random(data[:, 0].shape), 0.0)
        for ch in spreads:
            data[:, ch] = np.exp(rng.normal(0, 1, size=data[:, ch].shape)) + 1e-3
    return PifField(geometry, pif), PafField(geometry, paf)


FD_STEP = 1e-5


def central_difference(f, x, h=FD_STEP):
    return (f(x + h) - f(x - h)) / (2 * h)


def richardson_difference(f, x, h=FD_STEP):
    """Fourth-order central difference for points where curvature is large."""
    return (4 * central_difference(f, x, h / 2) - central_difference(f, x, h)) / 3


def relative_error(analytic, numeric):
    import numpy as np

    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    return np.where(denom > 0, np.abs(analytic - numeric) / np.where(denom > 0, denom, 1.0), 0.0)


def gradient_samples(rng, n=1000):
    """Random (x, mu, b, r, p, t) draws for the loss gradient checks.

    Differences |x - mu| within 1e-4 of a kink (0 for L1/Laplace, r for
    SmoothL1) are redrawn; b and r stay well above the finite-difference
    step; BCE predictions stay in [0.05, 0.95], where the central difference's
    h^2 f'''/6 truncation error is below the 1e-6 relative tolerance.
    """
    import numpy as np

    x = rng.uniform(-5, 5, n)
    mu = rng.uniform(-5, 5, n)
    b = np.exp(rng.uniform(np.log(0.05), np.log(5.0), n))
    r = np.exp(rng.uniform(np.log(0.05), np.log(5.0), n))
    for _ in range(100):
        bad = (np.abs(x - mu) < 1e-4) | (np.abs(np.abs(x - mu) - r) < 1e-4)
        if not bad.any():
            break
        x[bad] = rng.uniform(-5, 5, bad.sum())
    p = rng.uniform(0.05, 0.95, n)
    t = rng.integers(0, 2, n).astype(float)
    return x, mu, b, r, p, t


# -- acceptance summary ------------------------------------------------------

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.fixture
def measured(request):
    """Attach a one-line measurement to an acceptance test (record before asserting)."""

    def record(text: str) -> None:
        request.node.user_properties.append(("measured", text))

    return record


def pytest_runtest_logreport(report):
    if "acceptance" not in report.keywords:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE[name] = (report.outcome.upper(), dict(report.user_properties).get("measured", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        outcome, text = _ACCEPTANCE[name]
        outcome = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"{outcome}  {name}  {text}")
