import numpy as np
import pytest

from se3flow import _backend
from se3flow import geometry as geo
from se3flow import synthetic as S


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=_backend.available())
def backend(request):
    """Run the test once per built kernel backend."""
    with _backend.use(request.param):
        yield request.param


@pytest.fixture(scope="session")
def oracle_scene():
    """The 256x256 two-object scene used by the end-to-end tests."""
    return S.generate(S.random_scene(3))


@pytest.fixture(scope="session")
def small_scene():
    return S.generate(S.random_scene(5, width=64, height=64))


def plane_spec(width=64, height=64, depth=2.0, motion=None, f=200.0):
    cam = geo.PinholeCamera(f, f, (width - 1) / 2, (height - 1) / 2)
    bg = S.BackgroundPlane(depth=depth, motion=motion or geo.SE3Transform.identity(), texture_seed=3)
    return S.SceneSpec(cam, width, height, bg, [], seed=0, texture_cell=0.05)


# -- acceptance report ---------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    number, title = mark.args
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    _CRITERIA[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
