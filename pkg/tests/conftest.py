import numpy as np
import pytest
from hypothesis import settings

from coisac.scene import NetworkScene, build_beampattern_spec

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

SCENARIO1 = dict(
    ap_positions=[(0, 0), (90, 0), (45, 45 * np.sqrt(3))],
    ue_positions=[(20, 50), (70, 40)],
    target_positions=[(33, 26)],
    clutter_positions=[(28, 36), (51, 26)],
)


def desk_scene(n_aps=3, **kw):
    geo = dict(SCENARIO1)
    geo["ap_positions"] = geo["ap_positions"][:n_aps]
    geo.update(kw)
    return NetworkScene(n_tx=kw.pop("n_tx", 16), n_rx=kw.pop("n_rx", 16), n_rf=kw.pop("n_rf", 4),
                        **{k: v for k, v in geo.items() if k not in ("n_tx", "n_rx", "n_rf")})


def desk_specs(scene, gamma=4.0, notch_mw=1e-3, grid=61):
    w = 1.0 / scene.tx_power_budget
    return [build_beampattern_spec(scene, a, np.radians(4), np.radians(2), gamma, notch_mw, grid, weights=w)
            for a in range(scene.n_aps)]


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------------------------ acceptance summary

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and not detail:
        detail = str(call.excinfo.value).splitlines()[0][:120] if call.excinfo else "error"
    _CRITERIA[mark.args[0]] = (mark.args[1], "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, verdict, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} {verdict}: {title} | {detail}")
