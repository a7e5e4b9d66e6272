import pytest

from fedbench.datagen import synthetic_manifest
from fedbench.federation import Cache, CacheConfig, Origin, OriginConfig, Redirector
from fedbench.model import DESK_PROFILE, SizeClass


@pytest.fixture(scope="session")
def desk_manifest():
    return synthetic_manifest(DESK_PROFILE, seed=0)


@pytest.fixture(scope="session")
def small_manifest():
    return synthetic_manifest((SizeClass.K1, SizeClass.M1), seed=0)


@pytest.fixture
def servers():
    """Start servers on ephemeral ports; everything is stopped at teardown."""
    started = []

    class Factory:
        def origin(self, manifest=None, **kw):
            app = Origin(OriginConfig(manifest=manifest, **kw)).start()
            started.append(app)
            return app

        def cache(self, upstream, capacity_bytes, **kw):
            app = Cache(CacheConfig(upstream=upstream, capacity_bytes=capacity_bytes, **kw)).start()
            started.append(app)
            return app

        def redirector(self, origins, **kw):
            app = Redirector(origins, **kw).start()
            started.append(app)
            return app

    yield Factory()
    for app in reversed(started):
        app.stop()


# One PASS/FAIL/SKIP line per acceptance criterion in the terminal summary.
_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if item.get_closest_marker("acceptance") is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        doc = (item.function.__doc__ or item.name).strip().splitlines()[0]
        measured = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        verdict = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _ACCEPTANCE.append((item.name, verdict, doc, measured))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict, doc, measured in sorted(_ACCEPTANCE):
        line = f"{verdict:4} {doc}"
        if measured:
            line += f" [{measured}]"
        terminalreporter.write_line(line)
