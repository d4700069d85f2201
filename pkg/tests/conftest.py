import pytest

from adhesion import pipeline


@pytest.fixture(scope="session")
def quick_run():
    """A coarse two-stage mixture construction shared by unit tests."""
    return pipeline.construct(pipeline.quick_config())


# ------------------------------------------------------------ acceptance lines

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")
    config.stash[ACCEPTANCE] = {}


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    m = item.get_closest_marker("criterion")
    if m is not None and (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        n, title = m.args
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
        line = f"{'PASS' if rep.passed else 'FAIL'}  criterion {n:>2}: {title}"
        if detail:
            line += f"  [{detail}]"
        item.config.stash[ACCEPTANCE][n] = line
        tr = item.config.pluginmanager.get_plugin("terminalreporter")
        if tr is not None:
            tr.write_line(line)
    return rep


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
