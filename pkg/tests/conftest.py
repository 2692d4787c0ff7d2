import pytest

DEFAULT_MNIST_DIR = "/root/data/mnist"


def pytest_addoption(parser):
    parser.addoption("--mnist-dir", default=DEFAULT_MNIST_DIR,
                     help="directory holding the four uncompressed MNIST IDX files")
    parser.addoption("--run-full-mnist", action="store_true",
                     help="also run the full 60k-example, 15-epoch MNIST criteria (slow)")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion reported in the summary")
    config._criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        detail = dict(item.user_properties).get("detail", "")
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2].removeprefix("Skipped: ")
        cid, title = marker.args
        item.config._criteria.append((cid, status, title, detail))


def pytest_terminal_summary(terminalreporter, config):
    if not config._criteria:
        return
    terminalreporter.section("acceptance criteria")
    for cid, status, title, detail in config._criteria:
        line = f"{status}  [{cid}] {title}"
        terminalreporter.write_line(f"{line}  ({detail})" if detail else line)
