import numpy as np
import pytest

from mvhash.synthetic import write_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_data_dir(tmp_path_factory):
    """Small synthetic CIFAR-format directory (60 images per class)."""
    return write_dataset(tmp_path_factory.mktemp("tiny") / "data", 60, seed=11)


_CRITERIA: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, label): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        detail = ""
        if rep.skipped and isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2].removeprefix("Skipped: ")
        source = item.callspec.params.get("source") if hasattr(item, "callspec") else None
        label = f"{mark.args[0]:>2} {mark.args[1]}" + (f" [{source}]" if source else "")
        _CRITERIA.append((label, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _CRITERIA:
        terminalreporter.write_line(f"{status:4}  criterion {name}" + (f"  ({detail})" if detail else ""))
