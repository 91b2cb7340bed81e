from importlib.resources import files

import pytest

from groupcf.model import TrainConfig, train_boosted
from groupcf.tabular import FeatureSchema, compute_stats, load_dataset, split

DATA_DIR = files("groupcf") / "data"
ADULT_SCHEMA = DATA_DIR / "adult_schema.json"
ADULT_CSV = DATA_DIR / "adult_10k.csv"

_criteria: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, text = marker
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = "PASS" if report.outcome == "passed" else "FAIL"
        measured = [str(v) for k, v in report.user_properties if k == "measured"]
        if measured:
            text = f"{text} [measured: {'; '.join(measured)}]"
        prev = _criteria.get(number)
        if prev is None or prev[0] == "PASS":
            _criteria[number] = (outcome, text)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        report.criterion = (str(m.args[0]), m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria, key=lambda n: int(n)):
        outcome, text = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {outcome}  {text}")


@pytest.fixture(scope="session")
def adult_schema():
    return FeatureSchema.from_json(ADULT_SCHEMA)


@pytest.fixture(scope="session")
def adult(adult_schema):
    return load_dataset(ADULT_CSV, adult_schema)


@pytest.fixture(scope="session")
def adult_split(adult):
    return split(adult, 0.2, 0)


@pytest.fixture(scope="session")
def adult_train(adult_split):
    return adult_split[0]


@pytest.fixture(scope="session")
def adult_stats(adult_train):
    return compute_stats(adult_train)


@pytest.fixture(scope="session")
def adult_model(adult_train):
    return train_boosted(adult_train, TrainConfig())
