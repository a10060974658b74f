import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

TITLES = {
    1: "budget compliance (500 tables, 8 tasks, <= 2048 tokens, < 10 s)",
    2: "segmentation coverage/overlap/budget on 1000 tables",
    3: "divide-and-merge round trip (255 labels, 200 instances)",
    4: "tree-rank top-k guarantee (1000 seeds)",
    5: "tree-rank oracle-call bound and layer count",
    6: "noisy tree-rank beats random-permutation MAP",
    7: "metric oracles on 10000 random instances",
    8: "golden prompt fragments for the eight in-domain tasks",
    9: "build determinism and seed sensitivity",
}

_results: dict[int, list[tuple[str, bool, list[str]]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def measure(request):
    """Attach a measured value to the acceptance summary line."""
    def add(text: str) -> None:
        request.node.user_properties.append(("measure", text))
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        notes = [v for k, v in item.user_properties if k == "measure"]
        _results.setdefault(marker.args[0], []).append((item.name, report.passed, notes))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(TITLES):
        runs = _results.get(n)
        if not runs:
            continue
        ok = all(passed for _, passed, _ in runs)
        notes = "; ".join(note for _, _, ns in runs for note in ns)
        failed = [name for name, passed, _ in runs if not passed]
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {TITLES[n]}"
        if notes:
            line += f" [{notes}]"
        if failed:
            line += f" failing: {', '.join(failed)}"
        terminalreporter.write_line(line)
