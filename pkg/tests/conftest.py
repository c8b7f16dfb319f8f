import pytest

from lampwalk.construction import DESK, cached_build
from lampwalk.group import LAMPLIGHTER


@pytest.fixture(scope="session")
def desk(request):
    """The default desk construction (4 levels, hybrid regions).

    Built once and kept in pytest's cache directory; the file name is a digest
    of every build input, so a stale file is never picked up.
    """
    cache_dir = request.config.cache.mkdir("lampwalk-levels")
    levels, path = cached_build(cache_dir, LAMPLIGHTER, DESK, 4, regions="auto")
    return levels, path


_CRITERIA = pytest.StashKey[dict]()


class _Criterion:
    def __init__(self, results: dict, number: int):
        self.results = results
        self.number = number

    def record(self, passed: bool, detail: str) -> bool:
        self.results[self.number] = (passed, detail)
        print(f"criterion {self.number}: {'PASS' if passed else 'FAIL'}  {detail}")
        return passed


@pytest.fixture
def criterion(request):
    """Recorder for one acceptance criterion; the number comes from the test's
    ``criterion`` marker.  A test that errors before recording counts as FAIL."""
    number = request.node.get_closest_marker("criterion").args[0]
    results = request.config.stash.setdefault(_CRITERIA, {})
    yield _Criterion(results, number)
    results.setdefault(number, (False, "did not complete"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        passed, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
