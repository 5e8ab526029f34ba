import os
import re
import sys

sys.path.insert(0, os.path.dirname(__file__))

# criterion number -> (passed, detail), filled in by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
ACCEPTANCE_TITLES = {
    1: "numerical core gradient checks",
    2: "loss analytics",
    3: "adversarial loop structure",
    4: "image-level aggregation oracle",
    5: "refinement efficacy",
    6: "decomposition beats the profile baseline",
    7: "end-to-end identification",
    8: "rotation and scaling robustness",
    9: "transfer integrity",
    10: "checkpoint serialization",
    11: "quality metrics",
    12: "run reproducibility",
}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")


_ATTEMPTED: set[int] = set()


def pytest_runtest_logreport(report):
    match = re.search(r"test_criterion_(\d+)", report.nodeid)
    if match and (report.when == "call" or report.failed):
        _ATTEMPTED.add(int(match.group(1)))


def pytest_terminal_summary(terminalreporter):
    if not _ATTEMPTED:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n, title in ACCEPTANCE_TITLES.items():
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            line = f"{'PASS' if ok else 'FAIL'}  {title}: {detail}"
        elif n in _ATTEMPTED:
            line = f"FAIL  {title}: errored before reaching its check"
        else:
            line = f"----  {title}: not run"
        terminalreporter.write_line(f"criterion {n:2d} {line}")
