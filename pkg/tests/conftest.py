"""Acceptance tests attach a ``criterion`` and a ``detail`` property; the
terminal summary prints one pass/fail line per criterion."""
import re

_ACCEPTANCE = []


def _verdict(report) -> str:
    if hasattr(report, "wasxfail"):
        return "FAIL (known, recorded as expected failure)"
    if report.outcome == "failed" and str(report.longrepr).startswith("[XPASS(strict)]"):
        return "PASS (marked as expected failure; remove the marker)"
    return "PASS" if report.outcome == "passed" else "FAIL"


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    named = re.search(r"test_c(\d+)([a-z]?)_", report.nodeid)
    if "criterion" not in props and named and "test_acceptance" in report.nodeid:
        props["criterion"] = str(int(named.group(1))) + named.group(2)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE.append((props["criterion"], _verdict(report), props.get("detail", "")))


def _order(label: str):
    number, suffix = re.fullmatch(r"(\d+)(\w*)", label).groups()
    return int(number), suffix


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, verdict, detail in sorted(_ACCEPTANCE, key=lambda r: _order(r[0])):
        terminalreporter.write_line(f"criterion {label:>3}: {verdict}  {detail}")
