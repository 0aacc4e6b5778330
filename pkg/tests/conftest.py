import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Replay the acceptance report lines after capture has ended."""
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "REPORT_LINES", None)
    if lines:
        terminalreporter.section("acceptance report")
        for line in lines:
            terminalreporter.write_line(line)
