ACCEPTANCE = {}


def record_criterion(number: int, passed: bool, detail: str = "") -> None:
    """Remember a criterion outcome for the terminal summary, and print it right away."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}" + (f" ({detail})" if detail else "")
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
