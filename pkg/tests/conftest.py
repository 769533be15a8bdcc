# Acceptance results are collected here and echoed in the terminal summary,
# one line per criterion, so they survive pytest's output capture.
ACCEPTANCE: list[tuple[int, str, bool, float, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, seconds, note in sorted(ACCEPTANCE):
        line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title} ({seconds:.2f} s)"
        terminalreporter.write_line(line + (f"  [{note}]" if note else ""))
