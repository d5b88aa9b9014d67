ACCEPTANCE: dict[int, tuple[str, str]] = {}


def record_acceptance(number: int, status: str, detail: str) -> None:
    ACCEPTANCE[number] = (status, detail)
    print(f"criterion {number:2d}: {status} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status} - {detail}")
