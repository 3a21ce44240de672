"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES: dict[int, str] = {}


def record(number: int, passed: bool, title: str, detail: str) -> bool:
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
    LINES[number] = line
    print(line)
    return passed
