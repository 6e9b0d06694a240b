"""Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def report(number, title, ok, detail=""):
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
    LINES.append(line)
    print(line)
    return ok
