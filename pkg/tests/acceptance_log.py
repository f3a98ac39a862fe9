"""One result line per acceptance criterion, printed in the terminal summary."""

LINES = []


def record(number, passed, detail):
    LINES.append(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
    return passed
