"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

LINES: list[str] = []


def record(number, ok: bool, detail: str) -> bool:
    LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def note(detail: str) -> None:
    LINES.append(f"             info  {detail}")
