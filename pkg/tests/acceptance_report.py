"""Collects one line per acceptance criterion for the end-of-run summary."""
RESULTS: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> str:
    RESULTS[criterion] = (passed, detail)
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    return line
