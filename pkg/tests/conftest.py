import re

import pytest

# key such as "8a alignment ..." -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def _number(key: str) -> int:
    return int(re.match(r"\d+", key).group())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    numbers = sorted({_number(k) for k in ACCEPTANCE})
    for n in numbers:
        parts = [(k, *ACCEPTANCE[k]) for k in sorted(ACCEPTANCE) if _number(k) == n]
        ok = all(p[1] for p in parts)
        detail = " | ".join(f"{k}: {d}" for k, _, d in parts)
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {detail}")


@pytest.fixture
def record():
    def _record(key: str, ok: bool, detail: str) -> None:
        ACCEPTANCE[key] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}", flush=True)

    return _record
