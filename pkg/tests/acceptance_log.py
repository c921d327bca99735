"""Shared pass/fail record for the acceptance suite, printed at the end of the run."""

from contextlib import contextmanager

RESULTS: dict[int, tuple[bool, str]] = {}


@contextmanager
def criterion(number: int, title: str):
    details: list[str] = []
    try:
        yield details
    except BaseException:
        RESULTS[number] = (False, f"{title} [{'; '.join(details)}]")
        raise
    RESULTS[number] = (True, f"{title} [{'; '.join(details)}]")
