import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def brute_dct2(x: np.ndarray) -> np.ndarray:
    """Direct double-sum orthonormal DCT-II, O(N^2 M^2)."""
    n, m = x.shape
    out = np.zeros((n, m))
    for u in range(n):
        for v in range(m):
            au = np.sqrt(1.0 / n) if u == 0 else np.sqrt(2.0 / n)
            av = np.sqrt(1.0 / m) if v == 0 else np.sqrt(2.0 / m)
            s = 0.0
            for i in range(n):
                for j in range(m):
                    s += x[i, j] * np.cos(np.pi * (2 * i + 1) * u / (2 * n)) * np.cos(np.pi * (2 * j + 1) * v / (2 * m))
            out[u, v] = au * av * s
    return out


# ---------------------------------------------------------------- acceptance summary

ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(n, passed, detail)`` records one acceptance verdict and prints it."""

    def record(n: int, passed: bool | None, detail: str) -> None:
        status = "SKIP" if passed is None else "PASS" if passed else "FAIL"
        ACCEPTANCE[n] = (status, detail)
        print(f"criterion {n}: {status}: {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}: {detail}")
