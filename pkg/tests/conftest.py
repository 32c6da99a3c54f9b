import numpy as np
import pytest

from nfbeam.channel import ArrayGeometry, PathLossModel, UePolar, channel_matrix


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_channel(rng, n_t, k, scale=1.0):
    return scale * (rng.standard_normal((n_t, k)) + 1j * rng.standard_normal((n_t, k))) / np.sqrt(2)


def near_field_channel(n_t=16, ues=((3.0, 0.2), (4.0, -0.4)), f_c=28e9):
    geom = ArrayGeometry(n_t, f_c)
    return channel_matrix(geom, [UePolar(r, a) for r, a in ues], PathLossModel())


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
