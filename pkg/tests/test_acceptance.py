"""One pass/fail line per acceptance criterion.

Monte Carlo criteria read cached pipeline runs from ``SKLAB_ACCEPTANCE_DIR``
(default ``acceptance_runs/`` in the repository) and compute them when the
cache is empty; ``python -m sklab.acceptance --warm`` fills it ahead of time.
``SKLAB_ACCEPTANCE_PRESET=full`` switches to the larger path counts.
"""
import os
from pathlib import Path

import pytest

from sklab import acceptance as A

from conftest import ACCEPTANCE_LINES

ROOT = Path(os.environ.get("SKLAB_ACCEPTANCE_DIR", Path(__file__).resolve().parents[1] / "acceptance_runs"))
PRESET = os.environ.get("SKLAB_ACCEPTANCE_PRESET", "box")


def record(out, max_seconds=None):
    line = out.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert out.passed, line
    if max_seconds is not None:
        assert out.seconds < max_seconds, f"AC{out.criterion} took {out.seconds:.1f} s"


def test_tolerances_pinned():
    assert (A.SKOROKHOD_PATHS, A.SKOROKHOD_STEPS, A.SKOROKHOD_SECONDS) == (10_000, 512, 10.0)
    assert (A.LAPLACIAN_TOL, A.FOURIER_POISSON_TOL) == (1e-4, 1e-4)
    assert (A.FOURIER_PROBES, A.PROBE_MIN_HEIGHT) == (100, 0.05)
    assert A.GRADIENT_SPREAD == 0.20
    assert A.EXIT_NSIGMA == 3.0
    assert A.KS_LEVEL == 0.01
    assert A.SLOPE_REL == 0.35
    assert A.GREEN_TOL == 1e-12
    assert A.DET_RANGE == (0.5, 2.0) and A.DHD_FLOOR == 0.1
    assert A.TREND_LEVEL == 0.05
    assert A.DETERMINISM_WORKERS == (1, 2, 8)
    assert A.PRESETS["full"]["ac4_sym"] == A.PRESETS["full"]["ac5"] == A.PRESETS["full"]["ac9"] == 10_000
    cf = A.configs(ROOT, "full")
    assert cf["ac4_sym"].js == [5] and cf["ac4_sym"].stop == {"kind": "annulus", "a0": 0.5, "a1": 2.0}
    assert cf["ac4_asym"].js == [3] and cf["ac4_asym"].stop["a0"] * 2**-3 == 2**-4
    assert cf["ac4_asym"].stop["a1"] * 2**-3 == 1.0
    assert cf["ac5"].js == [6] and cf["ac5"].stop == {"kind": "clock", "b": 1.0}
    assert cf["ac6"].js == [4, 5, 6, 7] and cf["ac9"].js == [4, 5, 6, 7, 8]
    assert cf["ac9"].gammas == [0.3, 0.7]
    assert all(c.dt is None for c in cf.values())  # dt = 4^-(j+4) per cell


def test_ac1_skorokhod_exact():
    record(A.ac1_skorokhod())


def test_ac2_field_construction():
    record(A.ac2_field(), max_seconds=120)


def test_ac3_gradient_blowup_normalized():
    record(A.ac3_gradient(), max_seconds=300)


def test_ac4_bessel_exit():
    record(A.ac4_exit(ROOT, PRESET))


def test_ac5_time_change():
    record(A.ac5_time_change(ROOT, PRESET))


def test_ac6_local_time_scaling():
    record(A.ac6_local_time(ROOT, PRESET))


def test_ac7_green_sum():
    record(A.ac7_green_sum(), max_seconds=1)


def test_ac8_mapping_certificates():
    record(A.ac8_mapping(), max_seconds=600)


def test_ac9_divergence_contrast():
    record(A.ac9_divergence(ROOT, PRESET))


def test_ac10_determinism():
    record(A.ac10_determinism(ROOT, PRESET))
