import numpy as np

from snnguard import analysis, verification


def test_all_suites_pass():
    results = verification.run_all()
    for r in results:
        assert r.passed, r.line()


def test_quick_suites_pass():
    assert all(r.passed for r in verification.run_all(quick=True))


def test_fixture_geometry():
    m = verification.tiny_region_model()
    v = verification.TINY_CENTER @ verification.TINY_WEIGHT.T
    assert abs(v[0] - 1.01) < 1e-12
    assert np.all(np.abs(v[1:] - 1.0) >= 0.2)
    assert m.t_steps == 1 and m.decoder == "membrane"


def test_suite_line_format():
    r = verification.sigma_sensitivity()
    assert r.line().startswith("PASS noise-scale sensitivity")
