#!/usr/bin/env python3

import numpy as np
import pytest

from izaber_catt.errors import ConditioningError, DomainError, InputError, ParseError, PositivityError, ValidationError
from izaber_catt.oracle import (
    CATALOG,
    AffineScorer,
    FrontDoorScm,
    backdoor,
    chained_front_door,
    confounded_binary,
    do_z,
    front_door,
    intervene_truth,
    joint,
    load_scm,
    nwgm_gap,
    observational,
    oracle_report,
    random_scm,
    save_scm,
    total_variation,
    unconfounded_binary,
    wgm,
)

TOL = 1e-12


def _close(a, b, tol=TOL):
    return a.max_abs_diff(b) <= tol


def _brute_observational(scm, x):
    full = joint(scm)
    xy = full.sum(axis=(0, 2))
    return xy[x] / xy[x].sum()


def _brute_truth(scm, x):
    nc, nx, nz, ny = scm.sizes
    out = np.zeros(ny)
    for c in range(nc):
        for z in range(nz):
            out += scm.p_c[c] * scm.p_z_given_x[x, z] * scm.p_y_given_zc[z, c]
    return out


def test_confounded_binary_values():
    scm = confounded_binary()
    obs = observational(scm, 1)
    truth = intervene_truth(scm, 1)
    assert abs(obs[1] - 0.692) <= TOL
    assert abs(truth[1] - 0.5) <= TOL
    assert np.allclose(obs.probabilities, _brute_observational(scm, 1), atol=TOL)
    assert np.allclose(truth.probabilities, _brute_truth(scm, 1), atol=TOL)
    assert _close(front_door(scm, 1), truth)
    assert _close(backdoor(scm, 1), truth)
    assert abs(do_z(scm, 1)[1] - 0.5) <= TOL
    assert abs(total_variation(obs, truth) - 0.192) <= TOL


def test_confounding_witness():
    scm = CATALOG["confounded-binary"]()
    worst = max(total_variation(observational(scm, x), intervene_truth(scm, x)) for x in range(2))
    assert worst > 0.05


def test_unconfounded_scm_agrees_everywhere():
    scm = unconfounded_binary()
    for x in range(2):
        truth = intervene_truth(scm, x)
        for estimate in (observational(scm, x), front_door(scm, x), backdoor(scm, x)):
            assert _close(estimate, truth)
        report = oracle_report(scm, x)
        assert report.max_deviation <= TOL
        assert report.confounding_bias <= TOL


def test_deterministic_chain():
    scm = FrontDoorScm([1.0], [[0.5, 0.5]], np.eye(2), np.eye(2).reshape(2, 1, 2))
    for x in range(2):
        assert observational(scm, x).as_list() == [1.0 - x, float(x)]
        assert _close(backdoor(scm, x), observational(scm, x))


def test_y_deterministic_in_z_and_inert_confounder():
    scm = FrontDoorScm([0.3, 0.7], [[0.8, 0.2], [0.25, 0.75]], [[0.7, 0.3], [0.4, 0.6]],
                       np.repeat(np.eye(2)[:, None, :], 2, axis=1))
    for z in range(2):
        assert abs(do_z(scm, z)[z] - 1.0) <= TOL
    for x in range(2):
        expected = scm.p_z_given_x[x]
        assert np.allclose(intervene_truth(scm, x).probabilities, expected, atol=TOL)
        assert np.allclose(observational(scm, x).probabilities, expected, atol=TOL)


def test_single_treatment_and_single_confounder():
    scm = random_scm((3, 1, 2, 3), seed=5)
    assert _close(front_door(scm, 0), observational(scm, 0))
    scm = random_scm((1, 3, 2, 2), seed=6)
    for x in range(3):
        assert _close(backdoor(scm, x), observational(scm, x))


def test_identifiability_over_random_scms():
    rng = np.random.default_rng(2024)
    worst = {"front_door": 0.0, "backdoor": 0.0, "chain": 0.0, "total": 0.0}
    for seed in range(1000):
        sizes = tuple(int(s) for s in rng.integers(2, 6, size=4))
        scm = random_scm(sizes, seed=seed, floor=1e-3)
        for x in range(sizes[1]):
            truth = intervene_truth(scm, x)
            fd = front_door(scm, x)
            worst["front_door"] = max(worst["front_door"], fd.max_abs_diff(truth))
            worst["backdoor"] = max(worst["backdoor"], backdoor(scm, x).max_abs_diff(truth))
            worst["chain"] = max(worst["chain"], chained_front_door(scm, x).max_abs_diff(fd))
            worst["total"] = max(worst["total"], abs(fd.probabilities.sum() - 1.0))
    assert all(v <= TOL for v in worst.values()), worst


def test_random_scm_is_seeded_and_valid():
    a, b = random_scm((3, 4, 2, 5), seed=9), random_scm((3, 4, 2, 5), seed=9)
    assert np.array_equal(a.p_y_given_zc, b.p_y_given_zc)
    for table in (a.p_c, a.p_x_given_c, a.p_z_given_x, a.p_y_given_zc):
        assert np.max(np.abs(table.sum(axis=-1) - 1.0)) <= TOL
        assert np.all(table > 0)


def test_malformed_cpt_names_the_row():
    with pytest.raises(ValidationError) as err:
        FrontDoorScm([0.5, 0.5], [[0.5, 0.4], [0.5, 0.5]], np.eye(2), np.full((2, 2, 2), 0.5))
    assert "P(X|C)" in str(err.value)
    assert "C=0" in str(err.value)


def test_positivity_and_conditioning_errors():
    scm = FrontDoorScm([0.5, 0.5], [[1.0, 0.0], [0.5, 0.5]], [[0.6, 0.4], [0.3, 0.7]], np.full((2, 2, 2), 0.5))
    with pytest.raises(PositivityError) as err:
        backdoor(scm, 1)
    assert err.value.cell == (1, 0)

    scm = FrontDoorScm([1.0], [[0.5, 0.5]], [[1.0, 0.0], [0.5, 0.5]], np.full((2, 1, 2), 0.5))
    with pytest.raises(PositivityError) as err:
        front_door(scm, 1)
    assert err.value.cell == (0, 1)

    scm = FrontDoorScm([1.0], [[1.0, 0.0]], np.eye(2), np.full((2, 1, 2), 0.5))
    with pytest.raises(ConditioningError):
        observational(scm, 1)
    assert intervene_truth(scm, 1).as_list() == [0.5, 0.5]


def test_wgm():
    assert wgm([3.5], [1.0]) == pytest.approx(3.5, abs=1e-15)
    assert abs(wgm([2.0, 8.0], [0.5, 0.5]) - 4.0) <= TOL
    rng = np.random.default_rng(31)
    for _ in range(100):
        n = int(rng.integers(1, 8))
        g = rng.uniform(-3.0, 3.0, size=n)
        w = rng.dirichlet(np.ones(n))
        w = w / w.sum()
        assert abs(wgm(np.exp(g), w) - np.exp(np.dot(w, g))) <= TOL
    with pytest.raises(DomainError):
        wgm([1.0, 0.0], [0.5, 0.5])
    with pytest.raises(InputError):
        wgm([1.0, 2.0], [0.7, 0.7])


def test_nwgm_gap():
    g = AffineScorer(np.eye(2), np.eye(2))
    point = nwgm_gap(g, [1.0], [1.0], [[0.3, -1.0]], [[2.0, 0.5]])
    assert point.gap <= TOL

    rng = np.random.default_rng(32)
    constant = AffineScorer(np.zeros((2, 3)), np.zeros((2, 3)), rng.normal(size=3))
    result = nwgm_gap(constant, [0.2, 0.8], [0.6, 0.4], rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
    assert result.gap <= TOL

    result = nwgm_gap(g, [0.5, 0.5], [1.0], [[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0]])

    def softmax(v):
        e = np.exp(v - max(v))
        return e / e.sum()

    exact = 0.5 * softmax(np.array([2.0, 0.0])) + 0.5 * softmax(np.array([1.0, 1.0]))
    approx = softmax(np.array([1.5, 0.5]))
    assert np.allclose(result.exact.probabilities, exact, atol=TOL)
    assert np.allclose(result.approx.probabilities, approx, atol=TOL)
    assert abs(result.gap - np.max(np.abs(exact - approx))) <= TOL
    assert result.gap > 0.01

    with pytest.raises(InputError):
        nwgm_gap(g, [0.5, 0.6], [1.0], [[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0]])


def test_scm_file_round_trip(tmp_path):
    path = str(tmp_path / "scm.yaml")
    scm = random_scm((2, 3, 4, 2), seed=12)
    save_scm(scm, path)
    loaded = load_scm(path)
    for name in ("p_c", "p_x_given_c", "p_z_given_x", "p_y_given_zc"):
        assert np.array_equal(getattr(loaded, name), getattr(scm, name))

    scm = FrontDoorScm(
        p_c=[0.1, 0.9],
        p_x_given_c=[[1.0, 0.0], [0.3, 0.7]],
        p_z_given_x=[[0.8, 0.2], [0.2, 0.8]],
        p_y_given_zc=confounded_binary().p_y_given_zc,
    )
    save_scm(scm, path)
    with open(path) as f:
        text = f.read()
    assert "p_c: [0.10000000000000001, 0.90000000000000002]" in text
    assert "[1.0, 0.0]" in text
    assert "0.29999999999999999" in text
    loaded = load_scm(path)
    assert np.array_equal(loaded.p_x_given_c, scm.p_x_given_c)
    assert loaded.p_x_given_c.dtype == np.float64

    bad = tmp_path / "bad.yaml"
    bad.write_text("sizes: {C: 1, X: 1, Z: 1, Y: 1}\np_c: [1.0]\n")
    with pytest.raises(ParseError):
        load_scm(str(bad))


def test_report_format():
    text = oracle_report(confounded_binary(), 1).format()
    for label in ("observational", "front_door", "backdoor", "intervene_truth", "do_z[0]", "do_z[1]",
                  "max_deviation"):
        assert label in text


if __name__ == '__main__':
    test_confounded_binary_values()
    test_confounding_witness()
    test_identifiability_over_random_scms()
    test_wgm()
    test_nwgm_gap()
