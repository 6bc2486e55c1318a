import numpy as np
import pytest

from maxhom.coeffs import (CoefficientError, CoefficientPart, CoefficientSpec,
                           ScaleSchedule, eval_coefficient, eval_fine,
                           sym_eigenvalues, validate_bounds)

LAYERED = {"scale": 1, "axis": 0, "offset": 2.0, "amplitude": 1.0}


def make_spec(a_fam="layered", a_par=None, b_fam="layered", b_par=None,
              d=2, n=1, alpha=1.0, beta=3.0):
    return CoefficientSpec(
        d, n,
        a=CoefficientPart(a_fam, a_par if a_par is not None else dict(LAYERED)),
        b=CoefficientPart(b_fam, b_par if b_par is not None else dict(LAYERED)),
        alpha=alpha, beta=beta)


def test_constant_identity():
    spec = make_spec("constant", {"value": 1.0}, "constant", {"value": np.eye(2)},
                     alpha=0.5, beta=2.0)
    x = np.random.default_rng(0).random((7, 2))
    ys = [np.random.default_rng(1).random((7, 2))]
    out = eval_coefficient(spec, x, ys, "b")
    assert np.array_equal(out, np.broadcast_to(np.eye(2), (7, 2, 2)))
    assert np.array_equal(eval_coefficient(spec, x, ys, "a"), np.ones((7, 1, 1)))


def test_layered_point_value():
    # b(y1) = (2 + sin 2 pi y11) I at y1 = (0.25, 0): sin(pi/2) = 1 -> 3 I
    spec = make_spec()
    out = eval_coefficient(spec, [[0.5, 0.5]], [np.array([[0.25, 0.0]])], "b")
    assert np.allclose(out[0], 3.0 * np.eye(2), atol=1e-14)


def test_bounds_violation_raises():
    # declared alpha=1 but the profile dips to 0.5
    spec = make_spec(a_par={"scale": 1, "axis": 0, "offset": 1.5, "amplitude": 1.0},
                     alpha=1.0, beta=3.0)
    with pytest.raises(CoefficientError):
        eval_coefficient(spec, [[0.5, 0.5]], [np.array([[0.75, 0.0]])], "a")


def test_dimension_mismatch():
    spec = make_spec()
    with pytest.raises(CoefficientError):
        eval_coefficient(spec, [[0.5, 0.5, 0.5]], [np.zeros((1, 3))], "b")
    with pytest.raises(CoefficientError):
        eval_coefficient(spec, [[0.5, 0.5]], [], "b")


def test_eval_fine_constant():
    spec = make_spec("constant", {"value": 1.25}, "constant", {"value": 1.25},
                     alpha=1.0, beta=2.0)
    sched = ScaleSchedule(0.25)
    x = np.random.default_rng(2).random((11, 2))
    vals = eval_fine(spec, sched, x, "b")
    assert np.allclose(vals, 1.25 * np.eye(2), atol=0)


def test_eval_fine_layered_quarter():
    # eps = 1/4 at x = (1/8, 0): y = x/eps mod 1 = (1/2, 0)
    spec = make_spec()
    sched = ScaleSchedule(0.25)
    out = eval_fine(spec, sched, [[0.125, 0.0]], "b")
    assert np.allclose(out[0], (2.0 + np.sin(np.pi)) * np.eye(2), atol=1e-14)


def test_eval_fine_two_scale_modular():
    # eps = (1/4, 1/16), x = (3/16, 0): y1 = 3/4, y2 = 3 mod 1 = 0
    fac = [{"offset": 2.0, "amplitude": 1.0, "axis": 0},
           {"offset": 2.0, "amplitude": 0.5, "axis": 0}]
    spec = make_spec("separable-product", {"factors": fac},
                     "separable-product", {"factors": fac}, n=2, alpha=1.0, beta=9.0)
    sched = ScaleSchedule(0.25, (4,))
    out = eval_fine(spec, sched, [[3.0 / 16.0, 0.0]], "b")
    expect = (2.0 + np.sin(2 * np.pi * 0.75)) * (2.0 + 0.5 * np.sin(0.0))
    assert np.allclose(out[0], expect * np.eye(2), atol=1e-13)


def test_validate_bounds_constant():
    spec = make_spec("constant", {"value": 1.0}, "constant", {"value": 1.0},
                     alpha=1.0, beta=1.0)
    lo, hi = validate_bounds(spec, 5)
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)


def test_validate_bounds_layered_scan():
    # dense-grid eigenvalue scan of 2 + sin: range approaches (1, 3)
    spec = make_spec()
    lo, hi = validate_bounds(spec, 101)
    assert lo == pytest.approx(1.0, abs=5e-3)
    assert hi == pytest.approx(3.0, abs=5e-3)


def test_validate_bounds_warns_on_negative_region():
    spec = make_spec("expression", {"code": "np.sin(2*pi*ys[0][:,0]) - 0.2"},
                     alpha=0.5, beta=2.0)
    with pytest.warns(UserWarning):
        lo, _ = validate_bounds(spec, 21)
    assert lo <= 0.0


@pytest.mark.parametrize("fam,par", [
    ("layered", LAYERED),
    ("trigonometric", {"scale": 1, "offset": 2.0, "amplitude": 0.8}),
    ("separable-product", {"factors": [{"offset": 2.0, "amplitude": 1.0, "axis": 0}]}),
])
def test_periodicity_exact(fam, par):
    spec = make_spec(fam, dict(par), "constant", {"value": 1.0}, alpha=0.1, beta=9.0)
    rng = np.random.default_rng(3)
    x = rng.random((50, 2))
    y = rng.random((50, 2))
    base = spec.eval_a(x, [y])
    for j in range(2):
        shifted = spec.eval_a(x, [y + np.eye(2)[j]])
        assert np.allclose(base, shifted, rtol=0, atol=1e-12)


def test_symmetry_every_evaluation():
    spec = make_spec(b_par={"scale": 1, "axis": 1, "offset": 2.0, "amplitude": 1.0,
                            "base": [[2.0, 0.5], [0.5, 1.0]]}, alpha=0.5, beta=9.0)
    rng = np.random.default_rng(4)
    vals = eval_coefficient(spec, rng.random((40, 2)), [rng.random((40, 2))], "b")
    assert np.abs(vals - vals.transpose(0, 2, 1)).max() == 0.0


def test_fine_scale_consistency_random_points():
    fac = [{"offset": 2.0, "amplitude": 1.0, "axis": 0},
           {"offset": 2.0, "amplitude": 0.5, "axis": 1}]
    spec = make_spec("separable-product", {"factors": fac},
                     "separable-product", {"factors": fac}, n=2, alpha=1.0, beta=9.0)
    sched = ScaleSchedule(0.125, (8,))
    rng = np.random.default_rng(5)
    x = rng.random((1000, 2))
    fine = eval_fine(spec, sched, x, "b")
    ys = [np.mod(x / e, 1.0) for e in sched.epsilons]
    manual = eval_coefficient(spec, x, ys, "b")
    assert np.allclose(fine, manual, rtol=0, atol=1e-14)


def test_schedule_invariants():
    s = ScaleSchedule(0.25, (4, 2))
    assert s.epsilons == (0.25, 0.0625, 0.03125)
    with pytest.raises(CoefficientError):
        ScaleSchedule(0.3)  # 1/eps not integral
    with pytest.raises(CoefficientError):
        ScaleSchedule(0.25, (1,))  # ratio < 2
    ScaleSchedule(0.3, require_integer_inverse=False)


def test_eigenvalue_closed_forms_match_numpy():
    rng = np.random.default_rng(6)
    for d in (2, 3):
        A = rng.standard_normal((30, d, d))
        A = 0.5 * (A + A.transpose(0, 2, 1))
        mine = np.sort(sym_eigenvalues(A), axis=-1)
        ref = np.linalg.eigvalsh(A)
        assert np.allclose(mine, ref, atol=1e-10)
