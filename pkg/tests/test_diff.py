import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from posekit import diff as ad
from posekit import geometry as geo
from posekit.errors import NearDegenerateSVD, ShapeError


def fd(f, x, h=1e-6):
    # plain float64 central differences, independent of the library helpers
    x = np.array(x, dtype=float)
    g = np.zeros(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = h
        g[i] = (f((x.ravel() + e).reshape(x.shape)) - f((x.ravel() - e).reshape(x.shape))) / (2 * h)
    return g.reshape(x.shape)


def geodesic_np(m, r_gt):
    r = geo.svd_project_so3(m)
    return float(np.arccos(np.clip((np.trace(r.T @ r_gt) - 1) / 2, -1, 1)))


def test_square_gradient():
    value, (g,) = ad.value_and_grad(lambda x: x * x, 3.0)
    assert value == 9.0
    assert g == 6.0


def test_trace_gradient(rng):
    _, (g,) = ad.value_and_grad(ad.trace, rng.standard_normal((3, 3)))
    np.testing.assert_array_equal(g, np.eye(3))


def test_non_scalar_output_rejected():
    tape = ad.Tape()
    x = tape.var(np.ones(3))
    with pytest.raises(ShapeError):
        ad.backward(tape, x * 2.0)


def test_unused_leaf_gets_zero():
    tape = ad.Tape()
    x, y = tape.var(2.0), tape.var(np.ones(2))
    grads = ad.backward(tape, x * x)
    np.testing.assert_array_equal(grads[y], np.zeros(2))


def test_fan_out_accumulates():
    # f = x*x + 3x at x=2 -> 2x + 3 = 7
    _, (g,) = ad.value_and_grad(lambda x: x * x + x * 3.0, 2.0)
    assert g == 7.0


def test_broadcast_gradient_reduces():
    a = np.arange(6.0).reshape(2, 3)
    _, (ga, gb) = ad.value_and_grad(lambda x, b: ad.vsum(x * b), a, np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(ga, np.tile([1.0, 2.0, 3.0], (2, 1)))
    np.testing.assert_array_equal(gb, a.sum(axis=0))


@pytest.mark.parametrize("x", [-0.9, -0.3, 0.2, 0.85])
def test_arccos_gradient(x):
    _, (g,) = ad.value_and_grad(ad.arccos_clamped, x)
    assert g == pytest.approx(-1 / np.sqrt(1 - x * x), rel=1e-12)


def test_arccos_gradient_bounded_at_one():
    _, (g,) = ad.value_and_grad(ad.arccos_clamped, 1.0)
    assert g == 0.0
    _, (g,) = ad.value_and_grad(ad.arccos_clamped, 1.0 - 1e-12)
    assert np.isfinite(g) and abs(g) <= 1 / np.sqrt(1 - (1 - 1e-7) ** 2) + 1e-6


@pytest.mark.parametrize("d, slope", [(0.4, 0.4), (-0.4, -0.4), (2.0, 1.0), (-3.0, -1.0), (1.0, 1.0), (-1.0, -1.0)])
def test_smooth_l1_slopes(d, slope):
    _, (g,) = ad.value_and_grad(lambda p: ad.smooth_l1(p, 0.0), d)
    assert g == pytest.approx(slope)


def test_l2_distance_subgradient_zero_at_coincidence():
    _, (g,) = ad.value_and_grad(lambda a: ad.vsum(ad.l2_distance(a, np.zeros(2))), np.zeros(2))
    np.testing.assert_array_equal(g, np.zeros(2))


def test_getitem_stack_concat_gradients(rng):
    x = rng.standard_normal(5)

    def f(v):
        s = ad.stack([v[0], v[2]])
        c = ad.concat([s, v[3:]])
        return ad.vsum(c * c)

    _, (g,) = ad.value_and_grad(f, x)
    np.testing.assert_allclose(g, fd(lambda v: (v[0] ** 2 + v[2] ** 2 + (v[3:] ** 2).sum()), x), atol=1e-8)


# ---------------------------------------------------------------- SVD projection


def _rot_loss(m, r_gt):
    return ad.value_and_grad(lambda v: ad.mean(ad.arccos_clamped((ad.trace(ad.transpose(ad.svd_project(v)) @ r_gt) - 1.0) * 0.5)), m)


def test_svd_forward_matches_geometry(rng):
    m = rng.standard_normal((3, 3))
    tape = ad.Tape()
    np.testing.assert_allclose(ad.svd_project(tape.var(m)).value, geo.svd_project_so3(m), atol=1e-14)


def test_svd_gradient_random_matrices(rng):
    worst = 0.0
    for _ in range(30):
        r_gt = geo.random_rotation(rng)
        m = r_gt @ geo.rot_x(rng.uniform(0.2, 2.0)) + 0.3 * rng.standard_normal((3, 3))
        if not ad.svd_gap_ok(m) or np.linalg.svd(m, compute_uv=False)[-1] < 0.1:
            continue
        _, (g,) = _rot_loss(m, r_gt)
        worst = max(worst, ad.relative_error(g, fd(lambda x: geodesic_np(x, r_gt), m)))
    assert worst < 1e-5


def test_svd_gradient_near_identity_skew(rng):
    w = 1e-2 * rng.standard_normal(3)
    skew = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]])
    m = np.eye(3) + skew
    r_gt = geo.rot_z(0.5)
    _, (g,) = _rot_loss(m, r_gt)
    assert np.all(np.isfinite(g))
    assert ad.relative_error(g, fd(lambda x: geodesic_np(x, r_gt), m)) < 1e-5


def test_svd_gradient_vanishes_at_minimum(rng):
    r = geo.random_rotation(rng)
    _, (g,) = _rot_loss(r, r)
    assert np.linalg.norm(g) < 1e-6


def test_svd_backward_jacobian_against_fd(rng):
    m = rng.standard_normal((3, 3))
    up = rng.standard_normal((3, 3))
    g = ad.svd_project_backward(m, up)
    np.testing.assert_allclose(g, fd(lambda x: float((geo.svd_project_so3(x) * up).sum()), m), atol=1e-7)


def test_svd_backward_reflection_branch(rng):
    # det < 0 input exercises the sign-corrected factorisation
    m = np.diag([3.0, 2.0, -1.0]) + 0.1 * rng.standard_normal((3, 3))
    up = rng.standard_normal((3, 3))
    np.testing.assert_allclose(
        ad.svd_project_backward(m, up), fd(lambda x: float((geo.svd_project_so3(x) * up).sum()), m), atol=1e-7
    )


@pytest.mark.parametrize("m", [np.diag([1.0, 0.0, 0.0]), np.diag([1.0, 1.0, -1.0])])
def test_svd_backward_degenerate(m):
    with pytest.raises(NearDegenerateSVD):
        ad.svd_project_backward(m, np.ones((3, 3)))
    assert not ad.svd_gap_ok(m)


def test_backward_deterministic(rng):
    m = rng.standard_normal((3, 3))
    r_gt = geo.random_rotation(rng)
    _, (g1,) = _rot_loss(m, r_gt)
    _, (g2,) = _rot_loss(m.copy(), r_gt)
    assert g1.tobytes() == g2.tobytes()


# ---------------------------------------------------------------- helpers


def test_relative_error_definition():
    assert ad.relative_error([1.0], [1.0]) == 0.0
    assert ad.relative_error([2.0], [1.0]) == 0.5
    # floor of 1e-8 on the denominator
    assert ad.relative_error([1e-10], [0.0]) == pytest.approx(1e-2)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_central_difference_on_quadratic(a, b):
    g = ad.central_difference(lambda v: float(v[0] ** 2 + 3 * v[0] * v[1]), [a, b])
    np.testing.assert_allclose(g, [2 * a + 3 * b, 3 * a], atol=1e-6)


def test_report_csv(tmp_path):
    import io

    buf = io.StringIO()
    ad.write_reports_csv([ad.GradCheckReport("rotation", 1.234e-9, 100, 0)], buf)
    assert buf.getvalue() == "op,max_rel_err,trials,seed\nrotation,1.234e-09,100,0\n"
