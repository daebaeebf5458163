import numpy as np
import pytest

from equiswarm import groups
from equiswarm.groups import (
    GroupElement,
    TensorialFeature,
    act_on_feature,
    canonicalize,
    compose,
    identity,
    inverse,
    random_group_element,
    rotation_z,
    translation,
)


def _close(a, b, tol=1e-9):
    return np.allclose(a, b, atol=tol, rtol=0)


def test_compose_identity():
    g = random_group_element(np.random.default_rng(0))
    got = compose(identity(), g)
    assert _close(got.rotation, g.rotation) and _close(got.translation, g.translation)


def test_compose_inverse_is_identity():
    g = random_group_element(np.random.default_rng(1))
    e = compose(g, inverse(g))
    assert _close(e.rotation, np.eye(3)) and _close(e.translation, np.zeros(3))


def test_compose_rotation_then_translation():
    # hand multiply: R_z(90deg) @ (1,0,0) = (0,1,0)
    g = compose(rotation_z(np.pi / 2), translation([1.0, 0.0, 0.0]))
    assert _close(g.rotation, rotation_z(np.pi / 2).rotation)
    assert _close(g.translation, [0.0, 1.0, 0.0])


def test_inverse_trivial_cases():
    e = inverse(identity())
    assert _close(e.rotation, np.eye(3)) and _close(e.translation, np.zeros(3))
    t = inverse(translation([1.0, 2.0, 3.0]))
    assert _close(t.translation, [-1.0, -2.0, -3.0])
    r = inverse(rotation_z(np.pi / 2))
    assert _close(r.rotation, rotation_z(-np.pi / 2).rotation)


def test_associativity_random_triples():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        a, b, c = (random_group_element(rng) for _ in range(3))
        lhs = compose(a, compose(b, c))
        rhs = compose(compose(a, b), c)
        assert _close(lhs.rotation, rhs.rotation) and _close(lhs.translation, rhs.translation)


def test_rotation_invariants_after_long_chain():
    rng = np.random.default_rng(3)
    g = identity()
    for _ in range(10_000):
        g = compose(g, random_group_element(rng, "so3"))
    assert np.linalg.norm(g.rotation.T @ g.rotation - np.eye(3)) <= 1e-9
    assert abs(np.linalg.det(g.rotation) - 1.0) <= 1e-9


def test_action_composition_law_on_features():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        g, h = random_group_element(rng), random_group_element(rng)
        f = TensorialFeature(rng.normal(size=4), rng.normal(size=(3, 3)),
                             positional=[True, False, False])
        lhs = act_on_feature(g, act_on_feature(h, f))
        rhs = act_on_feature(compose(g, h), f)
        assert _close(lhs.vectors, rhs.vectors)
        assert _close(lhs.scalars, rhs.scalars)
        assert _close(lhs.frame.rotation, rhs.frame.rotation)
        assert _close(lhs.frame.translation, rhs.frame.translation)


def test_feature_identity_action_exact():
    rng = np.random.default_rng(5)
    f = TensorialFeature(rng.normal(size=2), rng.normal(size=(2, 3)))
    out = act_on_feature(identity(), f)
    assert (out.scalars == f.scalars).all() and (out.vectors == f.vectors).all()


def test_scalar_only_feature_untouched():
    f = TensorialFeature(np.array([1.0, -2.0, 3.5]), np.zeros((0, 3)))
    g = random_group_element(np.random.default_rng(6))
    out = act_on_feature(g, f)
    assert (out.scalars == f.scalars).all()


def test_vector_channel_rotates():
    f = TensorialFeature(np.zeros(1), np.array([[1.0, 0.0, 0.0]]))
    out = act_on_feature(rotation_z(np.pi / 2), f)
    assert _close(out.vectors[0], [0.0, 1.0, 0.0])


def test_positional_channel_translates():
    f = TensorialFeature(np.zeros(1), np.array([[1.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
                         positional=[True, False])
    out = act_on_feature(translation([0.0, 0.0, 2.0]), f)
    assert _close(out.vectors[0], [1.0, 0.0, 2.0])
    assert _close(out.vectors[1], [1.0, 0.0, 0.0])


def test_feature_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(100):
        g = random_group_element(rng)
        f = TensorialFeature(rng.normal(size=3), rng.normal(size=(4, 3)),
                             positional=[True, False, True, False])
        back = act_on_feature(inverse(g), act_on_feature(g, f))
        assert _close(back.vectors, f.vectors) and _close(back.scalars, f.scalars)


def test_flat12_round_trip():
    g = random_group_element(np.random.default_rng(8))
    g2 = GroupElement.from_flat12(g.to_flat12())
    assert _close(g2.rotation, g.rotation) and _close(g2.translation, g.translation)


# --- canonicalization -------------------------------------------------------


def _point_action(g, x):
    return g.rotation @ x + g.translation


def _vector_action(g, y):
    return g.rotation @ y


def test_canonicalize_identity_body_positional_action():
    # out-action undoes the in-action exactly: F(g, x) = x
    F = canonicalize(lambda x: x, _point_action, _point_action)
    rng = np.random.default_rng(9)
    for _ in range(20):
        g = random_group_element(rng)
        x = rng.normal(size=3)
        assert _close(F(g, x), x, tol=1e-12)


def test_canonicalize_constant_body_invariant_out():
    F = canonicalize(lambda x: 4.25, _point_action, lambda g, y: y)
    rng = np.random.default_rng(10)
    for _ in range(20):
        assert F(random_group_element(rng), rng.normal(size=3)) == 4.25


def test_canonicalize_equivariance_random_mlp():
    rng = np.random.default_rng(11)
    W1 = rng.normal(size=(16, 3))
    W2 = rng.normal(size=(3, 16))

    def body(x):
        return W2 @ np.tanh(W1 @ x)

    F = canonicalize(body, _point_action, _vector_action)
    for _ in range(100):
        g = random_group_element(rng)
        q = random_group_element(rng)
        x = rng.normal(size=3) * 2.0
        lhs = F(compose(q, g), _point_action(q, x))
        rhs = _vector_action(q, F(g, x))
        assert np.linalg.norm(lhs - rhs) <= 1e-5 * (1.0 + np.linalg.norm(rhs))


hypothesis = pytest.importorskip("hypothesis")
from hypothesis import given, settings, strategies as st  # noqa: E402


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_inverse_round_trip_property(seed):
    rng = np.random.default_rng(seed)
    g = random_group_element(rng)
    e = compose(inverse(g), g)
    assert np.allclose(e.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(e.translation, 0.0, atol=1e-9)
