import numpy as np
import pytest

from infbeta.errors import DomainError
from infbeta.links import LinkKind, link_apply, link_derivatives, link_inverse

UNIT = ["logit", "probit", "cloglog", "loglog"]
POSITIVE = ["log", "sqrt"]


def interior(kind):
    if LinkKind.parse(kind).unit_domain:
        return np.linspace(0.01, 0.99, 100)
    return np.geomspace(0.01, 100.0, 100)


def test_values():
    assert link_apply("logit", 0.5) == 0.0
    assert link_apply("log", 1.0) == 0.0
    assert link_apply("cloglog", 1 - np.exp(-1)) == pytest.approx(0.0, abs=1e-15)
    assert link_inverse("logit", 0.0) == 0.5
    assert link_inverse("probit", 0.0) == 0.5
    assert link_inverse("log", 2.0) == pytest.approx(np.exp(2.0), rel=1e-15)
    assert link_inverse("log", 2.0) == pytest.approx(7.389056, abs=1e-6)


def test_derivative_values():
    assert link_derivatives("logit", 0.5) == (pytest.approx(4.0), pytest.approx(0.0))
    assert link_derivatives("log", 2.0) == (pytest.approx(0.5), pytest.approx(-0.25))


@pytest.mark.parametrize("kind", UNIT + POSITIVE)
def test_round_trip(kind):
    x = interior(kind)
    np.testing.assert_allclose(link_inverse(kind, link_apply(kind, x)), x, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("kind", UNIT + POSITIVE)
def test_increasing(kind):
    assert np.all(np.diff(link_apply(kind, interior(kind))) > 0)


@pytest.mark.parametrize("kind", UNIT + POSITIVE)
def test_derivatives_match_differences(kind):
    x = interior(kind)[5:-5]
    h = 1e-5 * x
    d1, d2 = link_derivatives(kind, x)
    fd1 = (link_apply(kind, x + h) - link_apply(kind, x - h)) / (2 * h)
    g1p, _ = link_derivatives(kind, x + h)
    g1m, _ = link_derivatives(kind, x - h)
    fd2 = (g1p - g1m) / (2 * h)
    np.testing.assert_allclose(d1, fd1, rtol=1e-6)
    np.testing.assert_allclose(d2, fd2, rtol=1e-6, atol=1e-6 * np.max(np.abs(d2)))


def test_probit_point():
    h = 1e-6
    d1, d2 = link_derivatives("probit", 0.3)
    fd = (link_apply("probit", 0.3 + h) - link_apply("probit", 0.3 - h)) / (2 * h)
    assert d1 == pytest.approx(fd, rel=1e-6)


@pytest.mark.parametrize("kind", UNIT)
@pytest.mark.parametrize("x", [0.0, 1.0, -0.2, 1.5])
def test_unit_domain(kind, x):
    with pytest.raises(DomainError):
        link_apply(kind, x)
    with pytest.raises(DomainError):
        link_derivatives(kind, x)


def test_positive_domain():
    with pytest.raises(DomainError):
        link_apply("log", 0.0)
    with pytest.raises(DomainError):
        link_inverse("sqrt", -0.1)


def test_clamped_inverse():
    assert link_inverse("logit", 100.0) == 1 - 1e-12
    assert link_inverse("logit", -100.0) == 1e-12
    assert link_inverse("log", -1000.0) == 1e-12


def test_parse():
    assert LinkKind.parse("LOGIT") is LinkKind.LOGIT
    with pytest.raises(DomainError):
        LinkKind.parse("identity")
