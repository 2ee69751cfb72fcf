import numpy as np
import pytest

from betaensemble.basis import (
    Realization,
    basis_for,
    bergman_function,
    bergman_integral,
    bergman_values,
    build_basis,
    dimension,
    export_gram,
    gram,
    leading_dimension,
    lp_difference,
    orthonormal_basis,
    orthonormalize,
    section_norm_ratios,
    weighted_row,
    weighted_rows,
)
from betaensemble.domain import (
    AmbientModel,
    BaseMeasure,
    Density,
    Weight,
    WeightKind,
    WeightedDomain,
    evaluation_grid,
)
from betaensemble.exceptions import (
    BasisException,
    DomainException,
    SingularGramException,
)


def _linear(domain: WeightedDomain, slope: float) -> WeightedDomain:
    return WeightedDomain(
        model=domain.model,
        region=domain.region,
        phi=Weight(WeightKind.LINEAR, (slope,)),
    )


@pytest.mark.parametrize(
    "model, p, expected",
    [
        (AmbientModel.euclidean(1), 0, 1),
        (AmbientModel.euclidean(1), 5, 6),
        (AmbientModel.euclidean(2), 2, 6),
        (AmbientModel.euclidean(3), 2, 10),
        (AmbientModel.sphere(1), 4, 9),
        (AmbientModel.sphere(2), 3, 16),
    ],
)
def test_dimension(model, p, expected):
    assert dimension(model, p) == expected
    assert build_basis(model, p).n_p == expected


@pytest.mark.parametrize(
    "model", [AmbientModel.euclidean(2), AmbientModel.sphere(1), AmbientModel.sphere(2)]
)
def test_leading_dimension(model):
    ratio = dimension(model, 200) / leading_dimension(model, 200)
    assert ratio == pytest.approx(1.0, abs=0.02)


def test_negative_degree():
    with pytest.raises(BasisException):
        dimension(AmbientModel.euclidean(1), -1)
    with pytest.raises(BasisException):
        build_basis(AmbientModel.sphere(1), -2)


def test_monomial_eval():
    basis = build_basis(AmbientModel.euclidean(1), 2, Realization.MONOMIAL)
    assert basis.eval(np.array([[2.0]])).tolist() == [[1.0, 2.0, 4.0]]
    assert basis.realization == Realization("monomial")


def test_weighted_row_metric(interval):
    basis = basis_for(interval, 2, "monomial")
    row = weighted_row(basis, interval, np.array([1.0]))
    assert row == pytest.approx([0.5, 0.5, 0.5])


def test_weighted_rows_outside(interval):
    basis = basis_for(interval, 2)
    with pytest.raises(DomainException):
        weighted_rows(basis, interval, np.array([[0.0], [1.5]]))
    circle_basis = build_basis(AmbientModel.sphere(1), 2)
    with pytest.raises(BasisException):
        weighted_rows(circle_basis, interval, np.array([[0.0]]))


def test_circle_basis_orthonormal(circle, haar):
    g = gram(basis_for(circle, 4), circle, haar)
    assert np.allclose(g.g, np.eye(9), atol=1e-12)
    assert g.logdet() == pytest.approx(0.0, abs=1e-10)


def test_sphere_harmonics_orthonormal(sphere):
    g = gram(basis_for(sphere, 3), sphere, BaseMeasure.uniform(sphere))
    assert np.allclose(g.g, np.eye(16), atol=1e-12)


@pytest.mark.parametrize("realization", list(Realization))
def test_orthonormalize(interval, realization):
    measure = BaseMeasure(domain=interval, density=Density.parse("bump 1"), name="bump")
    basis = basis_for(interval, 5, realization)
    orthonormal = orthonormalize(basis, gram(basis, interval, measure))
    assert orthonormal.orthonormal
    assert orthonormal.provenance.measure == "bump"
    assert np.allclose(gram(orthonormal, interval, measure).g, np.eye(6), atol=1e-10)


def test_orthonormalize_mismatch(interval):
    measure = BaseMeasure.uniform(interval)
    g = gram(basis_for(interval, 3), interval, measure)
    with pytest.raises(BasisException):
        orthonormalize(basis_for(interval, 4), g)


def test_singular_gram():
    domain = WeightedDomain.interval(0.0, 1.0)
    basis = basis_for(domain, 25, Realization.MONOMIAL)
    with pytest.raises(SingularGramException):
        gram(basis, domain, BaseMeasure.uniform(domain))
    low = basis_for(domain, 4, "monomial")
    with pytest.raises(SingularGramException):
        gram(low, domain, BaseMeasure.uniform(domain), threshold=10.0)


@pytest.mark.parametrize("p", [1, 2, 5, 8])
def test_bergman_circle_constant(circle, haar, p):
    basis = orthonormal_basis(circle, haar, p)
    values = bergman_values(basis, circle, evaluation_grid(circle, 64))
    assert np.allclose(values, 2 * p + 1, atol=1e-8)


def test_bergman_sphere_realizations(sphere):
    measure = BaseMeasure.uniform(sphere)
    grid = evaluation_grid(sphere, 12)
    harmonic = bergman_values(orthonormal_basis(sphere, measure, 3), sphere, grid)
    basis = orthonormal_basis(sphere, measure, 3, "monomial")
    monomial = bergman_values(basis, sphere, grid)
    assert np.allclose(harmonic, 16.0, atol=1e-8)
    assert np.allclose(monomial, 16.0, atol=1e-6)


def test_bergman_extremal(rng):
    domain = WeightedDomain.interval(0.0, 2.0, Weight.parse("quadratic 0.3"))
    measure = BaseMeasure(domain=domain, density=Density.parse("bump 1"))
    basis = orthonormal_basis(domain, measure, 4)
    assert np.allclose(gram(basis, domain, measure).g, np.eye(basis.n_p), atol=1e-8)
    grid = evaluation_grid(domain, 101)
    rows = weighted_rows(basis, domain, grid)
    rho = bergman_values(basis, domain, grid)
    # unit norm sections are unit coefficient vectors in an orthonormal basis
    coefficients = rng.standard_normal((200, basis.n_p))
    coefficients /= np.linalg.norm(coefficients, axis=1, keepdims=True)
    assert np.all((rows @ coefficients.T) ** 2 <= rho[:, None] * (1.0 + 1e-12))
    peak = rows[37] / np.linalg.norm(rows[37])
    assert (rows[37] @ peak) ** 2 == pytest.approx(rho[37], rel=1e-12)


def test_bergman_requires_orthonormal(interval):
    with pytest.raises(BasisException):
        bergman_function(basis_for(interval, 2), interval, np.array([0.0]))


@pytest.mark.parametrize(
    "domain, density",
    [
        (WeightedDomain.interval(), "uniform"),
        (WeightedDomain.interval(0.0, 2.0, Weight.parse("quadratic 0.3")), "bump 2"),
        (WeightedDomain.sphere(2, angle=2.0), "zonal 2"),
    ],
)
def test_bergman_mass(domain, density):
    measure = BaseMeasure(domain=domain, density=Density.parse(density))
    basis = orthonormal_basis(domain, measure, 4)
    total = bergman_integral(basis, domain, measure, lambda x: np.ones(x.shape[0]))
    assert total == pytest.approx(1.0, abs=1e-10)


def test_lp_constant_shift(interval):
    measure = BaseMeasure.uniform(interval)
    basis = basis_for(interval, 3)
    shifted = WeightedDomain.interval(phi=Weight.parse("constant 0.7"))
    difference = lp_difference(
        basis, gram(basis, shifted, measure), gram(basis, interval, measure)
    )
    assert difference == pytest.approx(0.35, abs=1e-12)


def test_lp_derivative_is_bergman_integral():
    domain = WeightedDomain.interval(0.0, 1.0)
    measure = BaseMeasure.uniform(domain)
    basis = basis_for(domain, 3)
    base = gram(basis, domain, measure)
    h = 1e-4

    def lp(t):
        return lp_difference(basis, gram(basis, _linear(domain, t), measure), base)

    derivative = (lp(h) - lp(-h)) / (2 * h)
    bergman = bergman_integral(
        orthonormal_basis(domain, measure, 3), domain, measure, lambda x: x[:, 0]
    )
    assert derivative == pytest.approx(0.5 * bergman, abs=1e-6)


def test_lp_concave(interval):
    measure = BaseMeasure.uniform(interval)
    basis = basis_for(interval, 4)
    base = gram(basis, interval, measure)

    def lp(t):
        return lp_difference(basis, gram(basis, _linear(interval, t), measure), base)

    for a, b in [(-1.0, 1.0), (0.0, 2.0), (-0.5, 0.25)]:
        assert lp((a + b) / 2) >= (lp(a) + lp(b)) / 2 - 1e-12


def test_lp_difference_mismatch(interval):
    measure = BaseMeasure.uniform(interval)
    g3 = gram(basis_for(interval, 3), interval, measure)
    g4 = gram(basis_for(interval, 4), interval, measure)
    with pytest.raises(BasisException):
        lp_difference(basis_for(interval, 3), g3, g4)


def test_section_norm_ratios(sphere, rng):
    measure = BaseMeasure.uniform(sphere)
    basis = orthonormal_basis(sphere, measure, 3)
    ratios = section_norm_ratios(
        basis, sphere, measure, evaluation_grid(sphere, 12), rng, count=50
    )
    assert ratios.l4_over_l2.shape == (50,)
    assert np.all(ratios.l4_over_l2 >= 1.0 - 1e-12)
    assert np.all(ratios.sup_over_l2 >= ratios.l4_over_l2 - 1e-12)


def test_export_gram(tmp_path, interval):
    g = gram(basis_for(interval, 2), interval, BaseMeasure.uniform(interval))
    path = export_gram(g, tmp_path / "gram.csv")
    assert path.read_text().startswith("# measure=uniform; phi=zero; p=2;")
    assert np.array_equal(np.loadtxt(path, delimiter=","), g.g)
