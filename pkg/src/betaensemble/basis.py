from __future__ import annotations

import dataclasses
import itertools
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Tuple, Union

import numpy as np
import scipy.linalg
import scipy.special

from betaensemble.domain import (
    AmbientModel,
    BaseMeasure,
    Box,
    WeightedDomain,
    contains,
    metric_log_weight,
)
from betaensemble.exceptions import (
    BasisException,
    DomainException,
    SingularGramException,
)
from betaensemble.helpers import random_stream
from betaensemble.quadrature import QuadratureSpec, measure_batches, measure_rule

logger = logging.getLogger(__name__)

#: Gram matrices with a larger condition number are refused.
CONDITION_THRESHOLD = 1e12


class Realization(Enum):
    """
    Raw basis realizations of the section space. Every realization spans the
    same space, so determinants change only by a configuration independent
    factor.

    * ``MONOMIAL``: monomials of total degree at most ``p``; on spheres a
      maximal-rank subset selected by pivoted QR.
    * ``ORTHOGONAL``: tensor Legendre polynomials on boxes, trigonometric
      polynomials on :math:`S^1`, real spherical harmonics on :math:`S^2`.
    """

    MONOMIAL = "monomial"
    ORTHOGONAL = "orthogonal"


@dataclasses.dataclass(frozen=True)
class Provenance:
    measure: str
    phi: str
    p: int
    quadrature: str
    realization: str

    def __str__(self) -> str:
        return (
            f"measure={self.measure}; phi={self.phi}; p={self.p}; "
            f"quadrature={self.quadrature}; realization={self.realization}"
        )


def dimension(model: AmbientModel, p: int) -> int:
    """
    Dimension :math:`N_p` of the degree ``p`` section space: :math:`\\binom{p+n}{n}`
    on euclidean models and :math:`\\binom{p+n+1}{n+1} - \\binom{p+n-1}{n+1}` on
    :math:`S^n`, that is :math:`2p+1` on the circle and :math:`(p+1)^2` on
    :math:`S^2`.
    """
    if p < 0:
        raise BasisException(f"Degree must be nonnegative, got {p}")
    if model.is_sphere:
        return math.comb(p + model.n + 1, model.n + 1) - math.comb(
            p + model.n - 1, model.n + 1
        )
    return math.comb(p + model.n, model.n)


def leading_dimension(model: AmbientModel, p: int) -> float:
    """
    Leading term :math:`\\frac{p^n}{n!}\\|\\omega_0^n\\|` of :math:`N_p`, with mass
    one for projective space and two for the quadric containing the sphere.
    """
    volume = 2.0 if model.is_sphere else 1.0
    return volume * p**model.n / math.factorial(model.n)


def _graded_indices(variables: int, p: int) -> np.ndarray:
    indices = [
        index
        for degree in range(p + 1)
        for index in sorted(
            (
                combo
                for combo in itertools.product(range(degree + 1), repeat=variables)
                if sum(combo) == degree
            ),
            reverse=True,
        )
    ]
    return np.asarray(indices, dtype=int).reshape(-1, variables)


def _harmonic_indices(p: int) -> np.ndarray:
    pairs = [(l, m) for l in range(p + 1) for m in range(-l, l + 1)]
    return np.asarray(pairs, dtype=int)


def _circle_indices(p: int) -> np.ndarray:
    # (frequency, 0 for cosine / 1 for sine)
    labels = [(0, 0)]
    for k in range(1, p + 1):
        labels.extend([(k, 0), (k, 1)])
    return np.asarray(labels, dtype=int)


@dataclasses.dataclass(frozen=True, eq=False)
class SectionBasis:
    """
    Degree ``p`` section space realized as polynomial evaluations, optionally
    carrying a lower-triangular change of basis ``transform`` that makes the
    sections orthonormal for the norm recorded in ``provenance``.

    :param model: Ambient model.
    :param p: Degree.
    :param n_p: Dimension :math:`N_p`.
    :param realization: Raw realization.
    :param indices: Labels of the raw basis functions (exponents, frequencies or
        harmonic degrees and orders).
    :param center: Box center used by the Legendre realization.
    :param half_width: Box half widths used by the Legendre realization.
    :param transform: Optional orthonormalizing transform ``T``; transformed
        sections are :math:`T s`.
    :param provenance: Provenance of the Gram matrix behind ``transform``.
    """

    model: AmbientModel
    p: int
    n_p: int
    realization: Realization
    indices: np.ndarray
    center: Tuple[float, ...] = ()
    half_width: Tuple[float, ...] = ()
    transform: Optional[np.ndarray] = None
    provenance: Optional[Provenance] = None

    @property
    def orthonormal(self) -> bool:
        return self.transform is not None

    def eval(self, points: np.ndarray) -> np.ndarray:
        """
        Raw basis values before weights and transform.

        :param points: Points of shape ``(m, d)``.
        :return: Array of shape ``(m, n_p)``.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[-1] != self.model.coordinate_dim:
            raise DomainException(
                f"Points with {points.shape[-1]} coordinates for model {self.model}"
            )
        if self.realization == Realization.MONOMIAL:
            return _product_eval(
                np.polynomial.polynomial.polyvander, points, self.indices, self.p
            )
        if not self.model.is_sphere:
            u = (points - np.asarray(self.center)) / np.asarray(self.half_width)
            values = _product_eval(
                np.polynomial.legendre.legvander, u, self.indices, self.p
            )
            norms = np.prod(np.sqrt(2.0 * self.indices + 1.0), axis=-1)
            return values * norms
        if self.model.n == 1:
            theta = np.arctan2(points[:, 1], points[:, 0])
            k, kind = self.indices[:, 0], self.indices[:, 1]
            angles = np.outer(theta, k)
            values = np.where(kind == 0, np.cos(angles), np.sin(angles))
            return values * np.where(k == 0, 1.0, math.sqrt(2.0))
        return _real_harmonics(points, self.indices)


def _product_eval(
    vander: Callable, points: np.ndarray, indices: np.ndarray, p: int
) -> np.ndarray:
    values = np.ones((points.shape[0], indices.shape[0]))
    for axis in range(indices.shape[1]):
        values *= vander(points[:, axis], p)[:, indices[:, axis]]
    return values


def _real_harmonics(points: np.ndarray, indices: np.ndarray) -> np.ndarray:
    z = np.clip(points[:, 2], -1.0, 1.0)
    azimuth = np.arctan2(points[:, 1], points[:, 0])
    l, m = indices[:, 0], indices[:, 1]
    order = np.abs(m)
    # normalized against the uniform probability measure on the sphere
    ratio = scipy.special.gammaln(l - order + 1) - scipy.special.gammaln(l + order + 1)
    norm = np.sqrt((2.0 * l + 1.0) * np.exp(ratio))
    legendre = scipy.special.lpmv(order[None, :], l[None, :], z[:, None])
    angular = np.where(
        m[None, :] > 0,
        math.sqrt(2.0) * np.cos(np.outer(azimuth, order)),
        np.where(
            m[None, :] < 0, math.sqrt(2.0) * np.sin(np.outer(azimuth, order)), 1.0
        ),
    )
    return norm * legendre * angular


def _select_sphere_monomials(model: AmbientModel, p: int, n_p: int) -> np.ndarray:
    candidates = _graded_indices(model.coordinate_dim, p)
    rng = random_stream(0, model.n, p)
    points = rng.standard_normal((2 * candidates.shape[0], model.coordinate_dim))
    points /= np.linalg.norm(points, axis=-1, keepdims=True)
    values = _product_eval(np.polynomial.polynomial.polyvander, points, candidates, p)
    _, _, pivots = scipy.linalg.qr(values, mode="economic", pivoting=True)
    selected = np.sort(pivots[:n_p])
    singular = np.linalg.svd(values[:, selected], compute_uv=False)
    if singular[-1] <= 1e-13 * singular[0]:
        raise BasisException(
            f"Monomial realization of degree {p} on {model} "
            "is numerically rank deficient"
        )
    return candidates[selected]


def build_basis(
    model: AmbientModel,
    p: int,
    realization: Union[Realization, str] = Realization.ORTHOGONAL,
    box: Optional[Box] = None,
) -> SectionBasis:
    """
    Build the degree ``p`` section space of an ambient model.

    :param model: Ambient model.
    :param p: Degree.
    :param realization: Raw realization to use.
    :param box: Box the Legendre realization is adapted to; defaults to
        :math:`[-1, 1]^n`.
    :raises: :class:`BasisException` for unsupported parameters.
    """
    realization = Realization(realization)
    if p < 0:
        raise BasisException(f"Degree must be nonnegative, got {p}")
    n_p = dimension(model, p)
    center: Tuple[float, ...] = ()
    half_width: Tuple[float, ...] = ()
    if model.is_sphere:
        if realization == Realization.MONOMIAL:
            indices = _select_sphere_monomials(model, p, n_p)
        elif model.n == 1:
            indices = _circle_indices(p)
        else:
            indices = _harmonic_indices(p)
    else:
        indices = _graded_indices(model.n, p)
        if realization == Realization.ORTHOGONAL:
            box = box or Box.cube(model.n)
            if box.dim != model.n:
                raise BasisException(f"Box of dimension {box.dim} for model {model}")
            center = tuple((np.asarray(box.lower) + np.asarray(box.upper)) / 2.0)
            half_width = tuple(box.widths / 2.0)
    if indices.shape[0] != n_p:
        raise BasisException(f"Realized {indices.shape[0]} sections, expected {n_p}")
    return SectionBasis(
        model=model,
        p=p,
        n_p=n_p,
        realization=realization,
        indices=indices,
        center=center,
        half_width=half_width,
    )


def basis_for(
    domain: WeightedDomain,
    p: int,
    realization: Union[Realization, str] = Realization.ORTHOGONAL,
) -> SectionBasis:
    """:func:`build_basis` adapted to the region of ``domain``."""
    box = domain.region if isinstance(domain.region, Box) else None
    return build_basis(domain.model, p, realization=realization, box=box)


def legendre_companion(
    basis: SectionBasis, box: Optional[Box] = None
) -> Tuple[SectionBasis, float]:
    """
    Legendre realization on the index set of a euclidean monomial basis.

    Monomials expand triangularly in the normalized Legendre products of the
    same index set, so ``eval`` of ``basis`` equals ``eval`` of the companion
    times a change of basis ``C`` with positive diagonal
    :math:`\\prod_i h_i^{a_i} 2^{a_i} (a_i!)^2 / ((2a_i)! \\sqrt{2a_i + 1})`.

    :param basis: Monomial basis of a euclidean model without transform.
    :param box: Box fixing the Legendre scaling, defaults to :math:`[-1, 1]^n`.
    :return: Tuple ``(companion, log_det_c)``.
    """
    if (
        basis.realization != Realization.MONOMIAL
        or basis.model.is_sphere
        or basis.transform is not None
    ):
        raise BasisException(
            "Legendre companion needs a plain euclidean monomial basis"
        )
    box = box or Box.cube(basis.model.n)
    half_width = box.widths / 2.0
    a = basis.indices.astype(float)
    log_diagonal = (
        a * (np.log(half_width) + math.log(2.0))
        + 2.0 * scipy.special.gammaln(a + 1.0)
        - scipy.special.gammaln(2.0 * a + 1.0)
        - 0.5 * np.log(2.0 * a + 1.0)
    )
    companion = dataclasses.replace(
        basis,
        realization=Realization.ORTHOGONAL,
        center=tuple((np.asarray(box.lower) + np.asarray(box.upper)) / 2.0),
        half_width=tuple(half_width),
    )
    return companion, float(np.sum(log_diagonal))


def weighted_rows(
    basis: SectionBasis, domain: WeightedDomain, points: np.ndarray, check: bool = True
) -> np.ndarray:
    """
    Weighted section values :math:`s_j(x) e^{\\text{metric}(x)} e^{-p\\phi(x)}` for a
    stack of points, transformed when the basis is orthonormalized.

    :param basis: Section basis.
    :param domain: Weighted compact set providing :math:`\\phi`.
    :param points: Points of shape ``(m, d)``.
    :param check: Verify that every point lies in ``K``.
    :raises: :class:`DomainException` for points outside ``K``.
    :return: Array of shape ``(m, n_p)``.
    """
    if basis.model != domain.model:
        raise BasisException(
            f"Basis of {basis.model} used with domain of {domain.model}"
        )
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if check:
        inside = contains(domain, points)
        if not np.all(inside):
            raise DomainException(f"{int(np.sum(~inside))} point(s) lie outside K")
    log_weight = metric_log_weight(basis.model, basis.p, points) - basis.p * domain.phi(
        points
    )
    rows = basis.eval(points) * np.exp(log_weight)[:, None]
    if basis.transform is not None:
        rows = rows @ basis.transform.T
    return rows


def weighted_row(
    basis: SectionBasis, domain: WeightedDomain, x: np.ndarray
) -> np.ndarray:
    """Weighted section values at a single point, see :func:`weighted_rows`."""
    return weighted_rows(basis, domain, np.asarray(x, dtype=float)[None, :])[0]


@dataclasses.dataclass(frozen=True, eq=False)
class GramMatrix:
    """
    Gram matrix :math:`G_{ij} = \\int s_i s_j e^{-2p\\phi} |\\cdot|^2_{\\text{metric}}
    \\, d\\mu` of a section basis.
    """

    g: np.ndarray
    provenance: Provenance

    @property
    def n(self) -> int:
        return self.g.shape[0]

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.g))

    def cholesky(self) -> np.ndarray:
        try:
            return scipy.linalg.cholesky(self.g, lower=True)
        except np.linalg.LinAlgError:
            raise SingularGramException(self.condition) from None

    def logdet(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.cholesky()))))

    def scaled(self, factor: float) -> GramMatrix:
        return GramMatrix(g=factor * self.g, provenance=self.provenance)


def gram(
    basis: SectionBasis,
    domain: WeightedDomain,
    measure: BaseMeasure,
    quadrature: Optional[QuadratureSpec] = None,
    threshold: float = CONDITION_THRESHOLD,
) -> GramMatrix:
    """
    Gram matrix of ``basis`` in :math:`L^2(\\mu, p\\phi)`.

    :param basis: Section basis; its transform, if any, is applied.
    :param domain: Weighted compact set providing :math:`\\phi`.
    :param measure: Base measure.
    :param quadrature: Quadrature specification, exact by default.
    :param threshold: Largest accepted condition number.
    :raises: :class:`SingularGramException` when the Gram matrix cannot be
        certified positive definite.
    """
    quadrature = quadrature or QuadratureSpec()
    g = np.zeros((basis.n_p, basis.n_p))
    for nodes, weights in measure_batches(measure, quadrature, degree=2 * basis.p):
        rows = weighted_rows(basis, domain, nodes, check=False)
        g += rows.T @ (weights[:, None] * rows)
    g = 0.5 * (g + g.T)
    condition = float(np.linalg.cond(g))
    if not np.isfinite(condition) or condition > threshold:
        raise SingularGramException(condition, threshold)
    provenance = Provenance(
        measure=measure.name,
        phi=str(domain.phi),
        p=basis.p,
        quadrature=quadrature.describe(),
        realization=basis.realization.value,
    )
    logger.debug("gram %s: condition %.3e", provenance, condition)
    return GramMatrix(g=g, provenance=provenance)


def orthonormalize(basis: SectionBasis, gram: GramMatrix) -> SectionBasis:
    """
    Orthonormalize ``basis`` with respect to ``gram`` using the inverse Cholesky
    factor :math:`T = L^{-1}`, :math:`G = L L^T`, so that :math:`T G T^T = I`.

    :raises: :class:`SingularGramException` when the Cholesky factorization fails.
    """
    if gram.n != basis.n_p or gram.provenance.p != basis.p:
        raise BasisException(
            f"Gram of size {gram.n} and degree {gram.provenance.p} does not match "
            f"basis of dimension {basis.n_p} and degree {basis.p}"
        )
    factor = gram.cholesky()
    transform = scipy.linalg.solve_triangular(factor, np.eye(basis.n_p), lower=True)
    if basis.transform is not None:
        transform = transform @ basis.transform
    return dataclasses.replace(basis, transform=transform, provenance=gram.provenance)


def orthonormal_basis(
    domain: WeightedDomain,
    measure: BaseMeasure,
    p: int,
    realization: Union[Realization, str] = Realization.ORTHOGONAL,
    quadrature: Optional[QuadratureSpec] = None,
) -> SectionBasis:
    """
    Build a basis for ``domain`` and orthonormalize it in :math:`L^2(\\mu, p\\phi)`.
    """
    basis = basis_for(domain, p, realization=realization)
    return orthonormalize(basis, gram(basis, domain, measure, quadrature))


def _require_orthonormal(basis: SectionBasis) -> None:
    if not basis.orthonormal:
        raise BasisException("Bergman quantities require an orthonormalized basis")


def bergman_values(
    basis: SectionBasis, domain: WeightedDomain, points: np.ndarray
) -> np.ndarray:
    """Bergman function :math:`\\rho_p(\\mu, \\phi)` at a stack of points."""
    _require_orthonormal(basis)
    rows = weighted_rows(basis, domain, points)
    return np.sum(rows**2, axis=-1)


def bergman_function(
    basis: SectionBasis, domain: WeightedDomain, x: np.ndarray
) -> float:
    """
    Bergman function :math:`\\rho_p(\\mu,\\phi)(x) = \\sum_j |s_j(x)|^2_{p\\phi}` of an
    orthonormalized basis.

    :raises: :class:`DomainException` for ``x`` outside ``K``.
    """
    return float(bergman_values(basis, domain, np.asarray(x, dtype=float)[None, :])[0])


def bergman_integral(
    basis: SectionBasis,
    domain: WeightedDomain,
    measure: BaseMeasure,
    v: Callable[[np.ndarray], np.ndarray],
    quadrature: Optional[QuadratureSpec] = None,
) -> float:
    """
    Integral of ``v`` against the Bergman measure :math:`N_p^{-1}\\rho_p \\mu`.
    This is twice the derivative of :math:`t \\mapsto L_p(\\mu, \\phi + tv)` at zero.
    """
    _require_orthonormal(basis)
    quadrature = quadrature or QuadratureSpec()
    nodes, weights = measure_rule(measure, quadrature, degree=2 * basis.p)
    rows = weighted_rows(basis, domain, nodes, check=False)
    return float(weights @ (v(nodes) * np.sum(rows**2, axis=-1))) / basis.n_p


def lp_difference(basis: SectionBasis, gram_1: GramMatrix, gram_2: GramMatrix) -> float:
    """
    Difference :math:`L_p(\\mu_1,\\phi_1) - L_p(\\mu_2,\\phi_2)` of the functionals
    :math:`L_p = \\frac{1}{2pN_p}\\log\\mathrm{vol}\\,B^2_p`. The unit ball volume
    scales as :math:`\\det(G)^{-1/2}`, so the difference is
    :math:`\\frac{1}{4pN_p}(\\log\\det G_2 - \\log\\det G_1)`.

    :raises: :class:`BasisException` when the Gram matrices are not over the
        same basis and degree.
    """
    degrees = {basis.p, gram_1.provenance.p, gram_2.provenance.p}
    if len(degrees) != 1 or gram_1.n != basis.n_p or gram_2.n != basis.n_p:
        raise BasisException(
            f"Gram matrices of degrees {gram_1.provenance.p} and {gram_2.provenance.p} "
            f"do not match basis degree {basis.p}"
        )
    if basis.p < 1:
        raise BasisException("L_p is defined for p >= 1")
    return (gram_2.logdet() - gram_1.logdet()) / (4.0 * basis.p * basis.n_p)


@dataclasses.dataclass(frozen=True, eq=False)
class NormRatios:
    l4_over_l2: np.ndarray
    sup_over_l2: np.ndarray


def section_norm_ratios(
    basis: SectionBasis,
    domain: WeightedDomain,
    measure: BaseMeasure,
    grid: np.ndarray,
    rng: np.random.Generator,
    count: int = 200,
    quadrature: Optional[QuadratureSpec] = None,
) -> NormRatios:
    """
    Ratios :math:`\\|s\\|_{L^4}/\\|s\\|_{L^2}` and
    :math:`\\|s\\|_{L^\\infty}/\\|s\\|_{L^2}` of random sections, with
    :math:`L^r = L^r(\\mu, p\\phi)` and the sup taken over ``grid``.
    """
    quadrature = quadrature or QuadratureSpec()
    nodes, weights = measure_rule(measure, quadrature, degree=4 * basis.p)
    coefficients = rng.standard_normal((basis.n_p, count))
    at_nodes = weighted_rows(basis, domain, nodes, check=False) @ coefficients
    at_grid = weighted_rows(basis, domain, grid) @ coefficients
    l2 = np.sqrt(weights @ at_nodes**2)
    l4 = (weights @ at_nodes**4) ** 0.25
    sup = np.maximum(np.max(np.abs(at_grid), axis=0), np.max(np.abs(at_nodes), axis=0))
    return NormRatios(l4_over_l2=l4 / l2, sup_over_l2=sup / l2)


def export_gram(gram: GramMatrix, path: Union[str, Path]) -> Path:
    """Write a Gram matrix as row-major CSV with 17 significant digits."""
    path = Path(path)
    np.savetxt(path, gram.g, delimiter=",", fmt="%.17g", header=str(gram.provenance))
    return path
