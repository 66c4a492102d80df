import numpy as np
import pytest

from oracles import values
from pfaffkit.expr import Const, parse, render, simplify
from pfaffkit.geometry import (KAPPA, Chart, DegeneracyError, DimensionError, GeometryError,
                               JacobiStructure, KForm, NotLCSError, SamplingError, VectorField,
                               check_jacobi_axioms, contact_to_jacobi, exterior_derivative,
                               hamiltonian_vf, jacobi_bracket, lcs_to_jacobi, lie_bracket,
                               sample_points, sym_inverse, symplectic_to_jacobi, wedge,
                               wedge_evaluate)

P = parse


def canonical(coords=("q", "p"), box=(-1, 1)):
    ch = Chart(coords, [box] * len(coords))
    pairs = {f"{coords[i]},{coords[i + len(coords) // 2]}": "1" for i in range(len(coords) // 2)}
    return symplectic_to_jacobi(KForm.from_names(2, coords, pairs), ch)


def test_kappa_calibration_canonical_pair():
    S = canonical()
    assert KAPPA == 1
    assert jacobi_bracket(S, P("q"), P("p")) == Const(1)
    X = hamiltonian_vf(S, P("p^2/2 + q^3"))
    # X_f(g) = {g, f}: qdot = dH/dp, pdot = -dH/dq
    assert X.components == (P("p"), P("-3*q^2"))


def test_waterbag_pair_bracket(docs):
    S = docs["waterbag"].system.structure
    assert jacobi_bracket(S, P("w1"), P("c1")) == Const(2)
    assert jacobi_bracket(S, P("w1"), P("c2")) == Const(0)
    assert jacobi_bracket(S, P("c1"), P("c2")) == Const(0)


def test_lcs_structure_matches_displayed_data(docs):
    S = docs["lcs"].system.structure
    assert S.reeb().components == (Const(0), P("exp(-x)"), Const(0), Const(0))
    # the bracket is built as L(df,dg) with L = W^-1, so L^xy carries the
    # opposite sign of the displayed bivector while E and X_H agree with it
    assert S.entry(0, 1) == P("-exp(-x)") and S.entry(2, 3) == P("-exp(-x)")
    assert jacobi_bracket(S, P("1"), P("exp(x)*y")) == Const(1)
    assert jacobi_bracket(S, P("z"), P("exp(x)*y")) == P("z")
    X = hamiltonian_vf(S, P("exp(x)*y"))
    assert X.components == (Const(-1), P("2*y"), Const(0), Const(0))
    X2 = hamiltonian_vf(S, P("z"))
    assert X2.components == (Const(0), P("exp(-x)*z"), P("-exp(-x)"), Const(0))


def test_contact_structure(docs):
    S = docs["contact"].system.structure
    assert S.entry(0, 1) == Const(1)
    assert S.entry(1, 2) == P("-y")
    assert S.entry(0, 2) == Const(0)
    assert S.reeb().components == (Const(0), Const(0), Const(1))
    assert jacobi_bracket(S, P("1"), P("z")) == Const(1)
    # Reeb conditions: eta(R) = 1 and R _| d eta = 0
    eta = KForm.from_names(1, ("x", "y", "z"), {"z": "1", "x": "-y"})
    assert simplify(eta.contract(S.reeb()).coeffs.get((), Const(0))) == Const(1)
    assert exterior_derivative(eta).contract(S.reeb()).is_zero()


def test_symplectic_round_trip_matrix():
    coords = ("a", "b", "c", "d")
    ch = Chart(coords, [(0.5, 1.5)] * 4)
    om = KForm.from_names(2, coords, {"a,c": "exp(b)", "b,d": "1 + a^2", "a,b": "c"})
    S = symplectic_to_jacobi(om, ch)
    X = sample_points(ch, [], 20, 3)
    W = values([v for row in om.matrix() for v in row], coords, X)
    L = values([v for row in S.matrix() for v in row], coords, X)
    for k in range(len(X)):
        Wk = W[:, k].reshape(4, 4)
        Lk = L[:, k].reshape(4, 4)
        assert np.allclose(-np.linalg.inv(Lk), Wk, atol=1e-10)


def test_converters_reject_bad_input():
    ch = Chart(("q", "p"), [(-1, 1)] * 2)
    with pytest.raises(DegeneracyError):
        symplectic_to_jacobi(KForm.from_names(2, ("q", "p"), {"q,p": "0"}), ch)
    ch4 = Chart(("x", "y", "w", "z"), [(0.5, 1)] * 4)
    om = KForm.from_names(2, ch4.coords, {"x,y": "exp(x)", "w,z": "exp(x)"})
    with pytest.raises(NotLCSError):
        lcs_to_jacobi(om, KForm.from_names(1, ch4.coords, {"x": "y"}), ch4)
    with pytest.raises(NotLCSError):
        lcs_to_jacobi(om, KForm.from_names(1, ch4.coords, {"y": "1"}), ch4)
    with pytest.raises(DimensionError):
        contact_to_jacobi(KForm.from_names(1, ch.coords, {"q": "1"}), ch)


def test_exterior_derivative_squares_to_zero():
    coords = ("x", "y", "z")
    a = KForm.from_names(1, coords, {"x": "y*z^2", "y": "exp(x*z)", "z": "sin(x + y)"})
    assert exterior_derivative(exterior_derivative(a)).is_zero()
    with pytest.raises(DimensionError):
        exterior_derivative(KForm(3, coords, {(0, 1, 2): Const(1)}))


def test_wedge_antisymmetry_and_evaluation():
    coords = ("x", "y", "z")
    a = KForm.from_names(1, coords, {"x": "y", "z": "1"})
    b = KForm.from_names(1, coords, {"y": "x", "z": "x*y"})
    ab, ba = wedge(a, b), wedge(b, a)
    assert all(simplify(ab.get(k) + ba.get(k)) == Const(0) for k in ab.coeffs)
    pt = {"x": 0.3, "y": -0.7, "z": 2.0}
    # (a ^ b)(e_x, e_y) = a_x b_y - a_y b_x
    assert wedge_evaluate([a, b], pt, (0, 1)) == pytest.approx(-0.7 * 0.3)
    with pytest.raises(DimensionError):
        wedge_evaluate([a, b], pt, (0, 1, 2))


def test_sym_inverse_identity():
    M = [[P("x"), P("1")], [P("y"), P("2")]]
    inv, det = sym_inverse(M)
    assert det == P("2*x - y")
    X = np.array([[0.3, -0.8], [1.7, 0.2]])
    Mv = values([v for row in M for v in row], ("x", "y"), X)
    Iv = values([v for row in inv for v in row], ("x", "y"), X)
    for k in range(len(X)):
        assert np.allclose(Mv[:, k].reshape(2, 2) @ Iv[:, k].reshape(2, 2), np.eye(2))


def test_poisson_field_map_is_anti_homomorphism(docs):
    # with X_f(g) = {g,f} the commutator picks up a sign: [X_f,X_g] = -X_{f,g}
    S = docs["toda"].system.structure
    f, g = P("p^2 + exp(q)"), P("q*Q + P^3")
    lhs = lie_bracket(hamiltonian_vf(S, f), hamiltonian_vf(S, g))
    rhs = hamiltonian_vf(S, jacobi_bracket(S, f, g))
    assert all(simplify(a + b) == Const(0) for a, b in zip(lhs.components, rhs.components))


def test_bracket_antisymmetry_on_fixtures(docs):
    for name in ("toda", "lcs", "contact", "poisson_r3"):
        sys_ = docs[name].system
        fs = sys_.functions()
        for i in range(len(fs)):
            for j in range(len(fs)):
                s = jacobi_bracket(sys_.structure, fs[i], fs[j])
                t = jacobi_bracket(sys_.structure, fs[j], fs[i])
                assert simplify(s + t) == Const(0)


def test_axioms_pass_on_fixtures_and_fail_on_bad_bivector(docs):
    for name in ("toda", "waterbag", "lcs", "contact", "poisson_r3", "timedep_extended"):
        rep = check_jacobi_axioms(docs[name].system.structure)
        assert rep.passed, (name, rep.metrics)
    ch = Chart(("x", "y", "z"), [(-1, 1)] * 3)
    bad = JacobiStructure(ch, {(0, 1): P("1"), (1, 2): P("y")}, ())
    rep = check_jacobi_axioms(bad)
    assert not rep.passed and rep.metrics["jacobiator_residual"] > 0.1


def test_chart_validation_and_sampling():
    with pytest.raises(GeometryError):
        Chart(("x", "x"), [(0, 1)] * 2)
    with pytest.raises(GeometryError):
        Chart(("x",), [(1, 0)])
    ch = Chart(("x", "y"), [(-1, 1)] * 2)
    X = sample_points(ch, [P("log(x)")], 50, 0)
    assert np.all(X[:, 0] > 0)
    assert np.array_equal(X, sample_points(ch, [P("log(x)")], 50, 0))
    with pytest.raises(SamplingError):
        sample_points(ch, [P("log(x - 5)")], 10, 0)


def test_vector_field_application():
    X = VectorField(("x", "y"), (P("y"), P("-x")))
    assert X.apply(P("x^2 + y^2")) == Const(0)
    Y = VectorField(("x", "y"), (P("1"), P("0")))
    assert lie_bracket(X, Y).components == (Const(0), Const(1))
    assert render(X.apply(P("x"))) == "y"
