import pytest

from pfaffkit.cinf import (ClosureSchemaError, HamiltonianSystem, NeedsClosureTable,
                           SystemDefinitionError, check_closure_numeric, check_closure_symbolic,
                           check_independence, check_reeb_compatibility, closure_var,
                           extend_time_dependent)
from pfaffkit.expr import Const, parse
from pfaffkit.geometry import jacobi_bracket

P = parse


def test_closure_variables():
    assert closure_var(0) == "u0" and closure_var(3) == "u3"


@pytest.mark.parametrize("name", ["toda", "waterbag", "poisson_r3", "timedep_extended"])
def test_poisson_fixtures_pass_all_checks(docs, name):
    sys_ = docs[name].system
    assert check_independence(sys_).passed
    assert check_closure_symbolic(sys_).passed
    assert check_closure_numeric(sys_).passed
    assert check_reeb_compatibility(sys_).metrics == {"auto": True}


@pytest.mark.parametrize("name", ["lcs", "contact"])
def test_jacobi_fixtures_pass_in_jacobi_mode(docs, name):
    sys_ = docs[name].system
    ind = check_independence(sys_, mode="jacobi")
    assert ind.passed and ind.metrics["mode"] == "jacobi"
    assert check_closure_symbolic(sys_).passed
    assert check_reeb_compatibility(sys_).passed


def test_jacobi_families_are_not_gradient_independent(docs):
    # f_1 = 1 has zero gradient: only the Hamiltonian fields are independent
    rep = check_independence(docs["lcs"].system, mode="poisson")
    assert not rep.passed
    assert rep.metrics["field_full_fraction"] == 1.0


def test_toda_closure_table_values(docs):
    sys_ = docs["toda"].system
    S = sys_.structure
    assert jacobi_bracket(S, P("P"), sys_.hamiltonian) == Const(0)
    assert jacobi_bracket(S, P("Q"), sys_.hamiltonian) == P("P/2")
    assert jacobi_bracket(S, P("Q"), P("P")) == Const(1)


def test_negative_control_rejected(docs):
    rep = check_closure_numeric(docs["free_r4_control"].system)
    assert not rep.passed
    first = rep.items[0]
    assert first["pair"] == [1, 0] and first["jump_fraction"] >= 0.95


def test_swapped_toda_family_fails_numeric_closure(docs):
    sys_ = docs["toda"].system.with_family([P("Q"), P("P")], closure=None)
    assert not check_closure_numeric(sys_).passed


def test_family_with_hamiltonian_fails_independence(docs):
    sys_ = docs["toda"].system
    bad = sys_.with_family([sys_.hamiltonian, P("Q")], closure=None)
    assert not check_independence(bad).passed


def test_wrong_closure_entry_is_flagged(docs):
    sys_ = docs["toda"].system
    bad = sys_.with_family(sys_.family, closure={(1, 0): "0", (2, 0): "u1", (2, 1): "1"})
    rep = check_closure_symbolic(bad)
    assert not rep.passed and rep.metrics["failed_pairs"] == [[2, 0]]


def test_closure_schema_is_enforced(docs):
    sys_ = docs["toda"].system
    with pytest.raises(ClosureSchemaError):
        sys_.with_family(sys_.family, closure={(1, 0): "u2"})
    with pytest.raises(ClosureSchemaError):
        sys_.with_family(sys_.family, closure={(0, 1): "0"})


def test_missing_table_for_reeb(docs):
    sys_ = docs["lcs"].system.with_family(docs["lcs"].system.family, closure=None)
    with pytest.raises(NeedsClosureTable):
        check_reeb_compatibility(sys_)
    with pytest.raises(NeedsClosureTable):
        check_closure_symbolic(sys_)


def test_family_size_and_symbols_validated(docs):
    S = docs["toda"].system.structure
    with pytest.raises(SystemDefinitionError):
        HamiltonianSystem(S, P("p"), (P("P"), P("Q"), P("q")))
    with pytest.raises(SystemDefinitionError):
        HamiltonianSystem(S, P("p + zeta"))
    incomplete = HamiltonianSystem(S, P("p^2"), (P("P"),))
    assert not check_independence(incomplete).passed
    with pytest.raises(SystemDefinitionError):
        incomplete.fields()


def test_time_extension(docs):
    base = docs["toda"].system.structure
    ext = extend_time_dependent(P("p^2 + t*Q"), base)
    assert ext.structure.coords == ("t", "q", "Q", "Ecoord", "p", "P")
    assert jacobi_bracket(ext.structure, P("t"), ext.hamiltonian) == Const(1)
    assert ext.family == (P("t"),)
    auto = extend_time_dependent(P("p^2"), base)
    assert jacobi_bracket(auto.structure, P("t"), auto.hamiltonian) == Const(1)
    with pytest.raises(SystemDefinitionError):
        extend_time_dependent(P("p + Ecoord"), base)
    with pytest.raises(SystemDefinitionError):
        extend_time_dependent(P("p"), base, time_name="q")
