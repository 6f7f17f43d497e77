import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ordsmooth.errors import FormulaError
from ordsmooth.formula import (FactorSmooth, Linear, ModelSpec, Smooth,
                               parse_formula)


def test_single_smooth():
    spec = parse_formula("iStage ~ s(doy, k=25)")
    assert spec.response == "iStage"
    assert spec.terms == (Smooth("doy", 25),)


def test_smooth_plus_factor_smooth():
    spec = parse_formula("iStage ~ s(doy, k=25) + sz(doy, Site, k=25)")
    assert spec.terms == (Smooth("doy", 25), FactorSmooth("doy", "Site", 25))


def test_linear_terms_and_whitespace():
    assert parse_formula("y~x+s( z ,k=5)").terms == (Linear("x"), Smooth("z", 5))


def test_double_plus_is_syntax_error_with_offset():
    with pytest.raises(FormulaError) as exc:
        parse_formula("y ~ x + + s(x)")
    assert exc.value.offset == 8


def test_small_basis_rejected():
    with pytest.raises(FormulaError, match="k=2"):
        parse_formula("y ~ s(x, k=2)")


def test_unknown_constructor():
    with pytest.raises(FormulaError, match="te"):
        parse_formula("y ~ te(x, k=5)")


def test_duplicate_term_rejected():
    with pytest.raises(FormulaError, match="duplicate"):
        parse_formula("y ~ s(x, k=5) + s(x, k=5)")


def test_missing_k_rejected():
    with pytest.raises(FormulaError):
        parse_formula("y ~ s(x)")


def test_trailing_input_rejected():
    with pytest.raises(FormulaError, match="trailing"):
        parse_formula("y ~ x extra")


@pytest.mark.parametrize("text", [
    "y ~ x",
    "iStage ~ s(doy, k=25)",
    "iStage ~ s(doy, k=25) + sz(doy, Site, k=25)",
    "y ~ a + b + s(x, k=7) + sz(x, g, k=4)",
])
def test_pretty_print_round_trip(text):
    spec = parse_formula(text)
    assert parse_formula(str(spec)) == spec


names = st.from_regex(r"[A-Za-z_][A-Za-z0-9_]{0,6}", fullmatch=True)
terms = st.one_of(
    names.map(Linear),
    st.tuples(names, st.integers(3, 40)).map(lambda t: Smooth(*t)),
    st.tuples(names, names, st.integers(3, 40)).map(lambda t: FactorSmooth(*t)),
)


@given(response=names, term_list=st.lists(terms, min_size=1, max_size=5, unique=True))
def test_round_trip_on_generated_specs(response, term_list):
    spec = ModelSpec(response=response, terms=tuple(term_list))
    assert parse_formula(str(spec)) == spec


@given(st.text(max_size=80))
@settings(max_examples=300)
def test_parser_total_on_arbitrary_text(text):
    try:
        parse_formula(text)
    except FormulaError:
        pass
