import json

import numpy as np
import pytest

from app.core.exceptions import DomainError, ExprSyntaxError, UnknownIdentifierError, ValidationException
from app.services.coeff_dsl import (
    BinOp,
    Coord,
    Num,
    Radius,
    build_model,
    eval_diffusion,
    eval_drift,
    evaluate,
    load_model,
    parse_expr,
    to_text,
)


def _value(text, x, d=1, params=None, x0=None):
    expr = parse_expr(text, d, tuple((params or {}).keys()))
    X = np.atleast_2d(np.asarray(x, dtype=float))
    return evaluate(expr, X, np.zeros(d) if x0 is None else np.asarray(x0, dtype=float), params or {})


@pytest.mark.parametrize(
    "text,expected",
    [
        ("-2^2", -4.0),
        ("2^3^2", 512.0),
        ("2^-1", 0.5),
        ("1 - 2 - 3", -4.0),
        ("8 / 4 / 2", 1.0),
        ("pow(2, 10)", 1024.0),
        ("sqrt(16) + ln(exp(1))", 5.0),
    ],
)
def test_precedence_and_functions(text, expected):
    assert _value(text, [0.0])[0] == pytest.approx(expected)


def test_coordinates_radius_and_params():
    x = [[3.0, 4.0]]
    assert _value("|x|", x, d=2)[0] == pytest.approx(5.0)
    assert _value("abs(x-x0)", x, d=2, x0=[3.0, 0.0])[0] == pytest.approx(4.0)
    assert _value("K*x2 - x1", x, d=2, params={"K": 2.0})[0] == pytest.approx(5.0)
    assert _value("abs(x1 - 5)", x, d=2)[0] == pytest.approx(2.0)


def test_scalar_x_only_in_one_dimension():
    assert parse_expr("x", 1) == Coord(1)
    with pytest.raises(ExprSyntaxError):
        parse_expr("x + 1", 2)


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as exc:
        parse_expr("1 + * 2", 1)
    assert exc.value.offset == 4
    with pytest.raises(ExprSyntaxError):
        parse_expr("ln(x1", 1)
    with pytest.raises(ExprSyntaxError):
        parse_expr("   ", 1)


def test_unknown_identifiers():
    with pytest.raises(UnknownIdentifierError) as exc:
        parse_expr("x1 + x3", 2)
    assert exc.value.details["name"] == "x3"
    assert exc.value.offset == 5
    with pytest.raises(UnknownIdentifierError):
        parse_expr("K*x1", 1)
    with pytest.raises(UnknownIdentifierError):
        parse_expr("tanh(x1)", 1)


def test_canonical_print_reparses_to_same_tree():
    for text in ("-K*x1*|x|^(kappa-1)", "c^(-beta)*|x-x0|^(beta/alpha)", "-(x1 - 2)^2 / (1 + x2)"):
        expr = parse_expr(text, 2, ("K", "kappa", "c", "beta", "alpha"))
        assert parse_expr(to_text(expr), 2, ("K", "kappa", "c", "beta", "alpha")) == expr


def test_negative_literal_folds():
    assert parse_expr("-3", 1) == Num(-3.0)
    assert parse_expr("|x|*2", 1) == BinOp("*", Radius(False), Num(2.0))


@pytest.mark.parametrize(
    "text,x,operation,index",
    [
        ("1/x1", [[1.0], [0.0]], "div", 1),
        ("ln(x1)", [[2.0], [1.0], [-1.0]], "ln", 2),
        ("sqrt(x1)", [[-1.0]], "sqrt", 0),
        ("x1^0.5", [[4.0], [-4.0]], "pow", 1),
        ("x1^(-1)", [[0.0]], "pow", 0),
    ],
)
def test_domain_errors_are_raised_with_index(text, x, operation, index):
    with pytest.raises(DomainError) as exc:
        _value(text, x)
    assert exc.value.operation == operation
    assert exc.value.index == index


def test_overflow_only_in_strict_mode():
    expr = parse_expr("exp(x1)", 1)
    X = np.array([[1000.0]])
    with pytest.raises(DomainError):
        evaluate(expr, X, np.zeros(1), {})
    assert np.isinf(evaluate(expr, X, np.zeros(1), {}, strict=False)[0])


def test_integer_power_of_negative_base():
    assert _value("x1^3", [[-2.0]])[0] == pytest.approx(-8.0)


def test_catalog_coefficients_pointwise(poly_model, tempered_model):
    assert eval_drift(poly_model, [2.0])[0] == pytest.approx(-4.0)
    assert eval_drift(tempered_model, [2.0])[0] == pytest.approx(-4.0)
    assert eval_diffusion(tempered_model, [2.0])[0, 0] == pytest.approx(2.0 ** 1.5)
    assert eval_diffusion(poly_model, [5.0]).shape == (1, 1)


def test_model_file_roundtrip_and_checksum(tmp_path, tempered_model):
    path = tmp_path / "model.json"
    path.write_text(tempered_model.to_file().model_dump_json(), encoding="utf-8")
    loaded = load_model(path)
    assert loaded.checksum() == tempered_model.checksum()
    assert eval_drift(loaded, [3.0])[0] == pytest.approx(eval_drift(tempered_model, [3.0])[0])


def test_model_file_shape_validation(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"name": "bad", "d": 2, "n": 1, "x0": [0, 0], "r0": 1,
                                "drift": ["-x1"], "diffusion": [["1"], ["1"]]}), encoding="utf-8")
    with pytest.raises(Exception):
        load_model(path)


def test_model_rejects_nonpositive_radius():
    with pytest.raises(ValidationException):
        build_model("m", 1, 1, [0.0], 0.0, {}, ["-x1"], [["1"]])
