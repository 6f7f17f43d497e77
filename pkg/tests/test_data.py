import numpy as np
import pytest

from ordsmooth.data import (ColumnSchema, Dataset, StageCoding,
                            derive_day_offset, load_dataset, schema_for,
                            write_dataset)
from ordsmooth.errors import CodingError, ParseError, SchemaError

STAGES = ["buds", "flowers", "senescent", "open"]


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_maps_stages_through_coding(tmp_path):
    path = write(tmp_path, "stage,doy\nbuds,160\nflowers,167\nsenescent,174\nopen,181\n")
    d = load_dataset(path, ColumnSchema(stage="stage", stage_labels=STAGES, covariates=["doy"]))
    assert d.n == 4 and d.K == 4
    assert d.stage.tolist() == [1, 2, 3, 4]
    assert d.covariates["doy"].tolist() == [160.0, 167.0, 174.0, 181.0]


def test_unknown_stage_label_names_row(tmp_path):
    path = write(tmp_path, "stage,doy\nbuds,160\nwilted,167\n")
    with pytest.raises(CodingError, match=r"row 2.*wilted"):
        load_dataset(path, ColumnSchema(stage="stage", stage_labels=STAGES, covariates=["doy"]))


def test_missing_column_is_schema_error(tmp_path):
    path = write(tmp_path, "stage,doy\nbuds,160\n")
    with pytest.raises(SchemaError, match="site"):
        load_dataset(path, ColumnSchema(stage="stage", stage_labels=STAGES, factors=["site"]))


def test_non_numeric_cell_names_row(tmp_path):
    path = write(tmp_path, "stage,doy\nbuds,160\nflowers,n/a\n")
    with pytest.raises(ParseError, match="row 2"):
        load_dataset(path, ColumnSchema(stage="stage", stage_labels=STAGES, covariates=["doy"]))


def test_count_column_expands_rows(tmp_path):
    path = write(tmp_path, "stage,doy,n\nbuds,160,3\nflowers,160,0\nopen,161,2\n")
    d = load_dataset(path, ColumnSchema(stage="stage", stage_labels=STAGES,
                                        covariates=["doy"], count="n"))
    assert d.stage.tolist() == [1, 1, 1, 4, 4]
    assert d.covariates["doy"].tolist() == [160.0] * 3 + [161.0] * 2


def test_factor_levels_first_appearance_order(tmp_path):
    path = write(tmp_path, "stage,site\nbuds,3\nflowers,1\nopen,3\nbuds,2\n")
    d = load_dataset(path, ColumnSchema(stage="stage", stage_labels=STAGES, factors=["site"]))
    assert d.factor_levels["site"] == ("3", "1", "2")


def test_round_trip_identity(tmp_path):
    rng = np.random.default_rng(5)
    d = Dataset(
        stage=rng.integers(1, 5, size=40),
        stage_coding=StageCoding(tuple(STAGES)),
        covariates={"doy": rng.uniform(100, 250, 40), "elev": rng.normal(size=40)},
        factors={"site": rng.choice(["1", "2", "3"], 40).astype(object)},
    )
    path = tmp_path / "rt.csv"
    write_dataset(d, path)
    d2 = load_dataset(path, schema_for(d))
    assert d2.stage.tolist() == d.stage.tolist()
    for name in d.covariates:
        assert d2.covariates[name].tolist() == d.covariates[name].tolist()
    assert d2.factors["site"].tolist() == d.factors["site"].tolist()
    assert d2.factor_levels == d.factor_levels


def test_tab_delimiter_round_trip(tmp_path):
    d = Dataset(stage=np.array([1, 2]), stage_coding=StageCoding(("a", "b")),
                covariates={"x": np.array([1.5, 2.5])})
    path = tmp_path / "rt.tsv"
    write_dataset(d, path, delimiter="\t")
    d2 = load_dataset(path, schema_for(d, delimiter="\t"))
    assert d2.covariates["x"].tolist() == [1.5, 2.5]


def test_day_offset_single_group():
    d = Dataset(stage=np.array([1, 1, 2]), stage_coding=StageCoding(("a", "b")),
                covariates={"day": np.array([160.0, 167.0, 174.0])},
                factors={"year": np.array(["2010"] * 3, dtype=object)})
    out = derive_day_offset(d, "year", "day")
    assert out.covariates["dffs"].tolist() == [0.0, 7.0, 14.0]


def test_day_offset_per_group_minimum():
    d = Dataset(
        stage=np.array([1, 2, 1, 2]), stage_coding=StageCoding(("a", "b")),
        covariates={"day": np.array([150.0, 157.0, 162.0, 169.0])},
        factors={"year": np.array(["2010", "2010", "2011", "2011"], dtype=object)},
    )
    out = derive_day_offset(d, "year", "day")
    dffs = out.covariates["dffs"]
    assert dffs.tolist() == [0.0, 7.0, 0.0, 7.0]
    # every group hits zero exactly and never goes negative
    assert dffs.min() >= 0.0
    for level in ("2010", "2011"):
        assert dffs[out.factors["year"] == level].min() == 0.0


def test_observation_row_view():
    d = Dataset(stage=np.array([2]), stage_coding=StageCoding(("a", "b", "c")),
                covariates={"x": np.array([3.5])},
                factors={"g": np.array(["u"], dtype=object)})
    obs = d.row(0)
    assert obs.stage == 2 and obs.covariates["x"] == 3.5 and obs.factors["g"] == "u"


def test_stage_out_of_range_rejected():
    with pytest.raises(CodingError):
        Dataset(stage=np.array([0, 1]), stage_coding=StageCoding(("a", "b")))


def test_non_finite_covariate_rejected():
    with pytest.raises(ParseError):
        Dataset(stage=np.array([1]), stage_coding=StageCoding(("a", "b")),
                covariates={"x": np.array([np.nan])})
