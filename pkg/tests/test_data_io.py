import json

import numpy as np
import pytest

from multida import FormatError, ValidationError
from multida.data_io import (
    CsvSchema,
    filter_features,
    load_dataset,
    load_matrix,
    load_model,
    save_dataset,
    save_model,
)
from multida.estimator import Dataset, fit, predict


TOY = "label,x1\na,0\na,2\nb,4\nb,6\n"


@pytest.fixture
def toy_csv(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text(TOY)
    return path


class TestLoadDataset:
    def test_basic(self, toy_csv):
        data = load_dataset(toy_csv)
        assert (data.n, data.p, data.K) == (4, 1, 2)
        assert data.class_labels == ("a", "b")
        assert data.feature_names == ("x1",)
        np.testing.assert_allclose(data.X[:, 0], [0, 2, 4, 6])

    def test_missing_value_rejected(self, tmp_path):
        path = tmp_path / "na.csv"
        path.write_text("label,x1\na,NA\nb,2\n")
        with pytest.raises(FormatError, match="row 2, column x1"):
            load_dataset(path)

    def test_nan_token_rejected(self, tmp_path):
        path = tmp_path / "nan.csv"
        path.write_text("label,x1\na,nan\nb,2\n")
        with pytest.raises(FormatError, match="non-finite"):
            load_dataset(path)

    def test_single_class_rejected(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("label,x1\na,1\na,2\n")
        with pytest.raises(ValidationError, match="fewer than 2 classes"):
            load_dataset(path)

    def test_headerless_with_index_label(self, tmp_path):
        path = tmp_path / "nh.csv"
        path.write_text("a,0\na,2\nb,4\nb,6\n")
        data = load_dataset(path, CsvSchema(has_header=False, label_column=0))
        assert (data.n, data.p, data.K) == (4, 1, 2)
        assert data.feature_names == ("x1",)

    def test_missing_label_column(self, toy_csv):
        with pytest.raises(ValidationError, match="not found"):
            load_dataset(toy_csv, CsvSchema(label_column="y"))

    def test_ragged_rows(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("label,x1\na,1\nb,2,3\n")
        with pytest.raises(FormatError, match="row 3"):
            load_dataset(path)

    def test_roundtrip_idempotent(self, toy_csv, tmp_path):
        data = load_dataset(toy_csv)
        out = tmp_path / "echo.csv"
        save_dataset(data, out)
        again = load_dataset(out)
        assert np.array_equal(data.X, again.X)
        assert data.class_labels == again.class_labels

    def test_full_precision_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        data = Dataset.from_arrays(rng.normal(size=(5, 3)), ["a", "b", "a", "b", "a"])
        out = tmp_path / "prec.csv"
        save_dataset(data, out)
        again = load_dataset(out)
        assert np.array_equal(data.X, again.X)  # bit-exact via repr


class TestLoadMatrix:
    def test_unlabeled(self, tmp_path):
        path = tmp_path / "q.csv"
        path.write_text("x1\n1.5\n-2\n")
        X, names = load_matrix(path, CsvSchema(label_column=None))
        assert X.shape == (2, 1)
        assert names == ["x1"]

    def test_label_column_ignored_when_present(self, toy_csv):
        X, names = load_matrix(toy_csv, CsvSchema(label_column="label"))
        assert X.shape == (4, 1)
        assert names == ["x1"]

    def test_headerless(self, tmp_path):
        path = tmp_path / "q.csv"
        path.write_text("1,2\n3,4\n")
        X, names = load_matrix(path, CsvSchema(has_header=False, label_column=None))
        assert X.shape == (2, 2)
        assert names == ["x1", "x2"]


class TestFilterFeatures:
    def _data(self):
        X = np.array(
            [
                # f1 constant, f2 varying, f3 low in every class, f4 high in one
                [5.0, 1.0, 1.0, 8.0],
                [5.0, 2.0, 2.0, 8.5],
                [5.0, 3.0, 1.5, 9.0],
                [5.0, 9.0, 2.5, 1.0],
                [5.0, 8.0, 1.0, 1.5],
                [5.0, 7.0, 2.0, 2.0],
            ]
        )
        return Dataset.from_arrays(X, ["a"] * 3 + ["b"] * 3,
                                   feature_names=["f1", "f2", "f3", "f4"])

    def test_zero_mad(self):
        reduced, kept = filter_features(self._data(), "zero-mad")
        assert kept == [1, 2, 3]
        assert reduced.feature_names == ("f2", "f3", "f4")

    def test_class_median_below(self):
        reduced, kept = filter_features(self._data(), ("class-median-below", 7.0))
        # class medians: f1 (5,5), f2 (2,8), f3 (1.5,2), f4 (8.5,1.5);
        # only f2 and f4 clear 7 in some class
        assert kept == [1, 3]

    def test_string_rule_spelling(self):
        _, kept = filter_features(self._data(), "class-median-below:7")
        assert kept == [1, 3]

    def test_boundary_median_kept(self):
        # medians (6.9, 6.5, 5.0) dropped at t=7; (7.2, 6.5, 5.0) kept
        X = np.array([[6.9, 7.2], [6.9, 7.2], [6.5, 6.5], [6.5, 6.5], [5.0, 5.0], [5.0, 5.0]])
        data = Dataset.from_arrays(X, ["a", "a", "b", "b", "c", "c"])
        reduced, kept = filter_features(data, ("class-median-below", 7.0))
        assert kept == [1]

    def test_idempotent(self):
        data = self._data()
        once, kept1 = filter_features(data, "zero-mad")
        twice, kept2 = filter_features(once, "zero-mad")
        assert np.array_equal(once.X, twice.X)
        assert kept2 == list(range(once.p))

    def test_all_dropped_is_error(self):
        data = Dataset.from_arrays(np.ones((4, 2)), ["a", "a", "b", "b"])
        with pytest.raises(ValidationError, match="every feature"):
            filter_features(data, "zero-mad")

    def test_unknown_rule(self):
        with pytest.raises(ValidationError, match="unknown filter rule"):
            filter_features(self._data(), "median")


class TestModelRoundTrip:
    def _model(self, seed=0, variance_mode="equal", k=3):
        rng = np.random.default_rng(seed)
        y = np.repeat(np.arange(1, k + 1), 12)
        X = rng.normal(size=(len(y), 6))
        X[:, 0] += 2.0 * (y - 1)
        data = Dataset.from_arrays(X, [f"c{v}" for v in y])
        return fit(data, penalty="ebic", variance_mode=variance_mode)

    @pytest.mark.parametrize("variance_mode", ["equal", "unequal"])
    def test_roundtrip_bit_exact_predictions(self, tmp_path, variance_mode):
        model = self._model(variance_mode=variance_mode)
        rng = np.random.default_rng(1)
        q = rng.normal(size=(9, 6))
        before = predict(model, q)
        path = tmp_path / "m.json"
        save_model(model, path)
        loaded = load_model(path)
        after = predict(loaded, q)
        assert np.array_equal(before.probabilities, after.probabilities)
        assert before.labels == after.labels

    def test_roundtrip_fields(self, tmp_path):
        model = self._model()
        path = tmp_path / "m.json"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.n == model.n
        assert loaded.class_labels == model.class_labels
        assert loaded.feature_names == model.feature_names
        assert loaded.parts.columns == model.parts.columns
        assert loaded.penalty == model.penalty
        for f in ("mu", "sigma2", "pi", "gamma", "lam", "variance_floor"):
            assert np.array_equal(getattr(loaded, f), getattr(model, f))

    def test_minus_inf_lambda_survives(self, tmp_path):
        # single-sample class makes several QDA hypotheses inadmissible
        X = np.random.default_rng(2).normal(size=(13, 2))
        data = Dataset.from_arrays(X, ["a"] * 6 + ["b"] * 6 + ["c"])
        model = fit(data, variance_mode="unequal")
        assert np.isneginf(model.lam).any()
        path = tmp_path / "m.json"
        save_model(model, path)
        loaded = load_model(path)
        assert np.array_equal(loaded.lam, model.lam)

    def test_truncated_file(self, tmp_path):
        model = self._model()
        path = tmp_path / "m.json"
        save_model(model, path)
        path.write_text(path.read_text()[:200])
        with pytest.raises(FormatError, match="not a valid model document"):
            load_model(path)

    def test_version_mismatch(self, tmp_path):
        model = self._model()
        path = tmp_path / "m.json"
        save_model(model, path)
        doc = json.loads(path.read_text())
        doc["schema_version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError, match="schema_version"):
            load_model(path)

    def test_tampered_gamma_row_rejected(self, tmp_path):
        model = self._model()
        path = tmp_path / "m.json"
        save_model(model, path)
        doc = json.loads(path.read_text())
        doc["gamma_hat"][0] = [0.1] * len(doc["gamma_hat"][0])
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError, match="invariant"):
            load_model(path)

    def test_missing_field(self, tmp_path):
        model = self._model()
        path = tmp_path / "m.json"
        save_model(model, path)
        doc = json.loads(path.read_text())
        del doc["pi"]
        path.write_text(json.dumps(doc))
        with pytest.raises(FormatError, match="missing field"):
            load_model(path)
