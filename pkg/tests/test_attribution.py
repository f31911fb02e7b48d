import math

import numpy as np
import pytest

from content_probe.attribution import (
    AttributionConfig,
    CorrelationMatrix,
    HeatMap,
    ImageAttribution,
    binarize_cam,
    binarize_pano,
    correlation,
    correlation_matrix,
    read_matrix_csv,
    write_matrix_csv,
)
from content_probe.core_io import RegionMask
from content_probe.errors import ParameterError, ValidationError


def heat(values):
    return HeatMap(np.asarray(values, dtype=np.float64))


def mask(bits):
    return RegionMask(np.asarray(bits, dtype=bool))


class TestBinarize:
    def test_cam_tau_one_keeps_only_argmax(self):
        out = binarize_cam(heat([[0.1, 0.5], [0.5, 0.2]]), 1.0)
        np.testing.assert_array_equal(out.bits, [[False, True], [True, False]])

    def test_cam_all_zero_map(self):
        out = binarize_cam(heat(np.zeros((3, 3))), 0.5)
        assert not out.bits.any()

    def test_cam_relative_cutoff_inclusive(self):
        out = binarize_cam(heat([[0.2, 0.4], [0.6, 0.8]]), 0.5)
        np.testing.assert_array_equal(out.bits, [[False, True], [True, True]])

    def test_pano_passes_hard_masks_through(self):
        hard = [[0.0, 1.0], [1.0, 0.0]]
        for tau in (0.2, 0.5, 1.0):
            out = binarize_pano(heat(hard), tau)
            np.testing.assert_array_equal(out.bits, [[False, True], [True, False]])

    def test_pano_absolute_threshold(self):
        out = binarize_pano(heat([[0.3, 0.7]]), 0.6)
        np.testing.assert_array_equal(out.bits, [[False, True]])
        assert not binarize_pano(heat([[0.3, 0.5]]), 0.6).bits.any()

    def test_threshold_validation(self):
        with pytest.raises(ParameterError):
            binarize_cam(heat([[0.5]]), 0.0)
        with pytest.raises(ParameterError):
            binarize_pano(heat([[0.5]]), 1.5)

    def test_heatmap_validation(self):
        with pytest.raises(ValidationError):
            heat([[1.2]])
        with pytest.raises(ValidationError):
            heat([[float("nan")]])


class TestCorrelation:
    def test_identical_masks(self):
        m = mask([[1, 0], [1, 1]])
        assert correlation(m, m) == 1.0

    def test_disjoint_masks(self):
        assert correlation(mask([[1, 0]]), mask([[0, 1]])) == 0.0

    def test_pixel_ratio(self):
        pano = mask([[1] * 8])
        cam = mask([[1, 1, 0, 0, 0, 0, 0, 0]])
        assert correlation(cam, pano) == 0.25

    def test_empty_pano_absent(self):
        assert correlation(mask([[1]]), mask([[0]])) is None

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            correlation(mask([[1]]), mask([[1, 0]]))

    def test_common_pixel_permutation_invariance(self):
        rng = np.random.default_rng(0)
        cam = rng.random((6, 6)) > 0.5
        pano = rng.random((6, 6)) > 0.4
        base = correlation(mask(cam), mask(pano))
        perm = rng.permutation(36)
        cam_p = cam.ravel()[perm].reshape(6, 6)
        pano_p = pano.ravel()[perm].reshape(6, 6)
        assert correlation(mask(cam_p), mask(pano_p)) == base

    def test_monotone_in_tau_cam(self):
        rng = np.random.default_rng(1)
        cam_map = heat(rng.random((8, 8)))
        pano = mask(rng.random((8, 8)) > 0.5)
        previous = 1.1
        for tau in (0.2, 0.4, 0.6, 0.8, 1.0):
            ratio = correlation(binarize_cam(cam_map, tau), pano)
            assert ratio <= previous + 1e-12
            previous = ratio


def _image(image_id, label, cam_bits, pano_bits, pano_class="person"):
    return ImageAttribution(
        image_id=image_id,
        intent_labels=(label,),
        cam_maps={label: heat(np.asarray(cam_bits, dtype=np.float64))},
        pano_maps={pano_class: heat(np.asarray(pano_bits, dtype=np.float64))},
    )


class TestCorrelationMatrix:
    def test_single_image_cell(self):
        pano = [[1.0] * 8]
        cam = [[1.0, 1.0, 0, 0, 0, 0, 0, 0]]
        matrix = correlation_matrix([_image("a", "joy", cam, pano)])
        value, support = matrix.cell("person", "joy")
        assert value == 0.25 and support == 1

    def test_two_image_mean(self):
        pano = [[1.0] * 10]
        one = [[1.0, 1.0] + [0.0] * 8]
        two = [[1.0, 1.0, 1.0, 1.0] + [0.0] * 6]
        matrix = correlation_matrix(
            [_image("a", "joy", one, pano), _image("b", "joy", two, pano)]
        )
        value, support = matrix.cell("person", "joy")
        assert value == pytest.approx(0.3) and support == 2

    def test_absent_cells(self):
        items = [
            _image("a", "joy", [[1.0]], [[1.0]], pano_class="person"),
            _image("b", "calm", [[1.0]], [[1.0]], pano_class="tree"),
        ]
        matrix = correlation_matrix(items)
        value, support = matrix.cell("tree", "joy")
        assert value is None and support == 0

    def test_empty_pano_gives_no_support(self):
        matrix = correlation_matrix([_image("a", "joy", [[1.0]], [[0.0]])])
        value, support = matrix.cell("person", "joy")
        assert value is None and support == 0

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(2)
        items = []
        for i in range(12):
            cam = rng.random((5, 5))
            pano = (rng.random((5, 5)) > 0.3).astype(float)
            items.append(_image(f"i{i}", "joy", cam, pano))
        matrix = correlation_matrix(items)
        finite = matrix.values[~np.isnan(matrix.values)]
        assert ((finite >= 0) & (finite <= 1)).all()

    def test_missing_map_aborts_unless_permissive(self):
        broken = ImageAttribution("a", ("joy",), {}, {"person": heat([[1.0]])})
        with pytest.raises(ValidationError, match="a"):
            correlation_matrix([broken])
        matrix = correlation_matrix(
            [broken, _image("b", "joy", [[1.0]], [[1.0]])], permissive=True
        )
        value, support = matrix.cell("person", "joy")
        assert value == 1.0 and support == 1

    def test_pooled_mode(self):
        # image a: 1/4 of 4 pano pixels; image b: 4/4 of another 4
        a = _image("a", "joy", [[1.0, 0, 0, 0]], [[1.0] * 4])
        b = _image("b", "joy", [[1.0] * 4], [[1.0] * 4])
        mean_matrix = correlation_matrix([a, b])
        pooled_matrix = correlation_matrix([a, b], AttributionConfig(pooled=True))
        assert mean_matrix.cell("person", "joy")[0] == pytest.approx((0.25 + 1.0) / 2)
        assert pooled_matrix.cell("person", "joy")[0] == pytest.approx(5 / 8)


class TestMatrixCsv:
    def test_roundtrip_with_absent_cells(self, tmp_path):
        values = np.array([[0.25, np.nan], [1.0, 0.0]])
        support = np.array([[2, 0], [1, 3]])
        matrix = CorrelationMatrix(["person", "tree"], ["calm", "joy"], values, support)
        path = tmp_path / "matrix.csv"
        write_matrix_csv(matrix, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "class,calm,joy"
        assert lines[1] == "person,0.250000,"  # absent cell is an empty field
        assert lines[2] == "tree,1.000000,0.000000"
        back = read_matrix_csv(path)
        assert back.pano_classes == ["person", "tree"]
        assert back.intent_classes == ["calm", "joy"]
        assert math.isnan(back.values[0, 1])
        np.testing.assert_allclose(back.values[1], [1.0, 0.0])
        support_text = (tmp_path / "matrix.support.csv").read_text()
        assert support_text.splitlines()[1] == "person,2,0"
