import numpy as np
import pytest

from hybridx.records import AdosRecord, DatasetStats, ImageSample, Label, PatientBundle


def img(pid, label=Label.ASD):
    return ImageSample(pid, np.zeros((3, 4, 4)), label)


class TestLabel:
    def test_text_round_trip(self):
        for lab in Label:
            assert Label.parse(str(lab)) is lab

    def test_sign_and_index(self):
        assert (Label.ASD.sign, Label.NON_ASD.sign) == (1, -1)
        assert (int(Label.ASD), int(Label.NON_ASD)) == (1, 0)

    def test_unknown_text(self):
        with pytest.raises(ValueError):
            Label.parse("asd")


class TestRecords:
    def test_score_count(self):
        with pytest.raises(ValueError, match="5 scores"):
            AdosRecord("p", (0, 0, 0), Label.ASD)

    def test_illegal_code(self):
        with pytest.raises(ValueError, match="social_response"):
            AdosRecord("p", (0, 0, 0, 0, 4), Label.ASD)

    def test_image_shape(self):
        with pytest.raises(ValueError):
            ImageSample(None, np.zeros((1, 4, 4)), Label.ASD)
        with pytest.raises(ValueError, match="square"):
            ImageSample(None, np.zeros((3, 4, 2)), Label.ASD)

    def test_bundle_consistency(self):
        rec = AdosRecord("p1", (0,) * 5, Label.ASD)
        assert PatientBundle("p1", rec, (img("p1"),), Label.ASD).images[0].side == 4
        with pytest.raises(ValueError, match="at least one"):
            PatientBundle("p1", rec, (), Label.ASD)
        with pytest.raises(ValueError, match="belongs"):
            PatientBundle("p1", rec, (img("p2"),), Label.ASD)
        with pytest.raises(ValueError, match="label"):
            PatientBundle("p1", rec, (img("p1", Label.NON_ASD),), Label.ASD)


class TestStats:
    def test_of_and_from_labels(self):
        assert DatasetStats.of(130, 105) == DatasetStats(235, 130, 105)
        assert DatasetStats.from_labels([Label.ASD, Label.NON_ASD, Label.ASD]) == DatasetStats(3, 2, 1)

    def test_inconsistent_total(self):
        with pytest.raises(ValueError):
            DatasetStats(10, 5, 4)
        with pytest.raises(ValueError):
            DatasetStats.of(-1, 3)
