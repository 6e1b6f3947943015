import pytest

from glyco.clinical import BolusInputs, bolus
from glyco.errors import InvalidValueError


def test_all_terms_vanish():
    result = bolus(BolusInputs(cho_g=0, cr=10, gc_mgdl=120, gt_mgdl=120, cf=30, ps=1, iob=0))
    assert result.units == 0.0
    assert result.no_bolus_needed


def test_worked_example():
    # 60/10 + (180-120)/30 - 1*2 = 6 + 2 - 2
    result = bolus(BolusInputs(cho_g=60, cr=10, gc_mgdl=180, gt_mgdl=120, cf=30, ps=1, iob=2))
    assert result.units == pytest.approx(6.0, abs=1e-12)
    assert not result.no_bolus_needed


def test_raised_sensitivity_multiplier():
    # exercise halves the insulin-on-board subtraction: 6 + 2 - 0.5*2 = 7
    result = bolus(BolusInputs(cho_g=60, cr=10, gc_mgdl=180, gt_mgdl=120, cf=30, ps=0.5, iob=2))
    assert result.units == pytest.approx(7.0, abs=1e-12)


def test_negative_returned_with_advisory():
    result = bolus(BolusInputs(cho_g=0, cr=10, gc_mgdl=80, gt_mgdl=120, cf=30, ps=1, iob=1))
    assert result.units < 0
    assert result.no_bolus_needed


@pytest.mark.parametrize("field,value", [("cr", 0.0), ("cf", -1.0), ("ps", 0.0)])
def test_domain_errors(field, value):
    kwargs = dict(cho_g=10, cr=10, gc_mgdl=150, gt_mgdl=120, cf=30, ps=1, iob=0)
    kwargs[field] = value
    with pytest.raises(InvalidValueError):
        BolusInputs(**kwargs)


def test_negative_cho_or_iob_rejected():
    with pytest.raises(InvalidValueError):
        BolusInputs(cho_g=-1, cr=10, gc_mgdl=150, gt_mgdl=120, cf=30)
    with pytest.raises(InvalidValueError):
        BolusInputs(cho_g=1, cr=10, gc_mgdl=150, gt_mgdl=120, cf=30, iob=-0.1)


def test_affine_in_cho_and_iob():
    base = dict(cr=8.0, gc_mgdl=200, gt_mgdl=110, cf=25, ps=1.3)
    b0 = bolus(BolusInputs(cho_g=0, iob=0, **base)).units
    # slope in cho is 1/cr
    for cho in (8.0, 40.0, 120.0):
        assert bolus(BolusInputs(cho_g=cho, iob=0, **base)).units == pytest.approx(
            b0 + cho / 8.0, abs=1e-12
        )
    # slope in iob is -ps
    for iob in (0.5, 2.0, 5.0):
        assert bolus(BolusInputs(cho_g=0, iob=iob, **base)).units == pytest.approx(
            b0 - 1.3 * iob, abs=1e-12
        )


def test_monotone_in_measured_glucose():
    previous = None
    for gc in (80, 120, 160, 240, 320):
        units = bolus(BolusInputs(cho_g=30, cr=10, gc_mgdl=gc, gt_mgdl=120, cf=30)).units
        if previous is not None:
            assert units > previous
        previous = units
