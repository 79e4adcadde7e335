import math

import numpy as np
import pytest

from ricsim.errors import DomainError
from ricsim.wireless import (
    Beam,
    LocalizationTechnique,
    Position,
    PropagationParams,
    TaConfig,
    beam_gain_db,
    make_grid_of_beams,
    noisy_position,
    noisy_positions,
    pathloss_db,
    rsrp_dbm,
    rsrp_matrix,
    ta_index,
)


FREE_SPACE = PropagationParams(ref_loss_db=40, exponent=2, tx_power_dbm=30)


# -- pathloss ----------------------------------------------------------------

def test_pathloss_examples():
    assert pathloss_db(1.0, FREE_SPACE) == pytest.approx(40.0)
    assert pathloss_db(100.0, FREE_SPACE) == pytest.approx(80.0)
    assert pathloss_db(10.0, PropagationParams(ref_loss_db=40, exponent=3.5)) == pytest.approx(75.0)


def test_pathloss_grows_with_distance():
    d = np.linspace(1.0, 5000.0, 200)
    assert np.all(np.diff(pathloss_db(d, FREE_SPACE)) > 0)


@pytest.mark.parametrize("d", [0.0, -1.0, float("nan")])
def test_pathloss_rejects_non_positive_distance(d):
    with pytest.raises(DomainError):
        pathloss_db(d, FREE_SPACE)


def test_propagation_params_validate():
    with pytest.raises(DomainError):
        PropagationParams(exponent=0)
    with pytest.raises(DomainError):
        PropagationParams(shadowing_sigma_db=-1)


# -- beams -------------------------------------------------------------------

def test_grid_of_beams_spreads_over_sector():
    beams = make_grid_of_beams(8, sector_center_deg=90, sector_width_deg=120)
    assert [b.beam_id for b in beams] == list(range(8))
    assert beams[0].boresight_deg == pytest.approx(37.5)
    assert beams[-1].boresight_deg == pytest.approx(142.5)
    assert all(b.beamwidth_3db_deg == pytest.approx(15.0) for b in beams)
    assert make_grid_of_beams(0) == []


def test_beam_gain_shape():
    beam = Beam(0, 90.0, 15.0, 20.0, 30.0)
    assert beam_gain_db(beam, 90.0) == pytest.approx(20.0)
    assert beam_gain_db(beam, 97.5) == pytest.approx(17.0)
    assert beam_gain_db(beam, 82.5) == pytest.approx(17.0)
    assert beam_gain_db(beam, 270.0) == pytest.approx(-10.0)


def test_beam_gain_wraps_around_north():
    beam = Beam(0, 355.0, 10.0, 20.0, 30.0)
    assert beam_gain_db(beam, 5.0) == pytest.approx(beam_gain_db(beam, 345.0))


def test_beam_validation():
    with pytest.raises(DomainError):
        Beam(-1, 0.0, 10.0, 20.0, 30.0)
    with pytest.raises(DomainError):
        Beam(0, 360.0, 10.0, 20.0, 30.0)


# -- RSRP --------------------------------------------------------------------

def test_rsrp_omni_and_beamformed():
    cell = Position(0, 0)
    assert rsrp_dbm(Position(100, 0), cell, None, FREE_SPACE) == pytest.approx(-50.0)
    beam = Beam(0, 90.0, 15.0, 20.0, 30.0)
    assert rsrp_dbm(Position(0, 100), cell, beam, FREE_SPACE) == pytest.approx(-30.0)
    assert rsrp_dbm(Position(100, 0), cell, None, FREE_SPACE, shadowing_db=-4.0) == pytest.approx(-54.0)


def test_rsrp_rejects_colocated_ue():
    with pytest.raises(DomainError):
        rsrp_dbm(Position(3, 4), Position(3, 4), None, FREE_SPACE)


def test_rsrp_matrix_matches_scalar(rng):
    cell = Position(10, -5)
    beams = make_grid_of_beams(4)
    xy = rng.uniform(-200, 200, size=(25, 2))
    shadowing = rng.normal(0, 3, size=25)
    base, per_beam = rsrp_matrix(xy, cell, beams, FREE_SPACE, shadowing)
    for i, (x, y) in enumerate(xy):
        ue = Position(float(x), float(y))
        assert base[i] == pytest.approx(rsrp_dbm(ue, cell, None, FREE_SPACE, shadowing[i]))
        for j, beam in enumerate(beams):
            assert per_beam[i, j] == pytest.approx(rsrp_dbm(ue, cell, beam, FREE_SPACE, shadowing[i]))


# -- timing advance ----------------------------------------------------------

def test_ta_resolution_per_numerology():
    assert TaConfig(15).resolution_m == pytest.approx(78.125)
    assert TaConfig(240).mu == 4
    assert TaConfig(240).resolution_m == pytest.approx(78.125 / 16)


def test_ta_index_examples():
    assert ta_index(100.0, TaConfig(15)) == 1
    assert ta_index(100.0, TaConfig(240)) == 20
    assert ta_index(0.0, TaConfig(15)) == 0
    assert ta_index(78.125, TaConfig(15)) == 1


def test_ta_index_bin_contains_distance(rng):
    distances = rng.uniform(0.0, 2000.0, size=10_000)
    previous = None
    for scs in (15, 30, 60, 120, 240):
        ta = TaConfig(scs)
        bins = np.array([ta_index(float(d), ta) for d in distances])
        residual = distances - bins * ta.resolution_m
        assert np.all(residual >= 0) and np.all(residual < ta.resolution_m)
        if previous is not None:
            assert np.all(bins >= previous)
        previous = bins


def test_ta_rejects_bad_input():
    with pytest.raises(DomainError):
        TaConfig(45)
    with pytest.raises(DomainError):
        ta_index(-1.0, TaConfig(15))


# -- localization ------------------------------------------------------------

def test_localization_sigmas():
    assert LocalizationTechnique.PERFECT.sigma_m == 0.0
    assert LocalizationTechnique.RTK.sigma_m == pytest.approx(0.01)
    assert LocalizationTechnique.DGPS.sigma_m == pytest.approx(1.0)
    assert LocalizationTechnique.GPS.sigma_m == pytest.approx(6.0)


def test_perfect_localization_is_exact(rng):
    pos = Position(12.5, -3.0)
    assert noisy_position(pos, LocalizationTechnique.PERFECT, rng) == pos


def test_gps_error_spread(rng):
    xy = np.zeros((20000, 2))
    err = noisy_positions(xy, LocalizationTechnique.GPS, rng)
    assert np.std(err[:, 0]) == pytest.approx(6.0, rel=0.05)
    assert np.std(err[:, 1]) == pytest.approx(6.0, rel=0.05)
    assert abs(np.mean(err)) < 0.2


def test_position_must_be_finite():
    with pytest.raises(DomainError):
        Position(math.nan, 0.0)
    assert Position(0, 0).azimuth_to(Position(0, 5)) == pytest.approx(90.0)
