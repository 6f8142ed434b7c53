import io
import math

import numpy as np
import pytest

from rinex_fixtures import ALPHA, BETA, RECEIVER, TOE, WEEK, clean_epochs, ephemerides, \
    nav_v2, nav_v3, noisy_copy, obs_v2, obs_v3, receiver_ecef
from hapsgnss.config import table_i_platforms
from hapsgnss.errors import MalformedEpoch, MalformedHeader, MalformedRecord, NoEphemeris, \
    SchemaError, TimestampMisaligned
from hapsgnss.harness import run_rinex
from hapsgnss.orbits import propagate_ephemeris
from hapsgnss.rinex import HapsSidecar, NavFile, NavHeader, SidecarRow, TruthTrajectory, \
    dump_haps_sidecar, gps_calendar, gps_time, load_haps_sidecar, load_truth_trajectory, \
    parse_nav, parse_obs, select_ephemeris, synthesize_sidecar

RECS = ephemerides()
FIELDS = ("prn", "toe", "toc", "sqrt_a", "e", "i0", "omega0", "omega", "m0", "delta_n",
          "i_dot", "omega_dot", "cuc", "cus", "crc", "crs", "cic", "cis", "af0", "af1", "af2")


def _nav(text):
    return parse_nav(io.StringIO(text))


def _obs(text):
    return parse_obs(io.StringIO(text))


def _same(a, b):
    for f in FIELDS:
        assert getattr(a, f) == pytest.approx(getattr(b, f), rel=1e-11, abs=1e-20), f


# -- time ---------------------------------------------------------------------

def test_gps_time():
    assert gps_time(1980, 1, 6) == (0, 0.0)
    assert gps_time(2020, 1, 2) == (WEEK, TOE)
    assert gps_time(20, 1, 2) == (WEEK, TOE)          # two-digit year
    c = gps_calendar(WEEK, TOE + 3661.5)
    assert (c.year, c.month, c.day, c.hour, c.minute, c.second) == (2020, 1, 2, 1, 1, 1)


# -- navigation -----------------------------------------------------------------

@pytest.mark.parametrize("writer", [nav_v2, nav_v3])
def test_valid_nav(writer):
    nav = _nav(writer(RECS))
    assert nav.errors == [] and len(nav.records) == 24
    for r in RECS:
        _same(nav.records[(r.prn, r.toe)], r)
    assert nav.header.ion_alpha == pytest.approx(ALPHA)
    assert nav.header.ion_beta == pytest.approx(BETA)
    assert nav.header.leap_seconds == 18


def test_single_record():
    nav = _nav(nav_v2(RECS[4:5]))
    (key, rec), = nav.records.items()
    assert key == (5, TOE) and rec.sqrt_a == pytest.approx(RECS[4].sqrt_a, rel=1e-12)


def test_empty_body():
    nav = _nav(nav_v3([]))
    assert nav.records == {} and nav.errors == []


def test_missing_end_of_header():
    text = nav_v2(RECS[:2]).replace("END OF HEADER", "COMMENT      ")
    with pytest.raises(MalformedHeader):
        _nav(text)


def test_bad_version():
    with pytest.raises(MalformedHeader):
        _nav(nav_v2(RECS[:1]).replace("     2.11", "     4.01", 1))


def test_mangled_exponent():
    lines = nav_v2(RECS[:5]).splitlines()
    # third record, second orbit line holds sqrt(a) in its last field
    head = next(k for k, l in enumerate(lines) if "END OF HEADER" in l) + 1
    target = head + 2 * 8 + 2
    lines[target] = lines[target][:-3] + "D+X"
    nav = _nav("\n".join(lines) + "\n")
    assert len(nav.errors) == 1
    err = nav.errors[0]
    assert isinstance(err, MalformedRecord) and err.line == target + 1
    assert f"line {target + 1}" in str(err)
    assert sorted(p for p, _ in nav.records) == [1, 2, 4, 5]


def test_truncated_records():
    lines = nav_v3(RECS[:6]).splitlines()
    head = next(k for k, l in enumerate(lines) if "END OF HEADER" in l) + 1
    # drop two orbit lines from the second record and cut the last record short
    del lines[head + 8 + 5:head + 8 + 7]
    lines = lines[:-3]
    nav = _nav("\n".join(lines) + "\n")
    assert sorted(p for p, _ in nav.records) == [1, 3, 4, 5]
    assert len(nav.errors) == 2
    assert all(isinstance(e, MalformedRecord) and e.line > head for e in nav.errors)


def test_invariant_violation_reported():
    lines = nav_v2(RECS[:2]).splitlines()
    head = next(k for k, l in enumerate(lines) if "END OF HEADER" in l) + 1
    # eccentricity field of record 1 becomes 0.5
    ln = lines[head + 2]
    lines[head + 2] = ln[:22] + " 5.000000000000D-01" + ln[41:]
    nav = _nav("\n".join(lines) + "\n")
    assert [p for p, _ in nav.records] == [2]
    assert len(nav.errors) == 1


def test_mixed_constellation():
    nav = _nav(nav_v3(RECS[:3], foreign=[("R", 1), ("E", 5), ("S", 20), ("C", 7)]))
    assert len(nav.records) == 3 and nav.errors == []
    assert nav.skipped == {"R": 1, "E": 1, "S": 1, "C": 1}


def test_parsed_orbits_invariants():
    nav = _nav(nav_v2(RECS))
    for rec in nav.records.values():
        prev = None
        for t in np.arange(TOE - 7000.0, TOE + 7000.0, 1.0)[::50]:
            p = propagate_ephemeris(rec, t).position
            assert 2.0e7 < np.linalg.norm(p) < 3.2e7
            q = propagate_ephemeris(rec, t + 1.0).position
            assert np.linalg.norm(q - p) < 4200.0


def _nav_with_toes(toes):
    recs = {}
    for toe in toes:
        r = ephemerides(1, toe=toe)[0]
        recs[(r.prn, toe)] = r
    return NavFile(NavHeader(2.11), recs)


def test_select_ephemeris():
    nav = _nav_with_toes([0.0, 7200.0])
    assert select_ephemeris(nav, 1, 3000.0).toe == 0.0
    assert select_ephemeris(nav, 1, 3601.0).toe == 7200.0
    assert select_ephemeris(nav, 1, 3600.0).toe == 7200.0
    with pytest.raises(NoEphemeris):
        select_ephemeris(nav, 2, 3000.0)
    with pytest.raises(NoEphemeris):
        select_ephemeris(nav, 1, 7200.0 + 4 * 3600.0)


def test_select_across_week():
    nav = _nav_with_toes([604_000.0])
    assert select_ephemeris(nav, 1, 100.0).toe == 604_000.0


# -- observations ---------------------------------------------------------------

TIMES = [TOE + k for k in range(2)]


@pytest.mark.parametrize("writer", [obs_v2, obs_v3])
def test_valid_obs(writer):
    ep = clean_epochs(RECS, TIMES)
    five = [(t, dict(list(s.items())[:5])) for t, s in ep]
    obs = _obs(writer(five))
    assert obs.errors == [] and len(obs.epochs) == 2
    assert [len(e.observations) for e in obs.epochs] == [5, 5]
    for e, (t, sats) in zip(obs.epochs, five):
        assert e.t == pytest.approx(t) and e.week == WEEK
        for o in e.observations:
            assert o.pseudorange == pytest.approx(sats[o.prn][0], abs=1e-3)
            assert o.cn0 == 45.0 and o.valid
    assert obs.interval == 1.0
    np.testing.assert_allclose(obs.header.approx_position, receiver_ecef(), atol=1e-3)


@pytest.mark.parametrize("writer", [obs_v2, obs_v3])
def test_missing_cn0(writer):
    ep = clean_epochs(RECS, TIMES, cn0=None)
    obs = _obs(writer(ep))
    assert obs.errors == []
    assert all(o.cn0 is None for e in obs.epochs for o in e.observations)


def test_obs_without_snr_type():
    ep = clean_epochs(RECS, TIMES)
    obs = _obs(obs_v2(ep, types=("C1", "L1")))
    assert all(o.cn0 is None for e in obs.epochs for o in e.observations)


@pytest.mark.parametrize("writer", [obs_v2, obs_v3])
def test_non_gps_rows(writer):
    t, sats = clean_epochs(RECS, TIMES[:1])[0]
    sats = dict(sats)
    sats["R05"] = (2.2e7, 40.0)
    sats["E11"] = (2.5e7, 41.0)
    obs = _obs(writer([(t, sats)]))
    assert obs.errors == []
    assert len(obs.epochs[0].observations) == len(sats) - 2
    assert obs.skipped == {"R": 1, "E": 1}


def test_many_satellites_continuation():
    t, sats = clean_epochs(RECS, TIMES[:1])[0]
    extra = {p: (2.1e7 + p, 40.0) for p in range(1, 33) if p not in sats}
    sats = {**sats, **dict(list(extra.items())[:14 - len(sats)])}
    assert len(sats) == 14
    obs = _obs(obs_v2([(t, sats)]))
    assert obs.errors == [] and len(obs.epochs[0].observations) == 14


def test_invalid_pseudorange_flagged():
    t, sats = clean_epochs(RECS, TIMES[:1])[0]
    prn = next(iter(sats))
    sats = dict(sats)
    sats[prn] = (123.0, 40.0)
    obs = _obs(obs_v2([(t, sats)]))
    bad = [o for o in obs.epochs[0].observations if o.prn == prn]
    assert bad and not bad[0].valid


def test_corrupt_epoch_skip_and_continue():
    ep = clean_epochs(RECS, [TOE + k for k in range(3)])
    lines = obs_v2(ep).splitlines()
    head = next(k for k, l in enumerate(lines) if "END OF HEADER" in l) + 1
    # corrupt the pseudorange of the first satellite of the first epoch
    lines[head + 1] = "   abc.def" + lines[head + 1][10:]
    obs = _obs("\n".join(lines) + "\n")
    assert len(obs.errors) == 1 and isinstance(obs.errors[0], MalformedEpoch)
    assert obs.errors[0].line == head + 2
    assert [e.t for e in obs.epochs] == [TOE + 1, TOE + 2]


def test_non_increasing_epochs():
    ep = clean_epochs(RECS, [TOE + 1, TOE, TOE + 2])
    obs = _obs(obs_v3(ep))
    assert [e.t for e in obs.epochs] == [TOE + 1, TOE + 2]
    assert len(obs.errors) == 1


def test_obs_header_without_code():
    with pytest.raises(MalformedHeader):
        _obs(obs_v2(clean_epochs(RECS, TIMES), types=("L1", "S1")))


# -- end to end -------------------------------------------------------------------

def _truth(clock=1e-4):
    return TruthTrajectory(np.array([TOE - 10.0, TOE + 100.0]), np.array([receiver_ecef()] * 2),
                           np.array([clock, clock]))


@pytest.mark.parametrize("nav_writer, obs_writer", [(nav_v2, obs_v2), (nav_v3, obs_v3)])
def test_rinex_zero_noise_fix(nav_writer, obs_writer):
    ep = clean_epochs(RECS, [TOE + k for k in range(3)], clock=1e-4)
    res = run_rinex(_obs(obs_writer(ep)), _nav(nav_writer(RECS)), truth=_truth())
    assert all(r.converged for r in res.rows)
    assert max(r.err3d for r in res.rows) < 0.01


def test_sidecar_end_to_end():
    times = [TOE + k for k in range(10)]
    truth = _truth()
    plats = table_i_platforms(RECEIVER)
    nav = _nav(nav_v2(RECS))
    obs = _obs(obs_v2(clean_epochs(RECS, times, clock=1e-4)))

    exact = synthesize_sidecar(truth, plats, times, 0.0, np.random.default_rng(0))
    res = run_rinex(obs, nav, exact, truth=truth)
    assert all(r.n_haps == 6 for r in res.rows)
    assert max(r.err3d for r in res.rows) < 0.01

    noisy_obs = _obs(obs_v2(noisy_copy(clean_epochs(RECS, times, clock=1e-4), 3.0, 1)))
    noisy = synthesize_sidecar(truth, plats, times, 2.0, np.random.default_rng(1))
    text = dump_haps_sidecar(noisy)
    loaded = load_haps_sidecar(io.StringIO(text), [e.t for e in noisy_obs.epochs], 1.0)
    gps = run_rinex(noisy_obs, nav, truth=truth)
    aided = run_rinex(noisy_obs, nav, loaded, truth=truth)
    assert aided.variant.name == "gps+haps"
    assert np.mean([r.err3d for r in aided.rows]) < np.mean([r.err3d for r in gps.rows])
    raim = run_rinex(noisy_obs, nav, loaded, raim=True, truth=truth)
    assert all(r.raim_applied for r in raim.rows)


# -- sidecar ------------------------------------------------------------------------

def _sidecar(n_epochs=10, n_haps=6):
    out = HapsSidecar()
    rng = np.random.default_rng(0)
    for k in range(n_epochs):
        t = TOE + k
        out.epochs[t] = [SidecarRow(t, f"HAPS{j + 1}", tuple(rng.normal(0, 6e6, 3)),
                                    float(rng.uniform(2e4, 9e4)), 45.0) for j in range(n_haps)]
    return out


def test_sidecar_grouping_and_round_trip():
    text = dump_haps_sidecar(_sidecar())
    side = load_haps_sidecar(io.StringIO(text))
    assert len(side.rows) == 60 and len(side.epochs) == 10
    assert all(len(v) == 6 for v in side.epochs.values())
    again = load_haps_sidecar(io.StringIO(dump_haps_sidecar(side)))
    for a, b in zip(side.rows, again.rows):
        assert a.haps_id == b.haps_id
        assert np.max(np.abs(np.subtract(a.position, b.position))) <= 1e-9
        assert abs(a.pseudorange - b.pseudorange) <= 1e-9 and abs(a.t - b.t) <= 1e-9


def test_sidecar_negative_pseudorange():
    text = dump_haps_sidecar(_sidecar(2)).splitlines()
    parts = text[4].split(",")
    parts[5] = "-5.0"
    text[4] = ",".join(parts)
    with pytest.raises(SchemaError) as exc:
        load_haps_sidecar(io.StringIO("\n".join(text)))
    assert exc.value.row == 5 and "row 5" in str(exc.value)


@pytest.mark.parametrize("mutate", [
    lambda rows: ["t,id"] + rows[1:],
    lambda rows: rows[:1] + [rows[1] + ",7"] + rows[2:],
    lambda rows: rows[:1] + [rows[1].replace("HAPS1", "")] + rows[2:],
    lambda rows: rows[:1] + [rows[1].replace("45.0", "nan")] + rows[2:],
    lambda rows: rows[:1] + [rows[1].replace("45.0", "x")] + rows[2:],
])
def test_sidecar_schema(mutate):
    rows = dump_haps_sidecar(_sidecar(1)).splitlines()
    with pytest.raises(SchemaError):
        load_haps_sidecar(io.StringIO("\n".join(mutate(rows))))


def test_sidecar_alignment():
    side = _sidecar(3)
    text = dump_haps_sidecar(side).replace(repr(float(TOE + 2)), repr(float(TOE + 2.3)))
    loaded = load_haps_sidecar(io.StringIO(text), [TOE, TOE + 1, TOE + 2], 1.0)
    assert sorted(loaded.epochs) == [TOE, TOE + 1, TOE + 2]
    with pytest.raises(TimestampMisaligned):
        load_haps_sidecar(io.StringIO(text), [TOE, TOE + 1, TOE + 5], 1.0)


def test_truth_trajectory():
    tr = load_truth_trajectory(io.StringIO("t_gps_s,x_m,y_m,z_m\n0,0,0,0\n10,10,20,30\n"))
    pos, clk = tr.at(5.0)
    np.testing.assert_allclose(pos, [5, 10, 15]) and clk == 0.0
    with pytest.raises(SchemaError):
        load_truth_trajectory(io.StringIO("t,x\n1,2\n"))
    with pytest.raises(SchemaError):
        load_truth_trajectory(io.StringIO("t_gps_s,x_m,y_m,z_m\n1,0,0,0\n0,0,0,0\n"))


def test_v3_bad_satellite_id():
    ep = clean_epochs(RECS, [TOE, TOE + 1])
    lines = obs_v3(ep).splitlines()
    head = next(j for j, l in enumerate(lines) if "END OF HEADER" in l)
    k = next(j for j, l in enumerate(lines) if j > head and l.startswith("G"))
    lines[k] = "?" + lines[k][1:]
    obs = _obs("\n".join(lines) + "\n")
    assert len(obs.errors) == 1 and obs.errors[0].line == k + 1
    assert obs.skipped == {} and [e.t for e in obs.epochs] == [TOE + 1]
