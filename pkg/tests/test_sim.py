import numpy as np
import pytest

from conftest import p
from hybridsyn.expr import const, lambdify, parse, state_names
from hybridsyn.hybrid import Guard, JumpPiece, OpenLoopSystem, StatePartition, close_loop
from hybridsyn.problem import load, read_certificate
from hybridsyn.sim import (EscapedDomain, HybridArc, SimOptions, ZenoSuspected, phase_svg, simulate,
                           validate_certificate)


def sd1():
    pr = load("sys1_sd")
    return pr, close_loop(pr.system, [p("-s1 - s2", 2)])


def test_sampled_data_sawtooth():
    _, cl = sd1()
    arc = simulate(cl, (0.4, 0.4, 0.4, 0.4, 0.0), SimOptions(t_max=0.2, dt=1e-3))
    X, t, j = arc.states, np.array(arc.t), np.array(arc.j)
    assert arc.well_formed((0.01,), (4,))
    assert X[:, 4].min() >= 0 and X[:, 4].max() <= 0.01 + 1e-12
    times = [tj for tj, _, kind, _ in arc.jumps]
    assert all(kind == "timer" for _, _, kind, _ in arc.jumps)
    assert np.allclose(np.diff(times), 0.01, atol=1e-9)
    assert len(times) in (19, 20)
    for k in range(1, len(t)):
        if j[k] == j[k - 1]:
            # held samples stay constant while flowing
            assert np.array_equal(X[k, 2:4], X[k - 1, 2:4])
        else:
            assert X[k, 4] == 0.0 and np.array_equal(X[k, 2:4], X[k, 0:2])


def test_hysteresis_jumps_to_lower_branch():
    pr = load("hysteresis")
    cert = read_certificate("hysteresis.cert", pr)
    cl = close_loop(pr.system, cert.kappa)
    arc = simulate(cl, (2.0, 1.0), SimOptions(t_max=3.0, dt=1e-3))
    assert arc.jumps[0][2:] == ("system", "up")
    assert list(arc.x[1]) == [2.0, -1.0]
    # then s1 decreases along the lower branch
    s1 = arc.states[:, 0]
    assert s1[-1] < 1.0 and np.all(arc.states[1:, 1] == -1.0)


def test_constant_flow_is_constant_arc():
    sys = OpenLoopSystem(StatePartition(2), (const(0.0), const(0.0)))
    arc = simulate(close_loop(sys, []), (0.3, -0.2), SimOptions(t_max=1.0, dt=0.1))
    assert np.all(arc.states == [0.3, -0.2]) and arc.t[-1] == pytest.approx(1.0)
    assert arc.jumps == [] and arc.stopped == "t_max"


def test_leaving_flow_set_raises():
    N = state_names(1)
    sys = OpenLoopSystem(StatePartition(1), (const(1.0),),
                         flow_set=(Guard((parse("s1 - 1", N),)),))
    with pytest.raises(EscapedDomain):
        simulate(close_loop(sys, []), (0.0,), SimOptions(t_max=5.0, dt=0.01))


def test_initial_state_outside_c_and_d():
    pr = load("hysteresis")
    cl = close_loop(pr.system, [p("-s1", 2)])
    with pytest.raises(EscapedDomain):
        simulate(cl, (3.0, 0.5))


def test_zeno_detected():
    N = state_names(1)
    sys = OpenLoopSystem(StatePartition(1), (const(0.0),),
                         jumps=(JumpPiece(Guard((parse("s1", N), parse("-s1", N))), (const(0.0),), "stuck"),))
    with pytest.raises(ZenoSuspected):
        simulate(close_loop(sys, []), (0.0,))


def test_wrong_state_length():
    _, cl = sd1()
    with pytest.raises(ValueError):
        simulate(cl, (0.1, 0.1))


def test_well_formed_rejects_bad_time_domain():
    arc = HybridArc()
    arc.add(0.0, 0, [0.0])
    arc.add(0.1, 1, [0.0])  # a jump may not advance t
    assert not arc.well_formed()


def test_pendulum_validation_all_reach():
    pr = load("sys5_ct")
    cert = read_certificate("pendulum.cert", pr)
    cl = close_loop(pr.system, cert.kappa)
    rep = validate_certificate(cl, pr.sets, 30, V=cert.V, seed=0)
    assert rep.violations == 0 and rep.reached == 30 and not rep.flagged


def test_reach_and_stay_pendulum():
    pr = load("sys5_ct")
    cert = read_certificate("pendulum.cert", pr)
    cl = close_loop(pr.system, cert.kappa)
    rep = validate_certificate(cl, pr.sets, 10, V=cert.V, beta=cert.beta, seed=1)
    assert rep.violations == 0 and rep.reached == 10


def test_uncertified_controller_is_not_flagged():
    pr = load("sys1_ct")
    cl = close_loop(pr.system, [p("s1 + s2", 2)])  # destabilising
    rep = validate_certificate(cl, pr.sets, 10, certified=False, seed=0,
                               opts=SimOptions(t_max=5.0, dt=5e-3))
    assert rep.success_fraction < 1.0 and not rep.flagged


def test_hysteresis_validation():
    pr = load("hysteresis")
    cert = read_certificate("hysteresis.cert", pr)
    cl = close_loop(pr.system, cert.kappa)
    rep = validate_certificate(cl, pr.sets, 30, V=cert.V, seed=0)
    assert rep.violations == 0 and rep.reached == 30


def test_csv_and_svg_export(tmp_path):
    pr = load("sys5_ct")
    cert = read_certificate("pendulum.cert", pr)
    cl = close_loop(pr.system, cert.kappa)
    arc = simulate(cl, (0.4, 0.3), SimOptions(t_max=1.0, dt=1e-2))
    arc.to_csv(tmp_path / "arc.csv")
    rows = (tmp_path / "arc.csv").read_text().splitlines()
    assert rows[0] == "t,j,s1,s2" and len(rows) == len(arc.t) + 1
    phase_svg(tmp_path / "phase.svg", [arc], pr.sets, V=cert.V, beta=cert.beta)
    svg = (tmp_path / "phase.svg").read_text()
    assert svg.startswith("<svg") and "path" in svg
    Vf = lambdify(cert.V)
    assert float(Vf(arc.final(), ())) < float(Vf(arc.x[0], ()))
