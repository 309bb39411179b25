import math

import numpy as np
import pytest

from ddrobust import aht, spin
from ddrobust.sequences import CATALOG, Delay, Pulse, PulseSpec, SequenceCycle, build_cycle

EPS = 1e-3


def components(op):
    return np.real(spin.spin_components(op)[1:])


def test_cpmg_kicks_all_along_y():
    segs = aht.toggling_frame(build_cycle("cpmg", 1.0), 0.02)
    kicks = [s for s in segs if s.kind == "kick"]
    assert len(kicks) == 4
    for k in kicks:
        assert np.allclose(k.area, 0.02 * math.pi / 2 * spin.SY)
    assert sum(s.duration for s in segs) == pytest.approx(2.0)


def test_delay_segments_carry_no_error():
    segs = aht.toggling_frame(build_cycle("xy4s", 1.0), 0.02)
    for s in segs:
        if s.kind == "delay":
            assert np.all(s.hamiltonian == 0)
        else:
            with pytest.raises(ValueError):
                s.hamiltonian


def test_finite_pulses_rejected():
    cycle = build_cycle("cpmg", 1.0, PulseSpec(t_p=1e-5))
    with pytest.raises(ValueError, match="delta"):
        aht.toggling_frame(cycle)


def test_uses_pulse_eps_by_default():
    cycle = build_cycle("cpmg", 1.0, PulseSpec(eps=0.01))
    assert np.allclose(aht.magnus_terms(cycle).terms[0], aht.magnus_terms(cycle, 0.01).terms[0])


def test_max_order_bounds():
    c = build_cycle("cpmg", 1.0)
    assert len(aht.magnus_terms(c, EPS, 0).terms) == 1
    with pytest.raises(ValueError):
        aht.magnus_terms(c, EPS, 3)


def test_eps_zero_gives_zero_terms():
    res = aht.magnus_terms(build_cycle("xy8s", 1.0), 0.0)
    assert all(np.all(t == 0) for t in res.terms)


def _random_kick_cycle(rng, n, scale):
    """Arbitrary delta-pulse train; each pulse has its own phase and error."""
    elements = []
    for _ in range(n):
        elements.append(Delay(float(rng.uniform(0.1, 1.0))))
        spec = PulseSpec(phase=float(rng.uniform(0, 2 * np.pi)), eps=float(scale * rng.normal()))
        elements.append(Pulse(spec))
    tau_c = math.fsum(e.duration for e in elements)
    return SequenceCycle(tuple(elements), 1.0, tau_c, "random", False)


def _exact_error_hamiltonian(cycle):
    """Effective Hamiltonian of the cycle in the frame of its ideal pulses."""
    u = cycle.propagator()
    return spin.effective_hamiltonian(spin.dagger(cycle.ideal_propagator()) @ u, cycle.tau_c)


def test_magnus_truncation_error_scales_as_fourth_order():
    # oracle: exact log of the cycle propagator; the error after three
    # orders must fall by 2^4 when every eps is halved
    rng = np.random.default_rng(3)
    base = _random_kick_cycle(rng, 7, 1.0)
    errs = []
    for lam in (0.02, 0.01, 0.005):
        elements = tuple(
            Pulse(PulseSpec(phase=e.spec.phase, eps=lam * e.spec.eps)) if isinstance(e, Pulse) else e
            for e in base.elements
        )
        cycle = SequenceCycle(elements, 1.0, base.tau_c, "random", False)
        exact = _exact_error_hamiltonian(cycle)
        errs.append(np.abs(aht.magnus_terms(cycle).total() - exact).max())
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(16, rel=0.1)


@pytest.mark.parametrize("order", [0, 1, 2])
def test_each_order_scales_with_its_power(order):
    rng = np.random.default_rng(4)
    cycle = _random_kick_cycle(rng, 5, 0.01)
    a = aht.magnus_terms(cycle).terms[order]
    half = SequenceCycle(
        tuple(Pulse(PulseSpec(phase=e.spec.phase, eps=e.spec.eps / 2)) if isinstance(e, Pulse) else e
              for e in cycle.elements),
        1.0, cycle.tau_c, "random", False,
    )
    b = aht.magnus_terms(half).terms[order]
    assert np.allclose(a, 2 ** (order + 1) * b, rtol=1e-9, atol=1e-18)


@pytest.mark.parametrize("name", CATALOG)
def test_magnus_agrees_with_eps_expansion(name):
    cycle = build_cycle(name, 1.0)
    magnus = aht.magnus_terms(cycle, EPS)
    expansion = aht.eps_expansion(cycle)
    for order in range(3):
        m = magnus.components(order) / EPS ** (order + 1)
        e = expansion.coefficients[order]
        assert np.allclose(m, e, rtol=1e-3, atol=1e-5 * max(1.0, np.abs(m).max()))


def test_cpmg_first_order_value():
    # exact: H = eps pi S_y / tau, all higher orders vanish
    for tau in (1e-4, 16e-3):
        res = aht.magnus_terms(build_cycle("cpmg", tau), 0.02)
        assert np.allclose(components(res.terms[0]), [0, 0.02 * math.pi / tau, 0], rtol=1e-12)
        assert np.abs(res.terms[1]).max() < 1e-8 * math.pi / tau
        assert np.abs(res.terms[2]).max() < 1e-8 * math.pi / tau


@pytest.mark.parametrize("name", ["xy4s", "xy4a"])
def test_xy4_second_order_value(name):
    # independently derived from the exact cycle propagator: pi^2/4 on S_z
    cycle = build_cycle(name, 1.0)
    res = aht.magnus_terms(cycle, EPS)
    assert np.abs(res.terms[0]).max() < 1e-15
    assert np.allclose(components(res.terms[1]) / EPS**2, [0, 0, math.pi**2 / 4], rtol=1e-9)
    exact = components(aht.cycle_effective_hamiltonian(cycle, EPS)) / EPS**2
    assert exact[2] == pytest.approx(math.pi**2 / 4, rel=1e-3)


@pytest.mark.parametrize("name", ["xy8s", "xy8a"])
def test_xy8_third_order_value(name):
    cycle = build_cycle(name, 1.0)
    res = aht.magnus_terms(cycle, EPS)
    assert np.abs(res.terms[0]).max() < 1e-15
    assert np.abs(res.terms[1]).max() < 1e-15
    assert np.allclose(components(res.terms[2]) / EPS**3, [math.pi**3 / 8, math.pi**3 / 8, 0], rtol=1e-9)


def test_kdd_vanishing_orders():
    res = aht.magnus_terms(build_cycle("kddx", 1.0), 0.01)
    for order in (0, 1):
        assert np.abs(res.terms[order]).max() < 1e-10 * 0.01 * math.pi
    res = aht.magnus_terms(build_cycle("kddxy", 1.0), 0.01)
    for order in (0, 1, 2):
        assert np.abs(res.terms[order]).max() < 1e-10 * 0.01 * math.pi


def test_kdd_x_leading_error_is_third_order():
    cycle = build_cycle("kddx", 1.0)
    small = np.linalg.norm(components(aht.cycle_effective_hamiltonian(cycle, 1e-3)))
    large = np.linalg.norm(components(aht.cycle_effective_hamiltonian(cycle, 2e-3)))
    assert large / small == pytest.approx(8, rel=0.01)


def test_eps_expansion_rejects_degenerate_samples():
    cycle = build_cycle("cpmg", 1.0)
    with pytest.raises(ValueError, match="distinct"):
        aht.eps_expansion(cycle, [0.001, 0.001, 0.001, 0.001])
    with pytest.raises(ValueError, match="ill-conditioned"):
        aht.eps_expansion(cycle, [0.001, 0.001 + 1e-13, 0.001 + 2e-13, 0.001 + 3e-13])


def test_verify_rows_and_format():
    rows = aht.verify_closed_forms()
    names = {r.sequence for r in rows}
    assert names == {"cpmg", "xy4s", "xy4a", "xy8s", "xy8a", "kddx"}
    cpmg = next(r for r in rows if r.sequence == "cpmg" and r.order == 0)
    assert cpmg.deviation < 1e-12
    assert all(r.expansion_deviation < 1e-3 for r in rows)
    text = aht.format_verification(rows)
    assert text.count("\n") == len(rows) + 1
