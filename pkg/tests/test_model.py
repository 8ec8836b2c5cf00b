import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from harqdelay.model import (
    PROTOCOLS,
    Protocol,
    ProtocolParams,
    RayleighFading,
    TransitionProbabilities,
    analyze,
    best_packet_size,
    db_to_linear,
    ir_cdfs,
    kappa,
    steady_state,
    transition_matrix,
    transition_probs,
)

# oracle values at gamma = 0 dB, n = 82, T = 100 us, B = 1 MHz (mpmath, 40 digits)
KAPPA_82 = 0.7654059925813097
P_T1_82 = 0.5348549528041930
P_CC_82 = (0.5348549528041930, 0.3343526040535232, 0.2380940067061391, 0.1835613992438785)
P_IR1_82 = 0.2844773195883366
PI0_T1_82 = 0.5066034149955146
PLOST_T1_82 = 0.0818359422233161


def params(proto="t1", **kw):
    kw.setdefault("n", 82)
    return ProtocolParams(protocol=proto, **kw)


def test_kappa_frozen():
    assert kappa(params()) == pytest.approx(KAPPA_82, rel=1e-14)


def test_t1_probability_frozen():
    p = transition_probs(params())
    assert np.allclose(p.p, P_T1_82, rtol=1e-14, atol=0)


def test_cc_probabilities_match_mpmath():
    p = transition_probs(params("cc"))
    assert p.p == pytest.approx(P_CC_82, rel=1e-13)


def test_ir_first_ratio_matches_quadrature():
    p = transition_probs(params("ir"))
    assert p[0] == pytest.approx(P_T1_82, rel=1e-14)
    assert p[1] == pytest.approx(P_IR1_82, rel=1e-7)


def test_ir_grid_converges():
    pr = params("ir", M=4)
    coarse, fine = ir_cdfs(pr, 512), ir_cdfs(pr, 8192)
    mid = ir_cdfs(pr, 2048)
    # second-order scheme: the error shrinks ~16x per 4x refinement
    assert np.abs(mid - fine).max() < np.abs(coarse - fine).max() / 8


def test_ir_resolution_validated():
    with pytest.raises(ValueError):
        ir_cdfs(params("ir"), 32)


def test_ir_deeper_attempts_match_mpmath():
    # F_3 via a 2-D integral over the first two fading draws
    pr = params("ir", M=3)
    g, k = pr.gamma, pr.kappa
    c = mpmath.log(1 + g * k)

    def inner(z1):
        r = c - mpmath.log(1 + g * z1)
        return mpmath.quad(lambda z2: mpmath.e ** (-z2) * (1 - mpmath.e ** (-(mpmath.e ** (r - mpmath.log(1 + g * z2)) - 1) / g)),
                           [0, (mpmath.e**r - 1) / g])

    F3 = float(mpmath.quad(lambda z1: mpmath.e ** (-z1) * inner(z1), [0, k]))
    assert ir_cdfs(pr)[2] == pytest.approx(F3, rel=1e-6)


def test_steady_state_frozen():
    _, ss = analyze(params(M=4))
    assert ss.pi0 == pytest.approx(PI0_T1_82, rel=1e-13)
    assert ss.p_lost == pytest.approx(PLOST_T1_82, rel=1e-13)
    assert ss.throughput == pytest.approx(PI0_T1_82 * (1 - PLOST_T1_82) * 82 / 1e-4, rel=1e-13)


@pytest.mark.parametrize("gamma_db, n", [(0.0, 82), (5.0, 155), (10.0, 252)])
def test_best_packet_size(gamma_db, n):
    assert best_packet_size(db_to_linear(gamma_db)) == n


def test_rayleigh_sampling_mean():
    rng = np.random.Generator(np.random.PCG64(1))
    z = RayleighFading(2.0).sample(rng, 200_000)
    assert z.mean() == pytest.approx(2.0, rel=0.01)
    assert RayleighFading(2.0).cdf(2.0) == pytest.approx(1 - math.exp(-1))


def test_protocol_parse():
    assert Protocol.parse("ir") is Protocol.IR
    assert Protocol.parse(Protocol.CC) is Protocol.CC
    with pytest.raises(ValueError):
        Protocol.parse("arq")


@pytest.mark.parametrize("bad", [dict(n=-1), dict(M=0), dict(M=2.5), dict(gamma=0), dict(T=0),
                                 dict(sigma_h_sq=-1)])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        params(**bad)


def test_transition_probabilities_validation():
    with pytest.raises(ValueError):
        TransitionProbabilities([0.5, 1.2])
    with pytest.raises(ValueError):
        TransitionProbabilities([])


def test_degenerate_ratio_convention():
    # gamma so large that every attempt decodes: 0/0 ratios become 0
    pr = params("cc", n=1, gamma=1e300, M=3)
    p = transition_probs(pr)
    assert p[0] == pytest.approx(0.0, abs=1e-300)
    assert p.degenerate
    assert steady_state(p).pi0 == pytest.approx(1.0)


def test_m1_chain():
    for proto in PROTOCOLS:
        p, ss = analyze(params(proto, M=1))
        assert ss.pi0 == 1.0
        assert ss.p_lost == pytest.approx(P_T1_82, rel=1e-14)


link = st.builds(
    lambda proto, n, M, g_db: params(proto, n=n, M=M, gamma=db_to_linear(g_db)),
    st.sampled_from(PROTOCOLS), st.integers(1, 400), st.integers(1, 10), st.floats(-5.0, 20.0),
)


@given(link)
def test_probabilities_are_probabilities(pr):
    p = transition_probs(pr, resolution=512)
    assert np.all((p.p >= 0) & (p.p <= 1))
    c = p.cumulative()
    assert np.all(np.diff(c) <= 1e-15)


@given(link)
def test_stationary_law_is_fixed_point(pr):
    p = transition_probs(pr, resolution=512)
    ss = steady_state(p)
    P = transition_matrix(p)
    assert np.allclose(P.sum(axis=0), 1.0)
    assert np.allclose(P @ ss.pi, ss.pi, atol=1e-14)
    assert ss.pi.sum() == pytest.approx(1.0)


@given(st.integers(1, 400), st.integers(1, 10), st.floats(-5.0, 20.0))
def test_combining_never_hurts(n, M, g_db):
    g = db_to_linear(g_db)
    c = {proto: transition_probs(params(proto, n=n, M=M, gamma=g)).cumulative() for proto in PROTOCOLS}
    tol = 1e-9
    assert np.all(c[Protocol.CC] <= c[Protocol.T1] + tol)
    assert np.all(c[Protocol.IR] <= c[Protocol.CC] + tol)


@given(st.integers(1, 300), st.floats(-5.0, 15.0))
def test_loss_falls_with_deadline(n, g_db):
    for proto in PROTOCOLS:
        losses = [analyze(params(proto, n=n, M=M, gamma=db_to_linear(g_db)), 512)[1].p_lost
                  for M in range(1, 7)]
        assert np.all(np.diff(losses) <= 1e-15)


def test_kappa_edge_values():
    assert kappa(params(n=0)) == 0.0
    assert kappa(params(n=100)) == pytest.approx(1.0, rel=1e-15)


@pytest.mark.parametrize("proto", PROTOCOLS)
def test_zero_threshold_never_fails(proto):
    p = transition_probs(params(proto, n=0, M=3))
    assert np.all(p.p == 0.0)


@pytest.mark.parametrize("proto", ["t1", "cc"])
def test_huge_threshold_always_fails(proto):
    p = transition_probs(params(proto, n=3000, M=3, gamma=1e-3))
    assert np.allclose(p.p, 1.0)


def test_ir_second_attempt_below_cc():
    assert 0 < transition_probs(params("ir"))[1] < transition_probs(params("cc"))[1]


def test_steady_state_examples():
    ss = steady_state(TransitionProbabilities([0.5, 0.5]))
    assert ss.pi == pytest.approx([2 / 3, 1 / 3]) and ss.p_lost == 0.25
    ss = steady_state(TransitionProbabilities([0.0, 0.0, 0.0]), n=82, T=1e-4)
    assert list(ss.pi) == [1.0, 0.0, 0.0] and ss.p_lost == 0.0
    assert ss.throughput == pytest.approx(82 / 1e-4)
