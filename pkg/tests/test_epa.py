# File containing tests of the EPA detector.
import math

import numpy as np
import pytest

from modules.channel import AWGN_UNIT, RAYLEIGH_IID_BLOCK, ChannelRealization, ReceivedBlock, sample_channel, \
    transmit
from modules.codebook import build_factor_graph, default_codebook
from modules.epa import EPS_VAR, MAX, EpaOptions, GaussianMessage, compute_belief, epa_decode, fn_to_vn, \
    moment_match, vn_to_fn
from modules.reference import DiscreteBelief, PriorSet, brute_force_posterior, log_prior


def random_instance(cb, n_rx, noise_var, rng, model=RAYLEIGH_IID_BLOCK):
    indexes = rng.integers(0, cb.M, size=cb.K)
    x = cb.codewords[np.arange(cb.K), indexes]
    chan = sample_channel(model, (n_rx, cb.K, cb.N), noise_var, rng)
    return indexes, transmit(x, chan, rng), chan


# Cross entropy of a discrete belief against N_C(mean, var) over the column values
def cross_entropy(p, column, mean, var):
    return float(np.sum(p * (np.log(np.pi * var) + np.abs(column - mean) ** 2 / var)))


def test_uninformative_messages_give_uniform_beliefs():
    cb = default_codebook(6, 4, 4, 2)
    fg = build_factor_graph(cb)
    mean = np.zeros((2, cb.N), dtype=complex)
    var = np.full((2, cb.N), MAX)
    prior = log_prior(PriorSet.zeros(cb.K, cb.J), 3, cb)
    belief = compute_belief(prior, mean, var, cb, 3, fg)
    assert np.allclose(belief.p, 0.25, rtol=0, atol=1e-9)


def test_delta_message_selects_the_matching_codeword():
    cb = default_codebook(6, 4, 4, 2)
    fg = build_factor_graph(cb)
    n = fg.V[0][0]
    mean = np.zeros((1, cb.N), dtype=complex)
    var = np.full((1, cb.N), MAX)
    mean[0, n] = cb.column(0, n)[2]
    var[0, n] = EPS_VAR
    belief = compute_belief(log_prior(PriorSet.zeros(cb.K, cb.J), 0, cb), mean, var, cb, 0, fg)
    assert belief.map_index() == 2
    assert belief.p[2] > 1 - 1e-9


# Straight-line evaluation of the belief for one J=2 instance
def test_compute_belief_matches_direct_evaluation():
    cb = default_codebook(6, 4, 4, 2)
    fg = build_factor_graph(cb)
    rng = np.random.default_rng(10)
    llrs = np.zeros((cb.K, cb.J))
    llrs[4] = (0.3, -0.7)
    mean = rng.standard_normal((2, cb.N)) + 1j * rng.standard_normal((2, cb.N))
    var = rng.uniform(0.2, 2.0, size=(2, cb.N))

    weights = []
    for m, bits in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
        w = 1.0
        for bit, l in zip(bits, llrs[4]):
            w *= math.exp(bit * l) / (1 + math.exp(l))
        for n in fg.V[4]:
            for r in range(2):
                w *= math.exp(-abs(cb.codewords[4, m, n] - mean[r, n]) ** 2 / var[r, n])
        weights.append(w)
    expected = np.array(weights) / sum(weights)

    belief = compute_belief(log_prior(PriorSet(llrs), 4, cb), mean, var, cb, 4, fg)
    assert np.allclose(belief.p, expected, rtol=0, atol=1e-12)


def test_moment_match_of_degenerate_and_uniform_beliefs():
    cb = default_codebook(6, 4, 4, 2)
    mu, xi = moment_match(DiscreteBelief([0, 0, 1, 0]), cb, 1, 0)
    assert mu == cb.column(1, 0)[2]
    assert xi == 0.0
    mu, xi = moment_match(DiscreteBelief.uniform(4), cb, 1, 0)
    assert abs(mu) < 1e-12
    assert abs(xi - np.mean(np.abs(cb.column(1, 0)) ** 2)) < 1e-12


def test_moment_match_matches_weighted_sums():
    cb = default_codebook(4, 2, 8, 1)
    rng = np.random.default_rng(3)
    for _ in range(1000):
        p = rng.dirichlet(np.ones(cb.M))
        column = cb.column(1, 1)
        mean = sum(p[m] * column[m] for m in range(cb.M))
        var = sum(p[m] * abs(column[m] - mean) ** 2 for m in range(cb.M))
        mu, xi = moment_match(DiscreteBelief(p / p.sum()), cb, 1, 1)
        assert abs(mu - mean) < 1e-12
        assert abs(xi - var) < 1e-12


# No perturbed Gaussian is closer in KL to the belief than the matched one
def test_moment_match_minimizes_kl():
    cb = default_codebook(6, 4, 4, 2)
    column = cb.column(2, 0)
    rng = np.random.default_rng(4)
    for _ in range(200):
        p = rng.dirichlet(np.ones(cb.M))
        belief = DiscreteBelief(p / p.sum())
        mu, xi = moment_match(belief, cb, 2, 0)
        best = cross_entropy(belief.p, column, mu, xi)
        for _ in range(10):
            m = mu + 0.3 * (rng.standard_normal() + 1j * rng.standard_normal())
            v = xi * math.exp(rng.uniform(-1, 1))
            assert cross_entropy(belief.p, column, m, v) >= best - 1e-12


def test_cavity_division_examples():
    opts = EpaOptions()
    post_mean = 0.3 + 0.2j
    message, fell_back = vn_to_fn(post_mean, 0.5, GaussianMessage(0j, MAX), opts)
    expected_var = 1 / (2 - 1 / 1000)
    assert not fell_back
    assert abs(message.var - expected_var) < 1e-12
    assert abs(message.var - 0.50025) < 1e-6
    assert abs(message.mean - expected_var * post_mean / 0.5) < 1e-12

    # Equal posterior and incoming variance cancels
    message, fell_back = vn_to_fn(post_mean, 0.5, GaussianMessage(post_mean, 0.5), opts)
    assert fell_back
    assert message == GaussianMessage(post_mean, MAX)

    # Posterior broader than the incoming message
    message, fell_back = vn_to_fn(post_mean, 0.8, GaussianMessage(0.1j, 0.4), opts)
    assert fell_back
    assert message == GaussianMessage(post_mean, MAX)

    # Zero posterior variance is floored before dividing
    message, fell_back = vn_to_fn(post_mean, 0.0, GaussianMessage(0j, MAX), opts)
    assert not fell_back
    assert EPS_VAR < message.var <= MAX
    assert np.isfinite(message.mean)


def test_cavity_damping_mixes_natural_parameters():
    opts = EpaOptions(damping=0.5)
    previous = GaussianMessage(0.1 + 0j, 2.0)
    undamped, _ = vn_to_fn(0.3 + 0.2j, 0.5, GaussianMessage(0j, MAX), EpaOptions())
    damped, _ = vn_to_fn(0.3 + 0.2j, 0.5, GaussianMessage(0j, MAX), opts, previous)
    precision = 0.5 / undamped.var + 0.5 / previous.var
    shifted = 0.5 * undamped.mean / undamped.var + 0.5 * previous.mean / previous.var
    assert abs(damped.var - 1 / precision) < 1e-12
    assert abs(damped.mean - shifted / precision) < 1e-12


# A damped fallback keeps most of the previous precision instead of erasing the interferer
def test_damped_fallback_does_not_erase_the_interferer():
    previous = GaussianMessage(0.1 + 0j, 0.3)
    erased, fell_back = vn_to_fn(0.3 + 0.2j, 0.8, GaussianMessage(0.1j, 0.4), EpaOptions())
    assert fell_back and erased.var == MAX
    damped, fell_back = vn_to_fn(0.3 + 0.2j, 0.8, GaussianMessage(0.1j, 0.4), EpaOptions(damping=0.6), previous)
    assert fell_back
    precision = 0.6 / MAX + 0.4 / 0.3
    assert abs(damped.var - 1 / precision) < 1e-12
    assert damped.var < 2.5 * previous.var

    # The resource -> user message seen by a co-channel user stays informative only with damping
    gains = [1.0 + 0j, 1.5 + 0j]
    assert fn_to_vn(0.5, gains, [GaussianMessage(0j, 0.5), erased], 0.1, 0).var == MAX
    assert fn_to_vn(0.5, gains, [GaussianMessage(0j, 0.5), damped], 0.1, 0).var < 2.0


def test_fn_to_vn_single_user_is_a_soft_demap():
    message = fn_to_vn(0.4 - 0.1j, [1.0], [GaussianMessage(0j, MAX)], 0.3, 0)
    assert abs(message.mean - (0.4 - 0.1j)) < 1e-15
    assert abs(message.var - 0.3) < 1e-15


def test_fn_to_vn_cancels_known_interference():
    x0, x1 = 0.5 + 0.5j, -0.7 + 0.1j
    gains = [1.0 + 0j, 0.8 - 0.3j]
    y = gains[0] * x0 + gains[1] * x1
    message = fn_to_vn(y, gains, [GaussianMessage(0j, MAX), GaussianMessage(x1, EPS_VAR)], 1e-30, 0)
    assert abs(message.mean - x0) < 1e-6


def test_fn_to_vn_matches_hand_evaluation():
    gains = [0.9 + 0.2j, -0.4 + 1.1j, 0.3 - 0.6j]
    messages = [GaussianMessage(0.1 + 0.2j, 0.5), GaussianMessage(-0.3 + 0.4j, 0.2), GaussianMessage(0.6j, 0.9)]
    y, noise_var = 0.25 - 0.75j, 0.1
    message = fn_to_vn(y, gains, messages, noise_var, 1)
    mean = (y - gains[0] * messages[0].mean - gains[2] * messages[2].mean) / gains[1]
    var = (noise_var + abs(gains[0]) ** 2 * 0.5 + abs(gains[2]) ** 2 * 0.9) / abs(gains[1]) ** 2
    assert abs(message.mean - mean) < 1e-12
    assert abs(message.var - var) < 1e-12


def test_fn_to_vn_erases_tiny_gains_and_saturated_variances():
    messages = [GaussianMessage(0.1j, 0.5), GaussianMessage(0.2, 0.5)]
    assert fn_to_vn(1.0, [1e-9, 1.0], messages, 0.1, 0) == GaussianMessage(0j, MAX)
    assert fn_to_vn(1.0, [1.0, 1.0], messages, 1e12, 0) == GaussianMessage(0j, MAX)
    floored = fn_to_vn(1.0, [1.0], [GaussianMessage(0j, MAX)], 1e-30, 0).var
    assert EPS_VAR < floored < 1.000001 * EPS_VAR


def test_first_beliefs_equal_the_prior():
    cb = default_codebook(6, 4, 4, 2)
    fg = build_factor_graph(cb)
    _, y, chan = random_instance(cb, 2, 0.1, np.random.default_rng(1))
    first = []

    def hook(stage, t, payload):
        if stage == 'belief' and t == 1:
            first.extend(payload)

    epa_decode(y, chan, PriorSet.zeros(cb.K, cb.J), cb, fg, hook=hook)
    assert len(first) == cb.K
    for belief in first:
        assert np.allclose(belief.p, 0.25, rtol=0, atol=1e-9)


def test_single_user_noiseless_decodes_in_one_iteration():
    cb = default_codebook(1, 2, 4, 2)
    fg = build_factor_graph(cb)
    rng = np.random.default_rng(2)
    for m in range(cb.M):
        chan = sample_channel(AWGN_UNIT, (1, 1, 2), 1e-30, rng)
        y = transmit(cb.codewords[0, m][None, :], chan, rng)
        beliefs, llrs, trace = epa_decode(y, chan, PriorSet.zeros(1, cb.J), cb, fg, EpaOptions(n_in=1))
        assert beliefs[0].map_index() == m
        assert len(trace) == 1


# Agreement rate with the exact MAP decision on star graphs, frozen as a regression bound
def test_epa_agrees_with_the_oracle_on_star_graphs():
    cb = default_codebook(3, 1, 4, 1)
    fg = build_factor_graph(cb)
    rng = np.random.default_rng(77)
    agree = 0
    trials = 1000
    for _ in range(trials):
        _, y, chan = random_instance(cb, 1, 0.25, rng)
        priors = PriorSet.zeros(cb.K, cb.J)
        beliefs, _, _ = epa_decode(y, chan, priors, cb, fg, EpaOptions(n_in=5))
        oracle = brute_force_posterior(y, chan, priors, cb)
        agree += sum(b.map_index() == o.map_index() for b, o in zip(beliefs, oracle))
    assert agree / (trials * cb.K) >= 0.7


def test_message_variances_stay_in_range():
    rng = np.random.default_rng(5)
    for cb, n_rx, noise_var in ((default_codebook(6, 4, 4, 2), 2, 0.05), (default_codebook(6, 4, 4, 2), 1, 1.0),
                                (default_codebook(3, 1, 4, 1), 1, 1e-4), (default_codebook(4, 2, 8, 1), 3, 0.3)):
        fg = build_factor_graph(cb)
        _, y, chan = random_instance(cb, n_rx, noise_var, rng)
        checked = []

        def hook(stage, t, payload):
            if stage in ('vn', 'fn'):
                means, variances = payload
                assert np.all(variances > EPS_VAR)
                assert np.all(variances <= MAX)
                assert np.all(np.isfinite(means))
                checked.append(stage)

        epa_decode(y, chan, PriorSet(rng.uniform(-4, 4, size=(cb.K, cb.J))), cb, fg, EpaOptions(n_in=6), hook=hook)
        assert len(checked) == 12


def test_uninformative_likelihood_keeps_beliefs_uniform():
    cb = default_codebook(6, 4, 4, 2)
    fg = build_factor_graph(cb)
    _, y, chan = random_instance(cb, 2, 0.1, np.random.default_rng(6))
    chan = ChannelRealization(chan.H, 1e12)
    seen = []

    def hook(stage, t, payload):
        if stage == 'belief':
            seen.append(t)
            for belief in payload:
                assert np.allclose(belief.p, 0.25, rtol=0, atol=1e-6)

    beliefs, _, _ = epa_decode(y, chan, PriorSet.zeros(cb.K, cb.J), cb, fg, EpaOptions(n_in=5), hook=hook)
    assert seen == [1, 2, 3, 4, 5]
    for belief in beliefs:
        assert np.allclose(belief.p, 0.25, rtol=0, atol=1e-6)


# Duplicating the only antenna sharpens single-user beliefs
def test_duplicated_antenna_sharpens_beliefs():
    rng = np.random.default_rng(9)
    for cb in (default_codebook(1, 2, 4, 2), default_codebook(1, 2, 8, 2)):
        fg = build_factor_graph(cb)
        for _ in range(20):
            x = cb.codewords[0, rng.integers(cb.M)]
            H = sample_channel(RAYLEIGH_IID_BLOCK, (1, 1, cb.N), 0.5, rng).H
            y = ReceivedBlock(H[:, 0, :] * x)
            one, _, _ = epa_decode(y, ChannelRealization(H, 0.5), PriorSet.zeros(1, cb.J), cb, fg,
                                   EpaOptions(n_in=2))
            two, _, _ = epa_decode(ReceivedBlock(np.vstack([y.y, y.y])),
                                   ChannelRealization(np.concatenate([H, H]), 0.5),
                                   PriorSet.zeros(1, cb.J), cb, fg, EpaOptions(n_in=2))
            assert two[0].p.max() >= one[0].p.max() - 1e-12


# Gains on resources a user does not occupy never enter any message
def test_inactive_resources_do_not_matter():
    cb = default_codebook(6, 4, 4, 2)
    fg = build_factor_graph(cb)
    rng = np.random.default_rng(13)
    _, y, chan = random_instance(cb, 2, 0.2, rng)
    H = chan.H.copy()
    for k in range(cb.K):
        for n in range(cb.N):
            if n not in fg.V[k]:
                H[:, k, n] = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    priors = PriorSet.zeros(cb.K, cb.J)
    _, llrs_a, trace_a = epa_decode(y, chan, priors, cb, fg)
    _, llrs_b, trace_b = epa_decode(y, ChannelRealization(H, chan.noise_var), priors, cb, fg)
    assert np.array_equal(llrs_a, llrs_b)
    assert trace_a == trace_b


def test_epa_is_deterministic():
    cb = default_codebook(6, 4, 4, 2)
    fg = build_factor_graph(cb)
    _, y, chan = random_instance(cb, 2, 0.3, np.random.default_rng(14))
    priors = PriorSet(np.random.default_rng(15).uniform(-2, 2, size=(cb.K, cb.J)))
    a = epa_decode(y, chan, priors, cb, fg, EpaOptions(n_in=4, damping=0.7))
    b = epa_decode(y, chan, priors, cb, fg, EpaOptions(n_in=4, damping=0.7))
    assert np.array_equal(a[1], b[1])
    assert a[2] == b[2]
    assert all(np.array_equal(p.p, q.p) for p, q in zip(a[0], b[0]))


# The per-resource update inside the decoder equals the standalone fn_to_vn bit for bit
def test_decoder_resource_update_matches_fn_to_vn():
    cb = default_codebook(6, 4, 4, 2)
    fg = build_factor_graph(cb)
    _, y, chan = random_instance(cb, 2, 0.2, np.random.default_rng(16))
    stages = {}

    def hook(stage, t, payload):
        if stage in ('vn', 'fn'):
            stages[(stage, t)] = payload

    epa_decode(y, chan, PriorSet.zeros(cb.K, cb.J), cb, fg, EpaOptions(n_in=3), hook=hook)
    for t in (1, 2, 3):
        vn_mean, vn_var = stages[('vn', t)]
        fn_mean, fn_var = stages[('fn', t)]
        for n in range(cb.N):
            users = list(fg.F[n])
            for r in range(chan.n_rx):
                messages = [GaussianMessage(vn_mean[r, l, n], vn_var[r, l, n]) for l in users]
                for position, k in enumerate(users):
                    message = fn_to_vn(y.y[r, n], chan.H[r, users, n], messages, chan.noise_var, position)
                    assert message.mean == fn_mean[r, k, n]
                    assert message.var == fn_var[r, k, n]


def test_tiny_gain_erases_the_observation():
    cb = default_codebook(6, 4, 4, 2)
    fg = build_factor_graph(cb)
    _, y, chan = random_instance(cb, 1, 0.1, np.random.default_rng(18))
    H = chan.H.copy()
    k, n = 2, fg.V[2][0]
    H[0, k, n] = 1e-10
    erased = []

    def hook(stage, t, payload):
        if stage == 'fn':
            means, variances = payload
            erased.append((means[0, k, n], variances[0, k, n]))

    beliefs, llrs, trace = epa_decode(y, ChannelRealization(H, chan.noise_var), PriorSet.zeros(cb.K, cb.J), cb, fg,
                                      hook=hook)
    assert erased == [(0j, MAX)] * 3
    assert np.all(np.isfinite(llrs))
    assert all(np.all(np.isfinite(b.p)) for b in beliefs)
    assert all(np.isfinite(trace))


def test_options_are_validated():
    with pytest.raises(ValueError):
        EpaOptions(damping=0.0).validate()
    with pytest.raises(ValueError):
        EpaOptions(n_in=0).validate()
    with pytest.raises(ValueError):
        EpaOptions(eps_var=2000.0).validate()


def test_epa_stops_early_once_means_settle():
    cb = default_codebook(1, 2, 4, 2)
    fg = build_factor_graph(cb)
    _, y, chan = random_instance(cb, 1, 0.01, np.random.default_rng(19))
    _, _, trace = epa_decode(y, chan, PriorSet.zeros(1, cb.J), cb, fg, EpaOptions(n_in=20, tol=1e-9))
    assert len(trace) < 20
    assert trace[-1] < 1e-9
