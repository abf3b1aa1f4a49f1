# Module implementing the expectation propagation (EPA) SCMA detector.
#
# Every message on a (user, resource, antenna) edge is a scalar complex Gaussian.  One inner
# iteration runs four dependent steps over all edges:
#   1. beliefs q(x_k) over the user's M codewords from the prior and the resource -> user messages
#   2. moment matching of q onto one Gaussian per active resource
#   3. cavity division giving the user -> resource messages
#   4. per-resource interference cancellation giving new resource -> user messages
# The work per step is linear in M and in the number of colliding users.

import logging
from dataclasses import dataclass

import numpy as np

from modules.channel import ChannelRealization, ReceivedBlock
from modules.codebook import Codebook, FactorGraph
from modules.reference import DiscreteBelief, PriorSet, log_prior, posterior_llr
from modules.util import tally

# Initialization variance of every resource -> user message, and the uninformative variance
MAX = 1000.0

# Floor of posterior variances; message variances stay strictly above it
EPS_VAR = 1e-12

# Channel gains with magnitude at or below this erase the observation for that user
EPS_H = 1e-8


@dataclass(frozen=True)
class GaussianMessage:
    """Scalar complex Gaussian N_C(mean, var)"""
    mean: complex
    var: float

    # Natural parameters (precision, precision-weighted mean)
    def natural(self) -> tuple:
        precision = 1.0 / self.var
        return precision, precision * self.mean

    @staticmethod
    def from_natural(precision: float, shifted: complex):
        return GaussianMessage(shifted / precision, 1.0 / precision)


@dataclass
class PosteriorMoments:
    """Projected posterior mean/variance per (user, resource); zero off the user's support"""
    mean: np.ndarray
    var: np.ndarray

    @staticmethod
    def empty(K: int, N: int):
        return PosteriorMoments(np.zeros((K, N), dtype=complex), np.zeros((K, N)))


@dataclass
class EpaOptions:
    """Options of the EPA detector"""
    n_in: int = 3
    damping: float = 1.0     # weight of the new user -> resource message; 1 disables damping
    max_var: float = MAX
    eps_var: float = EPS_VAR
    eps_h: float = EPS_H
    tol: float = 0.0         # stop once posterior means move less than tol (0 = never)

    def validate(self):
        if self.n_in < 1:
            raise ValueError(f"n_in must be >= 1, got {self.n_in}")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError(f"damping must lie in (0, 1], got {self.damping}")
        if not 0.0 < self.eps_var < self.max_var:
            raise ValueError(f"need 0 < eps_var < max_var, got {self.eps_var}, {self.max_var}")
        if self.eps_h < 0 or self.tol < 0:
            raise ValueError("eps_h and tol must be non-negative")
        return self


# Posterior belief of one user over its M codewords:
#   log q(a) = log P(a) - sum_r sum_{n in V(k)} |a_n - mu_{n,r->k}|^2 / xi_{n,r->k}
#   log_prior_k is the user's log prior (reference.log_prior)
#   mean, var are the N_r x N resource -> user messages addressed to this user
def compute_belief(log_prior_k, mean, var, cb: Codebook, user: int, fg: FactorGraph, counter=None) -> DiscreteBelief:
    acc = np.array(log_prior_k, dtype=float)
    n_rx = mean.shape[0]
    for n in fg.V[user]:
        column = cb.column(user, n)
        for r in range(n_rx):
            acc = acc - np.abs(column - mean[r, n]) ** 2 * (1.0 / var[r, n])
    tally(counter, multiplies=n_rx * len(fg.V[user]) * cb.M, adds=2 * n_rx * len(fg.V[user]) * cb.M,
          divisions=n_rx * len(fg.V[user]))
    return DiscreteBelief.from_log(acc)


# Project a discrete belief on the user's values at one resource onto a complex Gaussian
#   mu = sum_m p[m] a_n^(m),  xi = sum_m p[m] |a_n^(m) - mu|^2
def moment_match(belief: DiscreteBelief, cb: Codebook, user: int, resource: int, counter=None) -> tuple:
    column = cb.column(user, resource)
    mu = complex(np.dot(belief.p, column))
    xi = float(np.dot(belief.p, np.abs(column - mu) ** 2))
    tally(counter, multiplies=3 * cb.M, adds=3 * cb.M)
    return mu, xi


# Cavity division of the projected posterior by the resource -> user message that formed it.
#   Returns (message, fell_back).  previous is the user -> resource message of the last
#   iteration and is only used for damping (None on the first iteration).
def vn_to_fn(post_mean: complex, post_var: float, incoming: GaussianMessage, opts: EpaOptions,
             previous: GaussianMessage = None, counter=None) -> tuple:
    tally(counter, multiplies=1, adds=2, divisions=3)
    post_var = max(post_var, opts.eps_var)
    precision = 1.0 / post_var - 1.0 / incoming.var
    fell_back = True
    out = GaussianMessage(post_mean, opts.max_var)
    if precision > 0 and np.isfinite(precision):
        var = 1.0 / precision
        mean = var * (post_mean / post_var - incoming.mean / incoming.var)
        if var <= opts.max_var and np.isfinite(mean):
            out = GaussianMessage(complex(mean), float(var))
            fell_back = False

    if previous is not None and opts.damping < 1.0:
        tally(counter, multiplies=4, adds=2, divisions=2)
        new_precision, new_shifted = out.natural()
        old_precision, old_shifted = previous.natural()
        beta = opts.damping
        out = GaussianMessage.from_natural(beta * new_precision + (1 - beta) * old_precision,
                                           beta * new_shifted + (1 - beta) * old_shifted)
    return out, fell_back


# Products h_l mu_l and |h_l|^2 xi_l of every user colliding on one resource/antenna
def _fn_products(gains, means, variances, counter=None) -> tuple:
    gains = np.asarray(gains, dtype=complex)
    tally(counter, multiplies=3 * gains.size)
    return gains * np.asarray(means, dtype=complex), np.abs(gains) ** 2 * np.asarray(variances, dtype=float)


# Resource -> user message for position target of the colliding users from precomputed products
def _fn_message(y: complex, gains, weighted_means, weighted_vars, noise_var: float, target: int,
                opts: EpaOptions, counter=None) -> GaussianMessage:
    others = [s for s in range(len(gains)) if s != target]
    tally(counter, adds=2 * len(others) + 1, divisions=2)
    gain = gains[target]
    if abs(gain) <= opts.eps_h:
        return GaussianMessage(0j, opts.max_var)

    interference = 0j
    spread = noise_var
    for s in others:
        interference += weighted_means[s]
        spread += weighted_vars[s]
    power = abs(gain) ** 2
    var = spread / power
    if not np.isfinite(var) or var >= opts.max_var:
        return GaussianMessage(0j, opts.max_var)
    mean = (y - interference) / gain
    if not np.isfinite(mean):
        return GaussianMessage(0j, opts.max_var)
    # Variances stay strictly above eps_var
    floor = float(np.nextafter(opts.eps_var, np.inf))
    return GaussianMessage(complex(mean), max(float(var), floor))


# Resource -> user message by soft interference cancellation on one observation
#   mu_out = (y - sum_{l != k} h_l mu_l) / h_k
#   xi_out = (noise_var + sum_{l != k} |h_l|^2 xi_l) / |h_k|^2
#   gains, messages: the colliding users' gains and user -> resource messages (same order)
#   target: position of the receiving user in that order
def fn_to_vn(y: complex, gains, messages: list, noise_var: float, target: int, opts: EpaOptions = None,
             counter=None) -> GaussianMessage:
    opts = opts or EpaOptions()
    weighted_means, weighted_vars = _fn_products(gains, [m.mean for m in messages], [m.var for m in messages],
                                                 counter)
    return _fn_message(complex(y), np.asarray(gains, dtype=complex), weighted_means, weighted_vars, noise_var,
                       target, opts, counter)


# EPA decoding of one block.
#   Returns (beliefs, llrs, trace): per-user DiscreteBelief, K x J posterior LLRs and the
#   per-iteration largest change of the projected posterior means.
#
#   hook(stage, iteration, payload) is called with stage 'belief' (list of beliefs), 'moments'
#   (PosteriorMoments), 'vn' and 'fn' ((means, variances) arrays shaped N_r x K x N).
#   The returned beliefs are recomputed from the last resource -> user messages.
def epa_decode(y: ReceivedBlock, chan: ChannelRealization, priors: PriorSet, cb: Codebook, fg: FactorGraph,
               opts: EpaOptions = None, hook=None, counter=None):
    opts = (opts or EpaOptions()).validate()
    n_rx, K, N = chan.n_rx, cb.K, cb.N
    edges = fg.edges()

    priors_log = [log_prior(priors, k, cb, counter) for k in range(K)]
    fn_mean = np.zeros((n_rx, K, N), dtype=complex)
    fn_var = np.full((n_rx, K, N), opts.max_var)
    vn_mean = np.zeros((n_rx, K, N), dtype=complex)
    vn_var = np.full((n_rx, K, N), opts.max_var)

    moments = PosteriorMoments.empty(K, N)
    trace = []
    fallbacks = 0
    for t in range(1, opts.n_in + 1):
        # 1. beliefs
        beliefs = [compute_belief(priors_log[k], fn_mean[:, k, :], fn_var[:, k, :], cb, k, fg, counter)
                   for k in range(K)]
        if hook:
            hook('belief', t, beliefs)

        # 2. moment matching
        previous_means = moments.mean.copy()
        moments = PosteriorMoments.empty(K, N)
        for k, n in edges:
            moments.mean[k, n], moments.var[k, n] = moment_match(beliefs[k], cb, k, n, counter)
        if hook:
            hook('moments', t, moments)

        # 3. user -> resource
        for k, n in edges:
            for r in range(n_rx):
                previous = GaussianMessage(vn_mean[r, k, n], vn_var[r, k, n]) if t > 1 else None
                message, fell_back = vn_to_fn(moments.mean[k, n], moments.var[k, n],
                                              GaussianMessage(fn_mean[r, k, n], fn_var[r, k, n]),
                                              opts, previous, counter)
                vn_mean[r, k, n], vn_var[r, k, n] = message.mean, message.var
                fallbacks += fell_back
        if hook:
            hook('vn', t, (vn_mean.copy(), vn_var.copy()))

        # 4. resource -> user
        for n in range(N):
            users = list(fg.F[n])
            for r in range(n_rx):
                gains = chan.H[r, users, n]
                weighted_means, weighted_vars = _fn_products(gains, vn_mean[r, users, n], vn_var[r, users, n],
                                                             counter)
                for t_pos, k in enumerate(users):
                    message = _fn_message(y.y[r, n], gains, weighted_means, weighted_vars, chan.noise_var,
                                          t_pos, opts, counter)
                    fn_mean[r, k, n], fn_var[r, k, n] = message.mean, message.var
        if hook:
            hook('fn', t, (fn_mean.copy(), fn_var.copy()))

        trace.append(float(np.max(np.abs(moments.mean - previous_means))) if edges else 0.0)
        if opts.tol > 0 and t > 1 and trace[-1] < opts.tol:
            break

    beliefs = [compute_belief(priors_log[k], fn_mean[:, k, :], fn_var[:, k, :], cb, k, fg, counter)
               for k in range(K)]
    llrs = np.array([posterior_llr(b, cb, k) for k, b in enumerate(beliefs)])
    if fallbacks:
        logging.debug(f"EPA cavity fallback on {fallbacks} of {len(trace) * len(edges) * n_rx} messages")
    return beliefs, llrs, trace
