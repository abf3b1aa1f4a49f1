# Module of reference SCMA detectors: the exact MAP oracle and the sum-product MPA detector.
#
# Both work on discrete beliefs over a user's M codeword indices and accumulate every product
# of probabilities in the log domain, subtracting the maximum before exponentiating.  The
# belief/LLR conversions defined here are shared with the EPA detector.

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from modules.channel import ChannelRealization, ReceivedBlock
from modules.codebook import Codebook, FactorGraph, bit_table
from modules.util import tally

# Magnitude limit applied to every LLR leaving a detector or entering as a prior
L_CLIP = 30.0

# Largest joint enumeration brute_force_posterior will attempt (M^K)
MAX_ENUMERATION = 2 ** 24

# Joint hypotheses evaluated per chunk by the oracle
ENUMERATION_CHUNK = 2 ** 16


# Custom exception class for an oracle request that is too large to enumerate
class EnumerationException(RuntimeError): pass


def clip_llr(llr):
    return np.clip(llr, -L_CLIP, L_CLIP)


class DiscreteBelief:
    """Probability mass over the M codeword indices of one user"""

    def __init__(self, p):
        self.p = np.array(p, dtype=float)
        if self.p.ndim != 1 or np.any(self.p < 0) or abs(self.p.sum() - 1.0) > 1e-12:
            raise ValueError(f"not a normalized probability vector: {self.p}")

    # Normalize log-domain weights into a belief (max-subtraction before exponentiating)
    @staticmethod
    def from_log(log_weights):
        w = np.asarray(log_weights, dtype=float)
        p = np.exp(w - np.max(w))
        return DiscreteBelief(p / p.sum())

    @staticmethod
    def uniform(M: int):
        return DiscreteBelief(np.full(M, 1.0 / M))

    @property
    def M(self) -> int:
        return self.p.size

    def log(self) -> np.ndarray:
        with np.errstate(divide='ignore'):
            return np.log(self.p)

    # Most probable codeword index (lowest index on ties)
    def map_index(self) -> int:
        return int(np.argmax(self.p))

    def total_variation(self, other) -> float:
        return 0.5 * float(np.sum(np.abs(self.p - other.p)))

    def __repr__(self):
        return f'DiscreteBelief({np.array2string(self.p, precision=4)})'


class PriorSet:
    """Prior LLRs lambda2 per user (rows) and coded bit (columns), clipped to +-L_CLIP"""

    def __init__(self, llrs):
        self.llrs = clip_llr(np.array(llrs, dtype=float))
        if self.llrs.ndim != 2:
            raise ValueError(f"prior LLRs must be a K x J array, got shape {self.llrs.shape}")
        if not np.all(np.isfinite(self.llrs)):
            raise ValueError("prior LLRs must not be NaN")

    @staticmethod
    def zeros(K: int, J: int):
        return PriorSet(np.zeros((K, J)))

    def __getitem__(self, user):
        return self.llrs[user]


# Log prior over codeword indices of one user from its bit LLRs:
#   log P(m) = sum_j c_j(m) lambda_j - log(1 + exp(lambda_j))
def log_prior(priors: PriorSet, user: int, cb: Codebook, counter=None) -> np.ndarray:
    llrs = priors[user]
    tally(counter, multiplies=cb.M * cb.J, adds=cb.M * cb.J, exponentials=cb.J)
    return bit_table(cb.J) @ llrs - np.sum(np.logaddexp(0.0, llrs))


def prior_to_belief(priors: PriorSet, user: int, cb: Codebook) -> DiscreteBelief:
    return DiscreteBelief.from_log(log_prior(priors, user, cb))


# Posterior LLRs of the user's J coded bits from a belief over codeword indices
#   Lambda_j = log( sum_{m: bit j = 1} p[m] / sum_{m: bit j = 0} p[m] )
# The labelling is shared by all users, so user only documents the call site.
def posterior_llr(belief: DiscreteBelief, cb: Codebook, user: int = None) -> np.ndarray:
    bits = bit_table(cb.J)
    logp = belief.log()
    llrs = np.empty(cb.J)
    with np.errstate(divide='ignore', invalid='ignore'):
        for j in range(cb.J):
            ones = logsumexp(logp[bits[:, j] == 1])
            zeros = logsumexp(logp[bits[:, j] == 0])
            llrs[j] = ones - zeros
    return clip_llr(llrs)


# Number of joint hypotheses the oracle would enumerate, as a readable power
def enumeration_size(cb: Codebook) -> str:
    return f"{cb.M}^{cb.K} = 2^{cb.K * int(math.log2(cb.M))}"


# Exact marginal posteriors by enumerating all M^K joint codeword hypotheses
def brute_force_posterior(y: ReceivedBlock, chan: ChannelRealization, priors: PriorSet, cb: Codebook) -> list:
    total = cb.M ** cb.K
    if total > MAX_ENUMERATION:
        raise EnumerationException(f"M^K = {cb.M}^{cb.K} = {total} exceeds the enumeration limit {MAX_ENUMERATION}")
    logging.debug(f"Enumerating {enumeration_size(cb)} joint hypotheses")

    priors_log = np.array([log_prior(priors, k, cb) for k in range(cb.K)])
    marginals = np.full((cb.K, cb.M), -np.inf)
    for start in range(0, total, ENUMERATION_CHUNK):
        flat = np.arange(start, min(start + ENUMERATION_CHUNK, total))
        combos = np.stack(np.unravel_index(flat, (cb.M,) * cb.K), axis=1)

        signal = np.zeros((flat.size, chan.n_rx, cb.N), dtype=complex)
        weights = np.zeros(flat.size)
        for k in range(cb.K):
            signal += chan.H[None, :, k, :] * cb.codewords[k][combos[:, k]][:, None, :]
            weights += priors_log[k][combos[:, k]]
        weights -= np.sum(np.abs(y.y[None] - signal) ** 2, axis=(1, 2)) / chan.noise_var

        for k in range(cb.K):
            for m in range(cb.M):
                selected = weights[combos[:, k] == m]
                if selected.size:
                    marginals[k, m] = np.logaddexp(marginals[k, m], logsumexp(selected))

    return [DiscreteBelief.from_log(marginals[k]) for k in range(cb.K)]


@dataclass
class MpaOptions:
    """Options of the sum-product detector"""
    n_iter: int = 3
    per_antenna: bool = False  # one factor node per (resource, antenna) instead of one per resource
    tol: float = 0.0           # stop once the largest belief change drops below tol (0 = never)


class _Factor:
    """One likelihood factor: a resource observed on a set of antennas"""

    def __init__(self, resource: int, antennas: list, users: tuple, table: np.ndarray):
        self.resource = resource
        self.antennas = antennas
        self.users = users
        self.table = table          # log-likelihood over the joint indices of users, shape (M,)*d
        self.to_user = [None] * len(users)
        self.from_user = [None] * len(users)


# Log-likelihood table of one factor: -sum_r |y_n^r - sum_l h_{l,n}^r x_{l,n}|^2 / noise_var
def _factor_table(y, chan, cb, resource, antennas, users, counter):
    d = len(users)
    table = np.zeros((cb.M,) * d)
    for r in antennas:
        signal = np.zeros((cb.M,) * d, dtype=complex)
        for t, user in enumerate(users):
            shape = [1] * d
            shape[t] = cb.M
            signal = signal + (chan.H[r, user, resource] * cb.column(user, resource)).reshape(shape)
        table -= np.abs(y.y[r, resource] - signal) ** 2 / chan.noise_var
        tally(counter, multiplies=cb.M ** d + d * cb.M, adds=d * cb.M ** d, divisions=cb.M ** d)
    return table


def _normalize(log_message):
    return log_message - logsumexp(log_message)


# Sum-product MPA with a flooding schedule: all factor -> user updates, then all user -> factor
# updates, every message normalized.  Returns the per-user beliefs and the per-iteration largest
# belief change.
#
#   hook(stage, iteration, messages) is called after each half-iteration with the list of
#   normalized probability messages just produced ('fn' or 'vn'), and after each iteration
#   with the beliefs ('belief').
def mpa_decode(y: ReceivedBlock, chan: ChannelRealization, priors: PriorSet, cb: Codebook, fg: FactorGraph,
               n_iter: int, per_antenna: bool = False, tol: float = 0.0, hook=None, counter=None):
    if n_iter < 1:
        raise ValueError(f"n_iter must be >= 1, got {n_iter}")

    priors_log = [log_prior(priors, k, cb, counter) for k in range(cb.K)]
    groups = [[r] for r in range(chan.n_rx)] if per_antenna else [list(range(chan.n_rx))]
    factors = []
    for n in range(cb.N):
        users = fg.F[n]
        if not users:
            continue
        for antennas in groups:
            factor = _Factor(n, antennas, users, _factor_table(y, chan, cb, n, antennas, users, counter))
            factor.from_user = [priors_log[k] for k in users]
            factors.append(factor)

    incident = [[] for _ in range(cb.K)]
    for factor in factors:
        for t, user in enumerate(factor.users):
            incident[user].append((factor, t))

    beliefs = [DiscreteBelief.from_log(p) for p in priors_log]
    trace = []
    for iteration in range(1, n_iter + 1):
        # Factor -> user
        for factor in factors:
            d = len(factor.users)
            for t in range(d):
                acc = factor.table
                for s in range(d):
                    if s != t:
                        shape = [1] * d
                        shape[s] = cb.M
                        acc = acc + factor.from_user[s].reshape(shape)
                others = tuple(s for s in range(d) if s != t)
                factor.to_user[t] = _normalize(logsumexp(acc, axis=others) if others else acc)
            tally(counter, fn_updates=cb.M ** d, adds=d * (d - 1) * cb.M ** d, exponentials=d * cb.M ** d)
        if hook:
            hook('fn', iteration, [np.exp(f.to_user[t]) for f in factors for t in range(len(f.users))])

        # User -> factor, each message excluding the factor it is sent to
        for user in range(cb.K):
            for factor, t in incident[user]:
                acc = priors_log[user]
                for other, s in incident[user]:
                    if other is not factor:
                        acc = acc + other.to_user[s]
                factor.from_user[t] = _normalize(acc)
            tally(counter, adds=len(incident[user]) ** 2 * cb.M, exponentials=len(incident[user]) * cb.M)
        if hook:
            hook('vn', iteration, [np.exp(f.from_user[t]) for f in factors for t in range(len(f.users))])

        previous = beliefs
        beliefs = []
        for user in range(cb.K):
            acc = priors_log[user]
            for factor, t in incident[user]:
                acc = acc + factor.to_user[t]
            beliefs.append(DiscreteBelief.from_log(acc))
        tally(counter, exponentials=cb.K * cb.M, divisions=cb.K * cb.M)
        if hook:
            hook('belief', iteration, [b.p for b in beliefs])

        trace.append(max(a.total_variation(b) for a, b in zip(previous, beliefs)))
        if tol > 0 and trace[-1] < tol:
            break

    return beliefs, trace


# Convenience wrapper returning beliefs, posterior LLRs (K x J) and the trace
def mpa_detect(y, chan, priors, cb, fg, options: MpaOptions = None, counter=None):
    options = options or MpaOptions()
    beliefs, trace = mpa_decode(y, chan, priors, cb, fg, options.n_iter, options.per_antenna, options.tol,
                                counter=counter)
    llrs = np.array([posterior_llr(b, cb, k) for k, b in enumerate(beliefs)])
    return beliefs, llrs, trace
