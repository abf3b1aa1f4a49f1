# Module for receiver complexity: closed-form dominant-term orders per decode, and an operation
# counter that instruments the real detectors.
#
#   mmse_sic  N_r^3 N^3 K
#   mpa       N_iter N_r N M_p^d_f
#   sic_mpa   N_iter N_r N M_p^d_s
#   epa       N_iter N_r N M d_f
#
# Orders use Python integers so exponential terms never overflow.

from dataclasses import dataclass, fields
from fractions import Fraction

import pandas as pd

MMSE_SIC = 'mmse_sic'
MPA = 'mpa'
SIC_MPA = 'sic_mpa'
EPA = 'epa'
RECEIVERS = (MMSE_SIC, MPA, SIC_MPA, EPA)
BASELINES = (MMSE_SIC, MPA)

# Iterations behind the comparison table: N_in = 3 inner iterations, 3 outer iterations for
# MPA and EPA and 4 for SIC-MPA
TABLE_N_IN = 3
TABLE_N_OUT = 3
TABLE_SIC_N_OUT = 4

# (M, M_p) settings compared in the table
TABLE_SETTINGS = ((4, 3), (8, 4), (16, 9))


# Custom exception class for invalid complexity parameters
class ComplexityException(RuntimeError): pass


@dataclass(frozen=True)
class ComplexityProfile:
    """System and receiver parameters entering the complexity orders"""
    N_r: int
    N: int
    K: int
    N_iter: int
    M: int
    M_p: int
    d_f: int
    d_s: int = 1

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ComplexityException(f"{f.name} must be a positive integer, got {value!r}")
        if self.M_p > self.M:
            raise ComplexityException(f"M_p = {self.M_p} exceeds M = {self.M}")
        if self.d_s > self.d_f:
            raise ComplexityException(f"d_s = {self.d_s} exceeds d_f = {self.d_f}")


def total_iterations(n_out: int, n_in: int) -> int:
    return n_out * n_in


def complexity_order(profile: ComplexityProfile, receiver: str) -> int:
    p = profile
    if receiver == MMSE_SIC:
        return p.N_r ** 3 * p.N ** 3 * p.K
    if receiver == MPA:
        return p.N_iter * p.N_r * p.N * p.M_p ** p.d_f
    if receiver == SIC_MPA:
        return p.N_iter * p.N_r * p.N * p.M_p ** p.d_s
    if receiver == EPA:
        return p.N_iter * p.N_r * p.N * p.M * p.d_f
    raise ComplexityException(f"unknown receiver '{receiver}', expected one of {RECEIVERS}")


# Round to a number of significant figures
def significant(value, digits: int = 3) -> float:
    return float(f"{float(value):.{digits}g}")


# Percentage order(receiver) / order(baseline) to 3 significant figures
def complexity_ratio(profile: ComplexityProfile, receiver: str, baseline: str,
                     baseline_profile: ComplexityProfile = None) -> float:
    if baseline not in BASELINES:
        raise ComplexityException(f"unknown baseline '{baseline}', expected one of {BASELINES}")
    ratio = Fraction(complexity_order(profile, receiver),
                     complexity_order(baseline_profile or profile, baseline)) * 100
    return significant(ratio)


# Build the receiver comparison table: every receiver at every (M, M_p) setting, with ratios
# against both baselines.  SIC-MPA appears once per d_s in sic_d_s and runs sic_n_iter
# iterations; the baselines always use n_iter.
def comparison_table(N_r: int = 4, N: int = 4, K: int = 12, d_f: int = 6, n_iter: int = None,
                     sic_n_iter: int = None, settings=TABLE_SETTINGS, sic_d_s=(3, 2)) -> pd.DataFrame:
    n_iter = n_iter or total_iterations(TABLE_N_OUT, TABLE_N_IN)
    sic_n_iter = sic_n_iter or total_iterations(TABLE_SIC_N_OUT, TABLE_N_IN)
    rows = []
    for M, M_p in settings:
        base = ComplexityProfile(N_r, N, K, n_iter, M, M_p, d_f)
        entries = [(MMSE_SIC, None, base), (MPA, None, base)]
        entries += [(SIC_MPA, d_s, ComplexityProfile(N_r, N, K, sic_n_iter, M, M_p, d_f, d_s)) for d_s in sic_d_s]
        entries.append((EPA, None, base))
        for receiver, d_s, profile in entries:
            rows.append({
                'receiver': receiver,
                'd_s': d_s if d_s is not None else '',
                'M': M,
                'M_p': M_p,
                'N_iter': profile.N_iter,
                'order': complexity_order(profile, receiver),
                'ratio_mmse_sic': complexity_ratio(profile, receiver, MMSE_SIC, base),
                'ratio_mpa': complexity_ratio(profile, receiver, MPA, base),
            })
    return pd.DataFrame(rows, columns=['receiver', 'd_s', 'M', 'M_p', 'N_iter', 'order',
                                       'ratio_mmse_sic', 'ratio_mpa'])


@dataclass
class OpCounter:
    """Arithmetic operations accumulated by one instrumented decode"""
    multiplies: int = 0
    adds: int = 0
    exponentials: int = 0
    divisions: int = 0
    fn_updates: int = 0   # joint hypotheses visited by sum-product factor updates

    def add(self, **ops):
        for name, count in ops.items():
            if name not in self.__dataclass_fields__:
                raise ComplexityException(f"unknown operation '{name}'")
            if count < 0:
                raise ComplexityException(f"operation counts only grow, got {name}={count}")
            setattr(self, name, getattr(self, name) + int(count))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# Run one decode with a fresh counter and return the counter.
#   decode is mpa_decode, epa_decode or anything accepting a counter keyword
def measure_ops(decode, *args, **kwargs) -> OpCounter:
    counter = OpCounter()
    decode(*args, counter=counter, **kwargs)
    return counter
