# Module for the outer receiver loop: extrinsic LLR exchange between an SCMA detector and a
# soft-in/soft-out (SISO) outer decoder.
#
#   Lambda = detector(y, prior = lambda2)
#   lambda1 = Lambda - lambda2            (detector extrinsic)
#   lambda2 = siso(lambda1)               (refreshed prior for the next pass)
#
# A frame is r SCMA blocks carrying the same K x J information bits; copy i of every bit
# sits in block i.  LLR arrays of a frame are shaped r x K x J.

import logging
from dataclasses import dataclass

import numpy as np

from modules.channel import ChannelRealization, ReceivedBlock
from modules.codebook import Codebook, FactorGraph
from modules.epa import EpaOptions, epa_decode
from modules.reference import MpaOptions, PriorSet, clip_llr, mpa_detect

PASSTHROUGH = 'passthrough'
REPETITION = 'repetition'
SISO_PLUGINS = (PASSTHROUGH, REPETITION)


# Custom exception class for misconfigured outer decoders
class SisoException(RuntimeError): pass


@dataclass
class LlrFrame:
    """Posterior, extrinsic and prior LLRs of one outer iteration (each r x K x J)"""
    posterior: np.ndarray
    extrinsic: np.ndarray
    prior: np.ndarray
    iterations: int = 0   # detector iterations executed over the frame's blocks


# The one place the detector extrinsic is formed.  Left unclipped: extrinsic + prior
# reproduces posterior exactly, and |extrinsic| reaches 2 * L_CLIP when posterior and prior
# saturate in opposite directions.
def extrinsic_llr(posterior, prior) -> np.ndarray:
    return np.asarray(posterior, dtype=float) - np.asarray(prior, dtype=float)


# LLR > 0 decodes to 1, everything else (ties included) to 0
def hard_decision(llrs) -> np.ndarray:
    return (np.asarray(llrs) > 0).astype(int)


def passthrough_siso(llrs) -> np.ndarray:
    return np.zeros_like(np.asarray(llrs, dtype=float))


# Extrinsic combining for a rate-1/r repetition code.  The leading axis holds r copies of
# B bits (copy i of bit b at position i*B + b); the output for each copy is the sum of the
# other copies only.
def repetition_siso(llrs, r: int) -> np.ndarray:
    llrs = np.asarray(llrs, dtype=float)
    if r < 1 or llrs.ndim == 0 or llrs.shape[0] % r:
        raise SisoException(f"frame length {llrs.shape[0] if llrs.ndim else 0} is not divisible by r = {r}")
    copies = llrs.reshape((r, -1) + llrs.shape[1:])
    out = np.zeros_like(copies)
    for i in range(r):
        for j in range(r):
            if j != i:
                out[i] += copies[j]
    return out.reshape(llrs.shape)


class SisoPlugin:
    """Outer decoder contract: refresh priors from extrinsic LLRs and make final decisions"""

    name = None
    r = 1

    def extrinsic(self, llrs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def decide(self, frame: LlrFrame) -> np.ndarray:
        raise NotImplementedError

    # Code rate of the outer decoder
    @property
    def rate(self) -> float:
        return 1.0 / self.r


class PassthroughSiso(SisoPlugin):
    """Uncoded operation: no prior information is ever fed back"""

    name = PASSTHROUGH

    def extrinsic(self, llrs):
        return passthrough_siso(llrs)

    def decide(self, frame):
        return hard_decision(frame.posterior[0])


class RepetitionSiso(SisoPlugin):
    """Every information bit is sent once in each of r blocks"""

    name = REPETITION

    def __init__(self, r: int = 2):
        if r < 1:
            raise SisoException(f"repetition factor must be >= 1, got {r}")
        self.r = r

    def extrinsic(self, llrs):
        return repetition_siso(llrs, self.r)

    def decide(self, frame):
        return hard_decision(np.sum(frame.extrinsic, axis=0))


def make_siso(name: str, repetition: int = 2) -> SisoPlugin:
    if name == PASSTHROUGH:
        return PassthroughSiso()
    if name == REPETITION:
        return RepetitionSiso(repetition)
    raise SisoException(f"unknown SISO plugin '{name}', expected one of {SISO_PLUGINS}")


def _run_mpa(y, chan, priors, cb, fg, options):
    beliefs, llrs, trace = mpa_detect(y, chan, priors, cb, fg, options or MpaOptions())
    return beliefs, llrs, len(trace)


def _run_epa(y, chan, priors, cb, fg, options):
    beliefs, llrs, trace = epa_decode(y, chan, priors, cb, fg, options or EpaOptions())
    return beliefs, llrs, len(trace)


# Detector adapters share one signature:
#   detector(y, chan, priors, cb, fg, options) -> (beliefs, K x J llrs, iterations)
DETECTORS = {'mpa': _run_mpa, 'epa': _run_epa}


# Run the outer loop over one frame.
#   ys, chans are the frame's r received blocks and channel realizations (a single block and
#   realization are accepted for r = 1)
#   detector is 'mpa', 'epa' or a callable with the adapter signature above
# Returns (K x J hard bits, list of LlrFrame, one per outer iteration).
def run_receiver(ys, chans, cb: Codebook, fg: FactorGraph, detector, siso: SisoPlugin, n_out: int,
                 options=None) -> tuple:
    if n_out < 1:
        raise ValueError(f"n_out must be >= 1, got {n_out}")
    if isinstance(ys, ReceivedBlock):
        ys = [ys]
    if isinstance(chans, ChannelRealization):
        chans = [chans]
    if len(ys) != siso.r or len(chans) != siso.r:
        raise SisoException(f"{siso.name} SISO expects {siso.r} blocks per frame, got {len(ys)}")
    if isinstance(detector, str) and detector not in DETECTORS:
        raise ValueError(f"unknown detector '{detector}', expected one of {tuple(DETECTORS)}")
    detect = DETECTORS[detector] if isinstance(detector, str) else detector

    prior = np.zeros((siso.r, cb.K, cb.J))
    history = []
    for _ in range(n_out):
        posterior = np.zeros_like(prior)
        iterations = 0
        for i in range(siso.r):
            _, llrs, used = detect(ys[i], chans[i], PriorSet(prior[i]), cb, fg, options)
            posterior[i] = clip_llr(llrs)
            iterations += used
        frame = LlrFrame(posterior, extrinsic_llr(posterior, prior), prior, iterations)
        history.append(frame)
        prior = clip_llr(siso.extrinsic(frame.extrinsic))

    logging.debug(f"Receiver finished {n_out} outer iterations over {siso.r} block(s)")
    return siso.decide(history[-1]), history
