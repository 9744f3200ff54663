import numpy as np
import pytest

from qdcomb.channel import LinkSpec
from qdcomb.harness.pipeline import ChannelJob, job_seeds, transmit
from qdcomb.phasenoise import FmNoiseModel
from qdcomb.rxdsp import cma_equalize, resample_to_2sps, timing_recovery

IDEAL_LO = LinkSpec(fiber_length=0.0, lo_model=FmNoiseModel())


def ideal_job(**kwargs):
    """A job with noiseless carrier and LO unless overridden."""
    base = dict(n_symbols=20_000, carrier_model=FmNoiseModel(), link=IDEAL_LO)
    base.update(kwargs)
    return ChannelJob(**base)


def tx_wave(job):
    return transmit(job, job_seeds(job))


def front_end(job, wave=None, tx=None):
    """Transmit (unless given) and run resampling, timing and CMA."""
    if wave is None:
        wave, tx = tx_wave(job)
    w2 = timing_recovery(resample_to_2sps(wave))
    return cma_equalize(w2, job.equalizer), tx


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
