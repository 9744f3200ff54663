"""One channel, end to end: transmitter, link, receiver DSP, measurement."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import channel as ch
from ..comb import CarrierTone, REFERENCE_BANDWIDTH
from ..errors import QdcombError, StageError
from ..metrics import FecPolicy, align_and_count, compute_evm, fec_classify
from ..phasenoise import FmNoiseModel, synthesize_phase
from ..rxdsp import (
    BpsConfig,
    EqualizerConfig,
    correct_frequency_offset,
    cma_equalize,
    cpr_blockwise,
    cpr_bps,
    estimate_frequency_offset,
    resample_to_2sps,
    timing_recovery,
)
from ..txdsp import PulseShape, apply_carrier, constellation, emulate_pdm, map_symbols, prbs, shape_pulses


@dataclass(frozen=True)
class ChannelJob:
    """Everything needed to simulate one channel at one sweep point."""

    modulation: str = "16QAM"
    symbol_rate: float = 38e9
    rolloff: float = 0.10
    samples_per_symbol: int = 4
    pulse_span: int = 64
    n_symbols: int = 400_000
    carrier_model: FmNoiseModel = field(default_factory=FmNoiseModel)
    carrier_frequency: float = 0.0
    carrier_noise_psd: float = 0.0
    link: ch.LinkSpec = field(default_factory=lambda: ch.LinkSpec(fiber_length=0.0))
    osnr_db: float | None = None
    polarization_angle_deg: float = 0.0
    pdm_delay: float = 5.3e-9
    timing_offset_ui: float = 0.0
    equalizer: EqualizerConfig = field(default_factory=EqualizerConfig)
    bps: BpsConfig = field(default_factory=BpsConfig)
    cpr_modes: tuple = ("bps",)
    block_length: int = 1024
    slip_segment: int | None = 1024
    channel_index: int = 0
    seed: tuple = (0,)
    fec_policy: FecPolicy = field(default_factory=FecPolicy)


@dataclass
class ChannelOutcome:
    cpr_mode: str
    ber: float
    n_errors: int
    n_bits: int
    evm_percent: float
    fec_class: float | None
    frequency_offset: float
    received: np.ndarray = field(repr=False, default=None)


def _stage(name, job):
    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            wrap = (QdcombError, ValueError, ArithmeticError)
            if exc is not None and isinstance(exc, wrap) and not isinstance(exc, StageError):
                raise StageError(f"{name} failed on channel {job.channel_index}: {exc}",
                                 channel=job.channel_index, stage=name) from exc
            return False

    return _Ctx()


def transmit(job: ChannelJob, seeds):
    """Transmitter and link. Returns ``(received_waveform, tx_symbols)``."""
    const = constellation(job.modulation)
    fs = job.symbol_rate * job.samples_per_symbol
    n_samples = job.n_symbols * job.samples_per_symbol
    data_rng = np.random.default_rng(seeds["data"])
    state = int(data_rng.integers(1, 2**11))
    bits = prbs(11, state, job.n_symbols * const.bits_per_symbol)
    symbols = map_symbols(bits, const)
    shape = PulseShape(job.rolloff, job.pulse_span, job.samples_per_symbol)
    wave = emulate_pdm(shape_pulses(symbols, shape), fs, job.symbol_rate, job.pdm_delay)

    record = synthesize_phase(job.carrier_model, max(n_samples, 1024), fs, seeds["carrier"])
    tone = CarrierTone(job.carrier_frequency or 1.0, 1.0, record, job.channel_index)
    wave = apply_carrier(wave, tone, job.carrier_noise_psd, seeds["carrier_noise"])
    wave = ch.apply_cd(wave, job.link, "forward")
    if job.polarization_angle_deg:
        wave = ch.apply_polarization_rotation(
            wave, ch.rotation_jones(math.radians(job.polarization_angle_deg)))
    if job.timing_offset_ui:
        wave = ch.apply_fractional_delay(wave, job.timing_offset_ui / job.symbol_rate)
    wave = ch.load_ase_noise(wave, job.osnr_db, seeds["ase"])
    wave = ch.coherent_receive(wave, job.link, seeds["lo"])
    return wave, np.vstack([symbols, symbols])


def receive(job: ChannelJob, wave, tx_symbols, keep_symbols=False):
    const = constellation(job.modulation)
    with _stage("cd_compensation", job):
        wave = ch.apply_cd(wave, job.link, "inverse")
    with _stage("resample", job):
        wave = resample_to_2sps(wave)
    with _stage("timing_recovery", job):
        wave = timing_recovery(wave)
    with _stage("cma", job):
        frame = cma_equalize(wave, job.equalizer)
    with _stage("frequency_offset", job):
        offset = estimate_frequency_offset(frame, const)
        frame = correct_frequency_offset(frame, offset)
    outcomes = []
    for mode in job.cpr_modes:
        with _stage(f"cpr_{mode}", job):
            if mode == "bps":
                rec = cpr_bps(frame, const, job.bps)
            elif mode == "blockwise":
                rec = cpr_blockwise(frame, const, job.block_length)
            else:
                raise StageError(f"unknown cpr mode {mode!r}", channel=job.channel_index)
        with _stage("ber", job):
            aligned = align_and_count(rec.stack(), tx_symbols, const, discard=job.equalizer.n_taps,
                                      slip_segment=job.slip_segment)
        evm = compute_evm(aligned.received.ravel(), const, aligned.reference.ravel())
        outcomes.append(ChannelOutcome(
            cpr_mode=mode,
            ber=aligned.ber.ber,
            n_errors=aligned.ber.n_errors,
            n_bits=aligned.ber.n_bits,
            evm_percent=evm,
            fec_class=fec_classify(aligned.ber.ber, job.fec_policy),
            frequency_offset=offset,
            received=aligned.received if keep_symbols else None,
        ))
    return outcomes


def job_seeds(job: ChannelJob):
    names = ("data", "carrier", "carrier_noise", "ase", "lo")
    children = np.random.SeedSequence(list(job.seed)).spawn(len(names))
    return dict(zip(names, children))


def run_channel(job: ChannelJob, keep_symbols=False) -> list[ChannelOutcome]:
    seeds = job_seeds(job)
    with _stage("transmit", job):
        wave, tx = transmit(job, seeds)
    return receive(job, wave, tx, keep_symbols)


def osnr_for_snr(snr_db: float, symbol_rate: float) -> float:
    """OSNR (12.5 GHz reference) giving the stated per-symbol SNR."""
    return snr_db + 10 * math.log10(symbol_rate / REFERENCE_BANDWIDTH)
