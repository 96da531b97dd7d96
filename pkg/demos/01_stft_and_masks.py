# STFT round trip and ideal ratio masks on one 4 s segment.
import numpy as np

from css_inventory.audio import Waveform, istft, stft
from css_inventory.metrics import si_sdr
from css_inventory.separator import OracleIRM, separate_segment
from css_inventory.simulator import OverlapPattern, generate_segment

x = np.random.default_rng(0).standard_normal(4 * 16000)
S = stft(Waveform(x))
print("spectrogram shape (frames, bins):", S.shape)

y = istft(S).samples
inner = slice(512, len(y) - 512)  # the first and last frame are not fully overlapped
print("round-trip error on the interior: %.2e" % np.max(np.abs(y[inner] - x[inner])))

# two synthetic talkers speaking at the same time, reverberant and noisy
seg = generate_segment(3, 17, OverlapPattern.FULLY_OVERLAPPED, seed=4)
print("segment meta:", {k: seg.meta[k] for k in ("pattern", "rt60", "snr_db")})
refs = (seg.clean_sources[3], seg.clean_sources[17])

res = separate_segment(seg.mixture, None, OracleIRM(refs, seg.noise))
for r, o in zip(refs, res.outputs):
    print("SI-SDR  mixture %6.2f dB   oracle mask %6.2f dB" % (si_sdr(r, seg.mixture), si_sdr(r, o)))

m1, m2 = res.masks
print("mean mask values: %.3f %.3f (sum stays below one)" % (m1.values.mean(), m2.values.mean()))
