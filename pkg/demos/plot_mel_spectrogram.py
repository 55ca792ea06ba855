"""
From a WAV file to a fixed-size log-mel grid
============================================
"""

import numpy as np

from genrefusion.audio import (PcmSignal, SpectrogramConfig, decode_wav, encode_wav,
                               mel_filterbank, spectrogram_from_wav)

rate = 22050
t = np.arange(2 * rate) / rate
# two seconds: a 440 Hz tone that jumps to 1760 Hz halfway
x = np.where(t < 1.0, np.sin(2 * np.pi * 440 * t), np.sin(2 * np.pi * 1760 * t)) * 0.5
wav = encode_wav(PcmSignal(x, rate))
print("decoded", decode_wav(wav).samples.shape, "samples")

# a small grid keeps the printout readable; the model default is 500 x 1500
cfg = SpectrogramConfig(n_mels=40, frames=120)
spec = spectrogram_from_wav(wav, cfg)
print("grid", spec.shape, "range", spec.min(), "to", spec.max(), "dB")

fb = mel_filterbank(cfg)
centres = np.argmax(fb, axis=1)
print("first filter centres (FFT bins):", centres[:8])

# the loudest mel band moves up when the tone jumps
print("loudest band, first half: ", spec[:, 10].argmax())
print("loudest band, second half:", spec[:, 80].argmax())
# the tail past two seconds is padded with the floor value
print("padding columns equal floor:", np.all(spec[:, -1] == cfg.floor_db))
