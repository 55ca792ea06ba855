"""
Which lines and words does the lyrics encoder attend to?
========================================================
"""

import numpy as np

from genrefusion.han import HanEncoder
from genrefusion.lyrics import build_vocab, encode_lyrics, random_embeddings, segment_sentences
from genrefusion.tensor import Tensor

lyrics = """Drive all night on the open road
Engine loud and the fire burns

Oh oh oh
We ride until the morning comes
"""

sentences = segment_sentences(lyrics)
print(len(sentences), "sentences:", sentences)

vocab = build_vocab(sentences)
grid = encode_lyrics(lyrics, vocab)
print("grid", grid.ids.shape, "real sentences", grid.n_sentences)

rng = np.random.default_rng(1)
emb = Tensor(random_embeddings(vocab, rng, 32))
han = HanEncoder(embed_dim=32, hidden=16, rng=rng)
song, attn = han.forward([grid], emb)
print("song vector", song.shape)

a = attn[0]
for i, w in zip(a.sentences, a.sentence_weights):
    words = sentences[i]
    ww = a.word_weights[a.sentences.index(i)]
    top = words[int(np.argmax(ww))]
    print(f"line {i}  weight {w:.3f}  top word {top!r}")
