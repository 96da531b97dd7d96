# Build a speaker inventory from the mixture itself and check which
# speakers the clusters capture.
import numpy as np

from css_inventory.embedder import chunk_embeddings
from css_inventory.inventory import build_inventory_self, purity
from css_inventory.metrics import overlap_ratio
from css_inventory.simulator import generate_recording

rec = generate_recording(n_speakers=2, duration=60.0, target_overlap=0.30, seed=1)
print("speakers:", sorted(rec.script.speaker_ids), " utterances:", len(rec.script.events))
print("overlap ratio: %.3f" % overlap_ratio(rec.script))

chunks = chunk_embeddings(rec.mixture)
print("1.2 s chunks: %d with speech, %d silent" % (len(chunks), len(chunks.silent_indices)))

X = chunks.matrix()
sim = X @ X.T
print("chunk cosine similarity: min %.2f median %.2f" % (sim.min(), np.median(sim)))

# over-clustering: more clusters than talkers
for M in (2, 3, 4, 6):
    inv = build_inventory_self(rec.mixture, M, seed=0, chunks=chunks)
    rep = purity(inv, rec)
    sizes = inv.provenance["cluster_sizes"]
    print("M=%d  cluster sizes %-22s purity %.3f" % (M, sizes, rep["overall"]))

# the majority speaker behind each of the M=4 clusters; overlapped chunks
# are left out of purity, so small clusters of mixed speech score nothing
for c in purity(build_inventory_self(rec.mixture, 4, seed=0, chunks=chunks), rec)["clusters"]:
    print("  cluster", c["cluster"], "single-speaker chunks", c["chunks"], "majority speaker", c["majority_speaker"])
