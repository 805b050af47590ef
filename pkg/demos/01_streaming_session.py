# %% [markdown]
# # One streaming extraction session
#
# Build a two-speaker scene, stream the mixture through an untrained model in
# 560 ms chunks and look at what each step adds to the two LM sequences.

# %%
import numpy as np

from streamtse.audio import chunk_waveform, synth_scene
from streamtse.config import ModelConfig
from streamtse.engine import SessionConfig, close_session, open_session, process_chunk
from streamtse.layout import dump_layout
from streamtse.model import Models

models = Models.create(ModelConfig(), seed=0)
scene = synth_scene(seed=3, duration_ms=2000, snr_db=2.0, ref_ms=1000)
print(f"target speaker {scene.target_speaker}, interferer {scene.interferer_speaker}, "
      f"{len(scene.mixture)} mixture samples")

# %% The reference is encoded once and becomes the static prefix of both caches.
session = open_session(SessionConfig(chunk_ms=560), models, scene.reference)
print("prefix length:", len(session.selm_layout), "(n_ref + separator)")

# %% Each chunk: mel, encoder, greedy SELM decode, ARLM refinement, codec decode.
for chunk in chunk_waveform(scene.mixture, session.spec):
    out = process_chunk(session, chunk)
    cost = session.ledger[-1]
    print(f"t={cost.t}  SELM +{cost.selm_appended}  ARLM +{cost.arlm_appended}  "
          f"recomputed {cost.arlm_recomputed}  decoder rows {out.decoder_rows}  "
          f"first tokens {out.tokens.first_q[:4]}")

# %% The start of the last two steps in the SELM layout, one line per position.
print("".join(dump_layout(session.selm_layout).splitlines(True)[-2 * 29:][:12]))

# %%
wav, report = close_session(session)
print(report.to_json(indent=1)[:400])
print("output samples:", len(wav), "peak", float(np.abs(wav.samples).max()))
