# %% [markdown]
# # Cache cost of the three ARLM layouts
#
# Interleaving keeps every new chunk at the tail of the sequence, so the KV
# cache only grows. Putting all mixture frames before all tokens means each
# new chunk lands in the middle and everything after it must be recomputed.

# %%
from collections import defaultdict

from streamtse.bench import ablate_cost
from streamtse.config import ModelConfig
from streamtse.model import Models

models = Models.create(ModelConfig(), seed=0)
rows = ablate_cost(models, chunk_ms_list=[80, 560], steps=8)
assert all(r["match"] for r in rows)

# %% Per-step recomputation, measured from the engine's ledger.
table = defaultdict(list)
for r in rows:
    table[(r["chunk_ms"], r["strategy"])].append(r["recomputed"])
for (chunk_ms, strategy), rec in sorted(table.items()):
    print(f"{chunk_ms:5d} ms  {strategy:12s} recomputed per step {rec}  total {sum(rec)}")

# %% Cumulative work over T steps grows quadratically for the sequential layout.
for chunk_ms in (80, 560):
    m = chunk_ms // 40
    seq = sum(m + t * m for t in range(1, 9))
    print(f"{chunk_ms} ms: sequential forwards {seq} rows over 8 steps, interleaved appends {8 * 2 * m}")
