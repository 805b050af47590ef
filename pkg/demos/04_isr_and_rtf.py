# %% [markdown]
# # Inference success rate and real-time factor
#
# A greedy untrained engine never emits the null token on its own, so faults
# are injected to exercise the success-rate accounting.

# %%
from streamtse.audio import STANDARD_CHUNK_MS
from streamtse.bench import bench_rtf, eval_isr, synthetic_test_set
from streamtse.config import ModelConfig
from streamtse.engine import SessionConfig
from streamtse.model import Models

models = Models.create(ModelConfig(), seed=0)
tests = synthetic_test_set(4, 1120, seed=0)
print("no faults:", eval_isr(models, SessionConfig(560), tests).to_dict())
print("run 2 faulted:", eval_isr(models, SessionConfig(560), tests, {2}).to_dict())

# %% Real-time factor per chunk size on this machine.
for chunk_ms in STANDARD_CHUNK_MS:
    r = bench_rtf(models, SessionConfig(chunk_ms), duration_s=4.0, repeats=3, hardware_label="local cpu",
                  ref_ms=1000)
    print(f"{chunk_ms:5d} ms  t_proc {r.t_proc_s:.3f} s  rtf {r.rtf:.4f}")

# %% A known per-chunk sleep shows up additively in the measurement.
base = bench_rtf(models, SessionConfig(560), 5.6, repeats=5, ref_ms=1000)
slow = bench_rtf(models, SessionConfig(560), 5.6, repeats=5, delay_fraction=0.1, ref_ms=1000)
print(f"baseline {base.rtf:.4f}  with 10% delay {slow.rtf:.4f}  expected {base.rtf + 0.1:.4f}")
