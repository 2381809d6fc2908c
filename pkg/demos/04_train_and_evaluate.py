"""Training the full model on synthetic data and comparing with the oracle.

A reduced dataset keeps this to about a minute on one core. The script trains
with validation-based epoch selection, evaluates on the later time split,
round-trips the checkpoint and prints a few predicted curves.
"""

import numpy as np

from vgen import data
from vgen.metrics import mae, render_table
from vgen.training import Checkpoint, TrainConfig, evaluate, predict, train

cfg = TrainConfig(
    n_users=100, n_videos=200, n_impressions=8000, d_model=16, d_v=16, hidden=32,
    epochs=4, batch_size=128, val_fraction=0.1, lambda_1=0.1, lambda_2=1.0, delta=0.5,
)
records, oracle = data.synth_generate(cfg.synth_config())
examples = data.build_examples(records, cfg.L_hist, cfg.M, cfg.n_behaviors)
train_ex, eval_ex = data.time_split(examples, cfg.split)
print(f"{len(train_ex)} training and {len(eval_ex)} held-out examples (split by time)")

result = train(cfg, train_ex, eval_ex, progress=lambda r: print(
    f"epoch {r['epoch']}: loss {r['train_loss']:.4f}, val MAE {r['val_mae_sec']:.3f}, eval MAE {r['eval_mae_sec']:.3f}"))
print("selected epoch:", result.checkpoint.extra["selected_epoch"])

ckpt = Checkpoint.from_bytes(result.checkpoint.to_bytes())
model = evaluate(ckpt, eval_ex)
orc = data.oracle_metrics(oracle, eval_ex)
truth = np.array([e.observed_watch_time_sec for e in eval_ex])
mean = np.mean([e.observed_watch_time_sec for e in train_ex])
print()
print(render_table([model, orc]))
print(f"constant-mean MAE {mae(np.full(truth.size, mean), truth):.4f}")

for row in predict(ckpt, eval_ex[:3]):
    print(f"\n{row['user_id']} / {row['video_id']}: E[T] {row['expected_time_sec']:.2f} s")
    print("  p:", np.round(row["p"], 3))
