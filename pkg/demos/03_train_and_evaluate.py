# Train the miniature speaker detector and score it: clean ranking quality,
# per-case behaviour, and what the three heads see.

import numpy as np

from avasdlab import (ModelConfig, TrainConfig, evaluate, forward, generate_dataset,
                      init_params, train)

ds = generate_dataset(seed=7, n_samples=300)
train_samples, eval_samples = ds.samples[:225], ds.samples[225:]

params = init_params(ModelConfig(seed=3))
result = train(params, train_samples, TrainConfig(epochs=15, seed=11))
print("loss curve:", [round(v, 3) for v in result.loss_curve[::3]])

report = evaluate(result.params, eval_samples)
print(f"clean mAP on held-out clips: {report.map:.4f}")

# look at one clip per case
pt = result.params.as_tensors()
by_case = {}
for s in eval_samples:
    by_case.setdefault(s.case, s)
for case, s in sorted(by_case.items()):
    trace = forward(pt, s.audio, s.visual)
    print(f"{case:24s} labels={s.labels.tolist()}")
    print(f"{'':24s} scores={[round(float(x), 2) for x in trace.s_av.data]}")

# frame accuracy at the 0.5 threshold
correct = total = 0
for s in eval_samples:
    pred = (forward(pt, s.audio, s.visual).s_av.data >= 0.5).astype(np.int8)
    correct += int((pred == s.labels).sum())
    total += s.frames
print(f"held-out frame accuracy: {correct / total:.3f}")
