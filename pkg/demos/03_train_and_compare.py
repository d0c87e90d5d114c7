"""Train the three headline normalizers under one budget and compare.

Takes around half a minute on one CPU core. The adaptive shift trains
jointly with the backbone: classification loss plus the pair-wise
discrepancy objective (weight 0.1) on the shifted coordinates.
"""

import time

from chase import SynthConfig, TrainConfig, synth_generate, train

synth_cfg = SynthConfig(samples_per_class=250, test_samples_per_class=75, seed=7)
train_seqs, test_seqs = synth_generate(synth_cfg)
print(f"dataset: {len(train_seqs)} train / {len(test_seqs)} test\n")

results = {}
for normalizer in ("vanilla", "s2com", "chase"):
    cfg = TrainConfig(
        normalizer=normalizer,
        lambda_=0.1 if normalizer == "chase" else 0.0,
        epochs=15,
        lr_decay_epochs=[10, 13],
        batch_size=32,
        seed=1,
        c1=16,
        c2=4,
    )
    started = time.monotonic()
    model, metrics, _ = train(train_seqs, cfg, test_seqs)
    elapsed = time.monotonic() - started
    results[normalizer] = metrics[-1]["eval_acc"]
    tail = metrics[-1]
    extra = f"  mpmmd={tail['mpmmd']:.4f}" if "mpmmd" in tail else ""
    print(f"{normalizer:>8}: test acc {tail['eval_acc']:.3f}  "
          f"train loss {tail['train_loss']:.4f}{extra}  ({elapsed:.0f}s)")

print("\nreading the result:")
print(f"  vanilla  {results['vanilla']:.3f} - fits the train split but the "
      "absolute-coordinate drift breaks it at test time")
print(f"  s2com    {results['s2com']:.3f} - per-entity centering erases the label "
      "signal entirely (chance level)")
print(f"  chase    {results['chase']:.3f} - the hull-constrained shift removes world "
      "placement while keeping inter-entity geometry")
