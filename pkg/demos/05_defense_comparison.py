# Defense comparison: plain training, adversarial training, the cross-modal
# interaction losses, and both combined, scored under the same pgd attack.

from avasdlab import (AttackConfig, InteractionWeights, ModelConfig, TrainConfig,
                      evaluate, generate_dataset, init_params, train)

ds = generate_dataset(seed=7, n_samples=300)
train_samples, eval_samples = ds.samples[:225], ds.samples[225:]

train_attack = AttackConfig(method="bim", eps_av=2.5, steps=1, seed=0)
geometry = InteractionWeights(dispersion=0.25, pair_distance=0.25)

modes = {
    "plain ce": TrainConfig(epochs=15, seed=11),
    "adversarial training": TrainConfig(epochs=15, seed=11, loss_mode="adversarial",
                                        attack=train_attack),
    "interaction losses": TrainConfig(epochs=15, seed=11, loss_mode="interaction",
                                      weights=geometry),
    "interaction + adversarial": TrainConfig(epochs=15, seed=11,
                                             loss_mode="interaction+adversarial",
                                             weights=geometry, attack=train_attack),
}

probe = AttackConfig(method="pgd", eps_av=5.0, seed=0)
print(f"{'mode':28s} {'clean':>6s} {'pgd@5':>6s} {'ECR_a':>6s} {'ECR_v':>6s}")
for name, cfg in modes.items():
    result = train(init_params(ModelConfig(seed=3)), train_samples, cfg)
    clean = evaluate(result.params, eval_samples)
    hit = evaluate(result.params, eval_samples, probe)
    print(f"{name:28s} {clean.map:6.3f} {hit.map:6.3f} {hit.ecr_a:6.3f} {hit.ecr_v:6.3f}")

print("\nlower ECR = embeddings move less under attack = harder to push across")
print("the decision boundary within the same budget")
print("\nsingle runs are noisy at this miniature scale; the acceptance suite")
print("(tests/test_acceptance.py, defense-trend criterion) averages five")
print("training seeds at a larger scale, where the ordering")
print("interaction > adversarial training > plain ce holds with clear gaps")
