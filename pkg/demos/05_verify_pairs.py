"""
Deciding whether two faces show the same person
===============================================

Verification crops five fixed-size components from each face (whole
face, forehead, eye band, nose, mouth), runs each component pair
through its own small conv network, and concatenates the outputs into
one feature vector. A logistic head trains the networks end to end;
the downstream classifier is PCA plus a linear SVM on the same
features. The end of the script sweeps a ROC curve over the SVM scores.
"""

import numpy as np

from canonface import recovery, synthetic, verify


def cropped(n, seed):
    return [
        verify.VerificationPair(verify.crop_components(a, la),
                                verify.crop_components(b, lb), y)
        for a, la, b, lb, y in synthetic.verification_pairs(n, seed=seed)
    ]


train_pairs = cropped(120, seed=1)
test_pairs = cropped(40, seed=2)

config = recovery.TrainConfig(learning_rate=1e-2, momentum=0.9,
                              minibatch_size=16, epochs=20, rng_seed=0)
model, log = verify.train_fcn(train_pairs, config)
print(f"pair-network loss: {log[0][1]:.3f} (epoch 1) -> "
      f"{log[-1][1]:.3f} (epoch {log[-1][0]})")
print(f"pair-network accuracy: train {verify.fcn_accuracy(model, train_pairs):.2f}, "
      f"test {verify.fcn_accuracy(model, test_pairs):.2f}")

# the classifier consumes the pre-head features
features = np.stack([verify.extract_features(model, p) for p in train_pairs])
labels = np.array([p.label for p in train_pairs])
verifier = verify.train_svm(features, labels, pca_dim=16,
                            cfg=verify.SvmConfig())

scored = []
correct = 0
for pair in test_pairs:
    predicted, score = verify.verify(model, verifier, pair)
    correct += int((predicted == verify.SAME) == (pair.label == 1))
    scored.append((score, pair.label))
print(f"svm accuracy on fresh pairs: {correct / len(test_pairs):.2f}")

print("\nroc curve (threshold, fpr, tpr):")
for threshold, fpr, tpr in verify.roc_curve(scored)[:8]:
    print(f"  {threshold:10.3f}  {fpr:5.2f}  {tpr:5.2f}")
