"""From R peaks to the six HRV features, with demographic augmentation.

Shows the exact feature definitions on hand-checkable series and then on a
detected synthetic record, including the gender/age augmentation used by
the F(G)/F(A)/F(GA) experiment variants.
"""

import numpy as np

from ecgpain import (
    AugmentMode,
    Gender,
    IbiSeries,
    SyntheticEcgSpec,
    augment_features,
    compute_features,
    compute_ibis,
    detect_qrs,
    generate_synthetic_ecg,
    normalize_features,
)

print("hand-checkable series")
for ibis in ([800.0, 800.0, 800.0], [800.0, 810.0, 790.0], [700.0, 800.0, 900.0]):
    fv = compute_features(IbiSeries(ibis))
    print(f"  ibis {ibis}: mean {fv.mean_ibi_ms:.1f} ms, rmssd {fv.rmssd_ms:.3f}, "
          f"sdnn {fv.sdnn_ms:.3f}, slope {fv.ibi_slope_ms_per_beat:.1f} ms/beat, "
          f"ratio {fv.sdnn_rmssd_ratio:.3f}, hr {fv.heart_rate_bpm:.1f} bpm")

print("\nfrom a detected synthetic record")
rng = np.random.default_rng(4)
rr = rng.normal(820.0, 25.0, 14)
record, _ = generate_synthetic_ecg(SyntheticEcgSpec(rr_intervals_ms=rr, noise_std=0.03), seed=2)
result = detect_qrs(record)
series = compute_ibis(result.r_indices, record.sample_rate)
fv = compute_features(series)
print(f"  {len(result.r_indices)} beats -> {len(series.ibis_ms)} intervals")
print(f"  base vector (6): {np.round(fv.as_array(), 3)}")

augmented = augment_features(fv, AugmentMode.GENDER_AGE, gender=Gender.FEMALE, age=34)
print(f"  F(GA) vector (8): {np.round(augmented.as_array(), 3)}")

print("\nfold-wise z-scoring (training statistics only)")
train = rng.normal([800, 30, 40, 0, 1.3, 75], [40, 8, 9, 2, 0.3, 4], size=(50, 6))
test = rng.normal([760, 25, 35, 0, 1.4, 79], [40, 8, 9, 2, 0.3, 4], size=(10, 6))
train_n, test_n, mean, std = normalize_features(train, test)
print(f"  train mean after scaling: {np.round(train_n.mean(axis=0), 12)}")
print(f"  test mean after scaling (not zero, as it must be): {np.round(test_n.mean(axis=0), 3)}")
