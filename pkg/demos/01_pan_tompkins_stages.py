"""Walk a synthetic ECG through every stage of the QRS detector.

Generates a clean 8-beat signal with known R positions, runs the detector,
and writes every intermediate stage (band-passed, derivative, squared,
integrated) next to the raw signal as a CSV you can plot with any tool.
"""

import numpy as np

from ecgpain import SyntheticEcgSpec, detect_qrs, generate_synthetic_ecg
from ecgpain.qrs_detect import match_detections

spec = SyntheticEcgSpec(rr_intervals_ms=[850.0] * 8, noise_std=0.02)
record, ground_truth = generate_synthetic_ecg(spec, seed=1)
print(f"synthetic record: {len(record.samples)} samples at {record.sample_rate:.0f} Hz, "
      f"{len(ground_truth)} beats")

result, stages = detect_qrs(record, return_stages=True)
print(f"detected {len(result.r_indices)} R peaks "
      f"(searchback {result.searchback_count}, t-wave rejections {result.rejected_twave_count})")
print("ground truth:", ground_truth.tolist())
print("detected:    ", result.r_indices.tolist())

score = match_detections(result.r_indices, ground_truth, record.sample_rate, skip_s=0.0)
print(f"sensitivity {score['sensitivity']:.3f}, "
      f"ppv {score['positive_predictivity']:.3f}, "
      f"mean |error| {np.abs(score['errors_ms']).mean():.2f} ms")

table = np.column_stack([stages.raw, stages.bandpassed, stages.derivative,
                         stages.squared, stages.integrated])
np.savetxt("pan_tompkins_stages.csv", table, delimiter=",",
           header="raw,bandpassed,derivative,squared,integrated", comments="")
print("stage dump written to pan_tompkins_stages.csv "
      "(five equal-length columns, one row per sample)")
