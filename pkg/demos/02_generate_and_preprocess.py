"""From synthetic survey to model-ready matrix.

Generates a raw multi-site table (weather lag histories, agronomic
categoricals, partially observed contamination panel), then runs the full
encoding pipeline: below-LOQ zeroing + log(x+1), sine/cosine dates, Magnus
relative humidity from temperature and dew point, one-hot encoding,
training-only z-scores, and a block-aware stratified split.
"""

import numpy as np

from masktab import SynthConfig, generate, preprocess_raw, validate
from masktab.preprocess import encode_day_of_year, relative_humidity

cfg = SynthConfig(n_samples=150, n_sites=45, n_responses=8, weather_lag_days=20, seed=11)
raw = generate(cfg)
print(f"raw table: {raw.n_samples} samples, {len(raw.columns)} predictor columns, "
      f"{len(raw.response_names)} responses")
missing = np.isnan(raw.responses).mean(axis=0)
print("per-response missing fractions:", np.round(missing, 3))
print("every missing cell blanks a whole location-year block for that response\n")

print("== the scalar transforms, by hand ==")
s, c = encode_day_of_year(213)
print(f"harvest day 213 -> (sin {s:.4f}, cos {c:.4f}); "
      f"days 365 and 1 stay adjacent on the circle")
print(f"relative humidity at T=20C, dew point 10C: {relative_humidity(20, 10):.2f}%\n")

ds, split, report = preprocess_raw(raw, test_fraction=0.2, val_fraction_of_train=0.2, seed=0)
print("== encoded dataset ==")
print(f"X: {ds.n_samples} x {ds.n_features}; responses: {ds.n_responses}; "
      f"distinct blocks: {len(set(ds.blocks))}")
print(f"dropped columns: {report.columns_dropped or 'none'}")
print(f"imputed cells per column: {report.imputation_counts or 'none'}")
some_col = next(iter(report.normalisation_stats))
mean, std = report.normalisation_stats[some_col]
print(f"z-score stats come from training rows only, e.g. {some_col}: "
      f"mean {mean:.3f}, sd {std:.3f}")
print(f"dataset invariant violations: {validate(ds) or 'none'}\n")

print("== block-aware split ==")
n = ds.n_samples
print(f"train {len(split.train_rows)} (val {len(split.val_rows)}) / test {len(split.test_rows)} "
      f"rows; realised test fraction {len(split.test_rows) / n:.3f}")
print(f"leakage violations: {split.violations(ds.blocks) or 'none'}")
for k in range(3):
    tr, te = split.train_rows, split.test_rows
    tro = ds.M[tr, k] == 1
    teo = ds.M[te, k] == 1
    if tro.any() and teo.any():
        print(f"  {ds.response_names[k]}: train positive rate "
              f"{ds.Y_bin[tr, k][tro].mean():.2f} vs test {ds.Y_bin[te, k][teo].mean():.2f}")
