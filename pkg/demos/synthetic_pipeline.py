"""
Fitting a hierarchy to a synthetic return panel
===============================================

End-to-end rehearsal of the empirical pipeline on data whose ground truth
is known: simulate a panel of returns driven by a two-level Wishart
covariance chain, then ask the fitting machinery to recover the class,
the depth, and the shape parameter.

Run:  python3 demos/synthetic_pipeline.py   (takes ~1 minute)
"""

import numpy as np

from htheory import ChainSpec, ReturnsMatrix, run_fit, synthetic_return_series

############################################################################
# Ground truth: 16 assets, two Wishart levels with beta = 6 each, 3000
# observations.  Levels are redrawn on separated time scales, which is what
# lets a windowed variance estimator see the mixture.

rng = np.random.default_rng(42)
p, t_len = 16, 3000
spec = ChainSpec(model_class="wishart", beta=(6.0, 6.0), sigma0=np.eye(p))
series = synthetic_return_series(spec, t_len, rng=rng)
print(f"panel: {p} assets x {t_len} steps, "
      f"sample kurtosis {float(np.mean(series**4) / np.mean(series**2) ** 2):.2f}")

############################################################################
# The pipeline: normalize each asset, whiten cross-correlations, pool the
# components into one long series, pick the variance-estimation window per
# asset by KL scan, histogram the windowed variance, and fit both model
# classes at every depth up to n_max.

outcome = run_fit(ReturnsMatrix(values=series.T), n_max=3)
report = outcome.report

print(f"\npooled series length : {report.series_length}")
print(f"mean optimal window  : {report.window_mean:.1f} steps")

############################################################################
# The fit table: KL divergence between the empirical background histogram
# and each candidate model.  The selected row (smallest depth once the KL
# profile flattens) is starred.

print()
print(report.render_table())

sel_class, sel_n = report.selected_class, report.selected_n
best = report.best()
print(f"\nground truth  : wishart, N=2, beta=6")
print(f"recovered     : {sel_class}, N={sel_n}, beta={best.beta:.2f}")

############################################################################
# Closing the loop: compound the fitted background mixture with a Gaussian
# and compare against the histogram of the pooled returns themselves.  A
# small divergence means the variance decomposition is self-consistent.

print(f"\nrecovered-return KL: {outcome.recovered.value:.5f} "
      f"(< 0.005 is a good fit)")

############################################################################
# The same flow is available from the command line:
#
#   htheory simulate --kind panel --class wishart --levels 2 --beta 6 \
#       --assets 16 --steps 3000 --seed 42 --output panel.csv
#   htheory fit --input panel.csv --max-levels 3 --output report.json
#   htheory report --input report.json
