"""Compare the four sub-models with BIC and ICL on data drawn from the full model.

Run: python demos/02_model_selection.py
"""

from _truth import LAYOUT, TRUTH
from tilehmm.hmm import ModelSpec, fit, model_selection
from tilehmm.simulate import SimScenario, layout_from_runs, simulate

data = simulate(SimScenario(TRUTH, layout_from_runs(LAYOUT, 20_000), seed=2))
reports = [fit(data.series, ModelSpec.from_name(name)) for name in ("m1", "m2", "m3", "m4")]

print(f"{'model':6s}{'params':>8s}{'loglik':>14s}{'BIC':>14s}{'ICL':>14s}")
for r in reports:
    print(f"{r.spec.name:6s}{r.n_params:8d}{r.loglik:14.1f}{r.bic:14.1f}{r.icl:14.1f}")

ranking = model_selection(reports)
print(f"\nBIC ranking: {' < '.join(ranking['bic'])}")
print(f"ICL ranking: {' < '.join(ranking['icl'])}")
print("Dependence between neighbours and on annotation both pay for their extra parameters here.")
