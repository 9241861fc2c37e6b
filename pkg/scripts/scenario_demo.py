"""Simulate a Scenario I dataset, fit one joint model, print a few dynamic predictions."""
import argparse

from jmsl.core import interval_event_count
from jmsl.dynpred import PredictionRequest, dynamic_risk
from jmsl.jointmodel import JointModelSpec, MCMCConfig, fit_mcmc
from jmsl.simulate import ScenarioSpec, censoring_rate, simulate_dataset


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=300)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--iterations", type=int, default=2000)
    args = ap.parse_args(argv)

    data, truth = simulate_dataset(ScenarioSpec.standard("I", args.n), seed=args.seed)
    print(f"{len(data)} subjects, censoring rate {censoring_rate(data):.3f}")
    for t in (16.0, 19.0):
        print(f"  events in ({t:g},{t + 2:g}]: {interval_event_count(data, t, 2.0)}")

    post = fit_mcmc(JointModelSpec(), data, MCMCConfig(args.iterations, args.iterations // 2, 5, seed=args.seed))
    print("posterior means: beta", post.mean("beta").round(3), "alpha", post.mean("alpha").round(3),
          "sigma", round(float(post.mean("sigma")), 3))

    at_risk = [(r, tr) for r, tr in zip(data, truth) if r.obs_time > 16.0][:5]
    for rec, tr in at_risk:
        res = dynamic_risk(post, PredictionRequest(rec, 16.0, (17.0, 18.0), mc_draws=100, seed=args.seed))
        print(f"  subject {rec.id} ({tr.cell}): pi(18|16) = {res.risk[1]:.3f} +/- {res.se[1]:.3f}")


if __name__ == "__main__":
    main()
