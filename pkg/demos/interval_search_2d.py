"""Tuning the guidance interval on the 2-D toy.

The sampler here uses a leaky model: each class conditional puts 20% of its
mass on the other class, so unguided samples of class B land partly on A and
guidance has something to fix.  The search first scans where guidance should
start (sigma_hi, with sigma_lo = 0), then where it should stop.  The result is
compared with guiding the whole schedule at the same weight.

    python demos/interval_search_2d.py
"""

from guidance_interval.sampler import constant_guidance, guidance_from_indices, no_guidance
from guidance_interval.search import evaluate_guidance, two_phase_search
from guidance_interval.toys import toy_2d_problem

W, N = 3.0, 4000
prob = toy_2d_problem()
sig = prob.schedule.sigmas

res = two_phase_search(prob, W, "frechet", n=N, hi_candidates=range(8, 28))
print("phase 1: guidance starts at step i (sigma_hi), runs to the end")
for i, v in sorted(res.phase1.items()):
    print(f"  i={i:2d} sigma_hi={sig[i]:7.3f}  frechet={v:.4f}")
print("phase 2: guidance stops before step j (sigma_lo)")
for j, v in sorted(res.phase2.items()):
    print(f"  j={j:2d} frechet={v:.4f}")
print(f"chosen steps [{res.hi_index}, {res.lo_index}): sigma in ({res.sigma_lo:.4f}, {res.sigma_hi:.3f}], "
      f"{res.evaluations} evaluations")

print(f"\n{'setup':22s} {'frechet':>8s} {'precision':>9s} {'recall':>7s}")
for name, g in (("no guidance", no_guidance(prob.schedule)),
                (f"w={W} everywhere", constant_guidance(prob.schedule, W)),
                (f"w={W} on interval", guidance_from_indices(prob.schedule, W, res.hi_index, res.lo_index))):
    v = evaluate_guidance(prob, g, N, 1, ["frechet", "pr"])
    print(f"{name:22s} {v['frechet']:8.4f} {v['precision']:9.3f} {v['recall']:7.3f}")
