# %% [markdown]
# # Mean-variance hedging with a defaultable asset
#
# Two regimes, two risky assets, and a payoff that changes at default.  The hedge
# target comes from a linear system solved next to the Riccati equation.

# %%
from __future__ import annotations

import numpy as np

from jumplq import reference as ref
from jumplq.hedging import hedge_value, hedging_error_simulation, o_grid, solve_hedge

market = ref.generic_market()
sol = solve_hedge(market)
print("h(0) per regime:", sol.h[:, 0])
print("min residual-risk density:", float(o_grid(sol, fine=True).min()))

# %% [markdown]
# The optimal value splits into an initial mismatch term, a term driven by
# regime switches, and the unhedgeable default risk.

# %%
v = hedge_value(sol, market.x0, market.i0, n_chains=20_000, seed=0)
print(f"v0 {v.v0:.5f}  mismatch {v.v_mismatch:.5f}  O {v.v_O:.5f}  total {v.v_total:.5f}")
mc = hedging_error_simulation(sol, 20_000, seed=1)
print(f"simulated hedging error {mc.mean:.5f} ± {mc.se:.5f}")

# %% [markdown]
# With a constant payoff and matching initial wealth there is nothing to hedge.

# %%
flat = solve_hedge(ref.constant_payoff_market(0.7))
print("constant payoff value:", hedge_value(flat, 0.7, 0, n_chains=100).v_total)
print("hedge target equals the payoff:", np.allclose(flat.h, 0.7))
