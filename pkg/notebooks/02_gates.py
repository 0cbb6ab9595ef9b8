# %% [markdown]
# # Gate curves
#
# Each hidden layer of the default tower borrows from the rejection tower
# through a scalar gate driven by the rejection probability. This walks
# through reading those gates off a fitted model.

# %%
import numpy as np

from rmtnet import (
    ModelConfig,
    assign_splits,
    compose_multi_policy,
    fit,
    fit_discretizer,
    gate_curve,
    make_credit_table,
)
from rmtnet.data import split_equal

# %% [markdown]
# Two policies with different strengths, each owning half of the rows.

# %%
table = make_credit_table(8000, 10, seed=1, base_rate=0.3, signal=1.5)
halves = split_equal(table, 2, seed=1)
ds = compose_multi_policy([(halves[0], 1.0, 1001), (halves[1], 0.5, 1002)])
ds = assign_splits(ds, seed=1)
ds = ds.discretize(fit_discretizer(ds.x, 8))

# %%
model = fit(ds, ModelConfig(t=3, eta=0.3, batch_size=128, epochs=200, seed=1), kind="rmtnetpp")
alpha, beta = model.gate_params()
print("alpha", np.round(alpha, 3))
print("beta ", np.round(beta, 3))

# %% [markdown]
# A positive alpha means the gate opens wider as the rejection
# probability grows. The curve is monotone, so its sign is all that
# matters for the direction.

# %%
curve = gate_curve(model, grid_size=11)
for m in range(curve.g.shape[0]):
    for j in range(curve.g.shape[1]):
        print(f"policy {m + 1} layer {j + 1}:", np.round(curve.g[m, j], 3))

# %%
print(curve.to_csv().splitlines()[0])
