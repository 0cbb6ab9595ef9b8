# %% [markdown]
# # Quick start
#
# Build a biased credit dataset, fit the reject-aware network next to a
# plain approved-only MLP and compare them on the three test subsets.

# %%
import numpy as np

from rmtnet import (
    ModelConfig,
    assign_splits,
    evaluate_model,
    fit_discretizer,
    fit_model,
    generate_synthetic_rejection,
    make_credit_table,
)

# %% [markdown]
# Every applicant has a label. A logistic policy trained on a third of
# them rejects 75% of the rest, using only half of the features (eps=0.5).
# Labels of rejected rows stay in the dataset for evaluation but the
# learners never see them.

# %%
table = make_credit_table(8000, 10, seed=0, base_rate=0.3, signal=1.5)
ds, policy = generate_synthetic_rejection(table, 0.5, seed=0)
ds = assign_splits(ds, seed=0)
ds = ds.discretize(fit_discretizer(ds.x, 8))
print(ds.n, "rows,", int(ds.r.sum()), "rejected")

# %%
cfg = ModelConfig(batch_size=128, patience=10, epochs=200, seed=0)
models = {kind: fit_model(kind, ds, cfg) for kind in ("mlp", "rmtnet")}

# %%
for kind, model in models.items():
    res = evaluate_model(model, ds)
    print(kind, {k: round(v["ks"], 3) for k, v in res.items() if v["ks"] is not None})

# %% [markdown]
# The training log keeps the combined loss and both halves of it per epoch.

# %%
log = models["rmtnet"].log
print(len(log.epochs), "epochs, best", log.best_epoch)
print({k: round(v, 4) for k, v in log.epochs[-1].items()})
