import numpy as np
import pytest

from replaybench.dataset import (Dataset, FeatureSpec, InteractionRecord,
                                 SchemaConfig, split_train_test)


def basic_schema(vector_dim=0, categorical=False):
    context = [FeatureSpec(name="price", kind="numeric")]
    if categorical:
        context.append(FeatureSpec(name="device", kind="categorical"))
    if vector_dim:
        context.append(FeatureSpec(name="ctx", kind="vector", dim=vector_dim))
    return SchemaConfig(
        timestamp_col="ts", user_col="user", session_col="session",
        action_col="item", success_col="clicked",
        candidates_col="impressions", propensity_col="prop",
        context=context, sensitive_attributes=["device"])


def make_record(ts, user, shown, candidates, success=True, price=1.0,
                device="mobile", ctx=None, propensity=None):
    feats = {"price": price, "device": device}
    if ctx is not None:
        feats["ctx"] = tuple(ctx)
    return InteractionRecord(
        timestamp=ts, user_id=user, session_id=f"s{user}",
        context_features=feats, shown_action=shown,
        candidate_actions=tuple(candidates), success=success,
        logged_propensity=propensity)


def make_dataset(n=50, k=4, seed=0, success_rate=1.0, vector_dim=0,
                 split=None, uniform_propensity=False):
    """Synthetic log: k items always in the impression list, the clicked
    item drawn uniformly."""
    rng = np.random.default_rng(seed)
    items = [f"item{i}" for i in range(k)]
    records = []
    for t in range(n):
        shown = items[rng.integers(k)]
        ctx = rng.standard_normal(vector_dim) if vector_dim else None
        records.append(make_record(
            ts=t, user=f"u{rng.integers(10)}", shown=shown, candidates=items,
            success=bool(rng.random() < success_rate),
            price=float(rng.normal(100, 20)),
            device=rng.choice(["mobile", "desktop"]),
            ctx=ctx,
            propensity=1.0 / k if uniform_propensity else None))
    schema = basic_schema(vector_dim=vector_dim, categorical=True)
    ds = Dataset(records, schema,
                 item_catalog={i: {"stars": str(n % 5)} for n, i in enumerate(items)})
    for rec in records:
        ds.user_catalog.setdefault(rec.user_id, {"device_pref": "any"})
    if split:
        ds = split_train_test(ds, policy=split, test_fraction=0.2, seed=seed)
    return ds


@pytest.fixture
def small_dataset():
    return make_dataset(n=40, k=4, seed=1)
