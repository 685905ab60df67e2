"""Closed-form transfer and storage predictions, checked against the ledger."""

import pytest

from gdml import comm as gc, costmodel, data, fadl, harness
from gdml.errors import ConfigError

GB = 1e9
TB = 1e12


def _inputs(**kw):
    base = dict(n_examples=1000, shard_sizes=(500, 500), dim=100, avg_nnz=10,
                t_outer=7)
    base.update(kw)
    return costmodel.CostInputs(**base)


def test_inputs_validation():
    with pytest.raises(ConfigError):
        _inputs(shard_sizes=(400, 500))
    with pytest.raises(ConfigError):
        _inputs(compression_ratio=0.0)
    with pytest.raises(ConfigError):
        _inputs(t_outer=-1)


def test_tc_single_dc_zero():
    assert costmodel.predict_tc(_inputs(shard_sizes=(1000,))) == 0.0


def test_tc_arithmetic():
    # largest shard 400 of 1000 examples stays put; 600 remote examples
    # at 50 nonzeros and 8 bytes each cross the wide-area link
    inputs = _inputs(n_examples=1000, shard_sizes=(400, 300, 300), avg_nnz=50)
    assert costmodel.predict_tc(inputs) == 600 * 50 * 8


def test_tc_dataset_bytes_override():
    inputs = _inputs(dataset_bytes=8000)
    assert costmodel.predict_tc(inputs) == 8000 * 0.5


def test_870gb_reproduction():
    # compressed 1.7 TB dataset split evenly across 2 DCs: the remote half
    inputs = costmodel.CostInputs(
        n_examples=2, shard_sizes=(1, 1), dim=10**8, avg_nnz=1, t_outer=7,
        dataset_bytes=int(1.7 * TB))
    tc = costmodel.predict_tc(inputs)
    assert tc == pytest.approx(850 * GB, rel=1e-6)
    assert abs(tc - 870 * GB) / (870 * GB) <= 0.03


def test_td_paper_mode_arithmetic():
    assert costmodel.predict_td(_inputs(t_outer=0)) == 0
    inputs = _inputs(dim=1000, t_outer=7)  # P=2
    assert costmodel.predict_td(inputs) == 2 * 2 * 1000 * 7 * 4


def test_td_9gb_reproduction():
    # 100M-float model, 2 DCs, a handful of outer iterations: about 9 GB
    for t in (5, 6):
        inputs = costmodel.CostInputs(
            n_examples=2, shard_sizes=(1, 1), dim=10**8, avg_nnz=1, t_outer=t)
        td = costmodel.predict_td(inputs)
        assert abs(td - 9 * GB) / (9 * GB) <= 0.20


def test_td_unknown_mode():
    with pytest.raises(ConfigError):
        costmodel.predict_td(_inputs(), mode="approximate")


def test_td_exact_mode_matches_ledger_byte_for_byte():
    examples = harness.synth_dataset(500, 16, 4, 0.05, seed=41)
    shards = data.partition(examples, 2, "random-uniform", seed=42)
    top = gc.Topology(P=2, slaves_per_dc=(2, 2))
    cfg = fadl.FadlConfig(max_outer=40)
    _, report = fadl.fadl_train(shards, top, cfg, dim=16)
    inputs = costmodel.CostInputs(
        n_examples=500, shard_sizes=tuple(s.n_p for s in shards), dim=16,
        avg_nnz=data.avg_sparsity(examples), t_outer=report.t_outer)
    predicted = costmodel.predict_td(inputs, mode="exact",
                                     xdc_edges=top.gcg_xdc_edges(),
                                     ls_trials=report.ls_trials)
    assert predicted == report.ledger.xdc_bytes


def test_crossover_directions():
    # huge N, tiny model: shipping data loses
    big_n = _inputs(n_examples=10**7, shard_sizes=(5 * 10**6, 5 * 10**6),
                    dim=100, avg_nnz=100)
    assert costmodel.crossover(big_n).favors == "distributed"
    # tiny dataset, huge model: shipping data wins
    big_d = _inputs(n_examples=100, shard_sizes=(50, 50), dim=10**6, avg_nnz=5)
    assert costmodel.crossover(big_d).favors == "centralized"


def test_crossover_margin_is_ratio():
    inputs = _inputs(dim=1000, avg_nnz=100)
    res = costmodel.crossover(inputs)
    assert res.margin == pytest.approx(res.tc_bytes / res.td_bytes)


def test_crossover_large_sparse_config():
    # wide-but-sparse click-log shape: millions of examples, 5M-dim model
    inputs = costmodel.CostInputs(
        n_examples=4 * 10**9, shard_sizes=(2 * 10**9, 2 * 10**9),
        dim=5 * 10**6, avg_nnz=90, t_outer=7)
    res = costmodel.crossover(inputs)
    assert res.favors == "distributed"
    assert res.margin > 1000  # beyond three orders of magnitude


def test_storage_multipliers():
    assert costmodel.storage_report([1], "centralized-bulk").multiplier == 1.0
    assert costmodel.storage_report([500, 500], "centralized-stream").multiplier \
        == pytest.approx(1.5)
    even8 = [125] * 8
    assert costmodel.storage_report(even8, "centralized-bulk").multiplier \
        == pytest.approx(1.875)
    assert costmodel.storage_report([500, 500], "distributed").multiplier == 1.0
    assert costmodel.storage_report([500, 500], "distributed-fadl").multiplier == 1.0


def test_storage_per_dc_breakdown():
    rep = costmodel.storage_report([300, 700], "centralized-stream",
                                   avg_nnz=10, bytes_per_nonzero=8)
    total_data = (300 + 700) * 10 * 8
    assert rep.per_dc_bytes == (300 * 10 * 8, total_data)
    assert rep.total_bytes == 300 * 10 * 8 + total_data
    with pytest.raises(ConfigError):
        costmodel.storage_report([0], "distributed")


def test_monotonicity():
    base = _inputs(dim=1000, t_outer=7)
    assert costmodel.predict_td(_inputs(dim=2000, t_outer=7)) \
        > costmodel.predict_td(base)
    assert costmodel.predict_td(_inputs(dim=1000, t_outer=8)) \
        > costmodel.predict_td(base)
    assert costmodel.predict_td(_inputs(n_examples=1500, shard_sizes=(500,) * 3,
                                        dim=1000, t_outer=7)) \
        > costmodel.predict_td(base)
    assert costmodel.predict_tc(_inputs(avg_nnz=20)) \
        > costmodel.predict_tc(_inputs(avg_nnz=10))
    assert costmodel.predict_tc(_inputs(shard_sizes=(300, 700))) \
        < costmodel.predict_tc(base)
