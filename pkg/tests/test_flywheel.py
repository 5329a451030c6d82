from dataclasses import replace

import pytest

from navflywheel.flywheel import (
    GEN_METRICS,
    DataConfig,
    EvalItem,
    FlywheelConfig,
    FlywheelError,
    check_split_hygiene,
    evaluate_round,
    make_desk_data,
    mean_text_scores,
    run_flywheel,
    run_round,
)
from navflywheel.nav_metrics import mean_scores, score_episode
from navflywheel.navigator import NavTrainConfig
from navflywheel.scoring import FilterThresholds, ids

SMALL = DataConfig(train_worlds=4, eval_worlds=2, seed_size=80, traj_size=100, eval_trajs_per_world=5)
FAST = FlywheelConfig(rounds=3, nav_train=NavTrainConfig(pretrain_epochs=20, finetune_epochs=5))


@pytest.fixture(scope="module")
def desk():
    return make_desk_data(SMALL, 3)


@pytest.fixture(scope="module")
def three_rounds(desk):
    state = None
    states, reports = [], []
    for _ in range(3):
        state, report = run_round(state, FAST, desk.seed_pairs, desk.traj_pool, desk.envs, desk.eval_items)
        states.append(state)
        reports.append(report)
    return states, reports


def test_desk_data_shapes(desk):
    assert len(desk.seed_pairs) == 80 and len(desk.traj_pool) == 100
    assert len(desk.eval_items) == 10
    assert all(len(it.refs) == 3 for it in desk.eval_items)
    train = {p.env_id for p in desk.seed_pairs} | {t.env_id for t in desk.traj_pool}
    assert all(desk.envs[e].split == "train" for e in train)
    assert all(desk.envs[it.traj.env_id].split == "val_unseen" for it in desk.eval_items)


def test_bootstrap_pool_size(three_rounds):
    states, _ = three_rounds
    assert len(states[0].pools["D_N_t"]) == 100 * 6


def test_pool_size_is_conserved(three_rounds):
    states, _ = three_rounds
    assert {len(s.pools["D_N_t"]) for s in states} == {600}


def test_navigator_filter_partitions_each_round(three_rounds):
    for s in three_rounds[0]:
        kept, rejected, nd = s.pools["FND_N_t"], s.pools["LD_N_next"], s.pools["ND_N_t"]
        assert len(kept) + len(rejected) == len(nd)
        assert ids(kept) | ids(rejected) == ids(nd)


def test_filtered_navigation_data_accumulates(three_rounds):
    below = [ids(s.pools["FD_N_below_next"]) for s in three_rounds[0]]
    assert below[0] <= below[1] <= below[2]


def test_generator_data_is_filtered_greedy_data(three_rounds):
    for s in three_rounds[0]:
        assert ids(s.pools["FD_G_next"]) <= ids(s.pools["D_G_next"])
        assert len(s.pools["D_G_next"]) == 100
        assert all(p.scores.nav.spl == 1.0 for p in s.pools["FD_G_next"])


def test_rejected_instructions_are_regenerated_in_place(three_rounds):
    first, second = three_rounds[0][:2]
    rejected = {p.pair_id.rsplit("r", 1)[0]: p.traj.traj_id for p in first.pools["LD_N_next"]}
    fresh = {p.pair_id.rsplit("r", 1)[0]: p.traj.traj_id for p in second.pools["ND_N_t"]}
    assert fresh == rejected
    assert all(p.provenance.round == 2 for p in second.pools["ND_N_t"])


def test_models_are_versioned(three_rounds):
    for t, s in enumerate(three_rounds[0], start=1):
        assert s.t == t and s.N.version == t and s.G.version == t


def test_rounds_are_deterministic(desk, three_rounds):
    state, report = run_round(None, FAST, desk.seed_pairs, desk.traj_pool, desk.envs, desk.eval_items)
    ref_state, ref_report = three_rounds[0][0], three_rounds[1][0]
    assert report == ref_report
    assert state.N == ref_state.N and state.G == ref_state.G


def test_one_round_is_the_bootstrap(desk, three_rounds):
    state, reports = run_flywheel(desk.seed_pairs, desk.traj_pool, replace(FAST, rounds=1), desk.envs, desk.eval_items)
    assert [r.label for r in reports] == ["baseline", "1"]
    assert reports[1] == three_rounds[1][0]
    assert state.N == three_rounds[0][0].N


def test_reports_lie_in_range(three_rounds):
    for r in three_rounds[1]:
        assert 0.0 <= r.nav["spl"] <= r.nav["sr"] <= r.nav["osr"] <= 1.0
        assert r.nav["ne"] >= 0.0
        for k in GEN_METRICS:
            assert r.gen[k] >= 0.0
        assert r.gen["prop_f1"] <= 1.0 and r.gen["rouge_l"] <= 1.0


def test_perfect_models_score_perfectly(desk):
    env_of = desk.envs
    nav = mean_scores([score_episode(env_of[it.traj.env_id], it.traj, it.traj) for it in desk.eval_items])
    assert nav["sr"] == nav["spl"] == nav["osr"] == 1.0 and nav["ne"] == 0.0
    gen = mean_text_scores([it.refs[0] for it in desk.eval_items], [it.refs for it in desk.eval_items])
    assert gen["prop_f1"] == gen["prop_f1_dir"] == 1.0


def test_split_hygiene_is_enforced(desk):
    leaked = [EvalItem(desk.seed_pairs[0].traj, (desk.seed_pairs[0].instr,))]
    with pytest.raises(FlywheelError):
        check_split_hygiene(desk.seed_pairs, desk.traj_pool, leaked)
    with pytest.raises(FlywheelError):
        run_flywheel(desk.seed_pairs, desk.traj_pool, FAST, desk.envs, leaked)


def test_empty_generator_filter_stops_the_run(desk, three_rounds):
    state = three_rounds[0][0]
    starved = replace(state, pools={**state.pools, "FD_G_next": []})
    with pytest.raises(FlywheelError, match="generator filter kept no pair"):
        run_round(starved, FAST, desk.seed_pairs, desk.traj_pool, desk.envs)


def test_missing_inputs_fail(desk):
    with pytest.raises(FlywheelError):
        run_round(None, FAST, [], desk.traj_pool, desk.envs)
    with pytest.raises(ValueError):
        evaluate_round(None, None, [], desk.envs)


def test_config_validation():
    with pytest.raises(ValueError):
        FlywheelConfig(rounds=0)
    with pytest.raises(ValueError):
        FlywheelConfig(k_sample=0)
    assert FlywheelConfig().thresholds == FilterThresholds(1.0, 0.9)


def test_post_pass_adds_a_generator_row(desk):
    cfg = replace(FAST, rounds=1, generator_post_pass=True)
    _, reports = run_flywheel(desk.seed_pairs, desk.traj_pool, cfg, desk.envs, desk.eval_items, baseline=False)
    assert [r.label for r in reports] == ["1", "1+ft"]
    assert reports[1].nav == reports[0].nav
