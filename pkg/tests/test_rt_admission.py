from __future__ import annotations

import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_node, make_rt_job
from mcfog.model import Criticality
from mcfog.rt_admission import (
    DuplicateJob,
    Infeasible,
    ResolvedTask,
    RtAdmissionControl,
    UnknownJob,
    WcetUnavailable,
    derive_server,
    inner_schedulable,
    linear_supply_bound,
    resolve_task_set,
    supply_bound,
)
from mcfog.rt_admission import testing_points as demand_step_points
from mcfog.server_sim import deadline_misses, simulate_server
from oracles import tick_simulate_server, worst_fit_core


def rt(name, wcet, period, priority=None):
    return ResolvedTask(name=name, wcet=wcet, period=period, priority=priority)


class TestDeriveServer:
    def test_canonical_single_task(self):
        # 1.9 ms runtime over a 10 ms period
        q, t_s = derive_server([rt("t", 1900, 10_000)])
        assert (q, t_s) == (1900, 10_000)
        assert Fraction(q, t_s) == Fraction(19, 100)

    def test_two_tasks_sum_utilization(self):
        q, t_s = derive_server([rt("a", 1000, 10_000), rt("b", 2000, 20_000)])
        assert (q, t_s) == (2000, 10_000)
        assert Fraction(q, t_s) == Fraction(1, 5)

    def test_saturated_task(self):
        q, t_s = derive_server([rt("t", 10_000, 10_000)])
        assert (q, t_s) == (10_000, 10_000)

    def test_overutilized_infeasible(self):
        with pytest.raises(Infeasible):
            derive_server([rt("a", 6000, 10_000), rt("b", 5000, 10_000)])

    def test_budget_rounds_up(self):
        q, t_s = derive_server([rt("a", 1, 3), rt("b", 1, 7)])
        # U = 1/3 + 1/7 = 10/21; Q = ceil(3 * 10/21) = ceil(10/7) = 2
        assert (q, t_s) == (2, 3)


class TestSupplyBounds:
    def test_blackout_then_staircase(self):
        assert supply_bound(2000, 5000, 3000) == 0
        assert supply_bound(2000, 5000, 3500) == 500
        assert supply_bound(2000, 5000, 5000) == 2000
        assert supply_bound(2000, 5000, 8000) == 2000
        assert supply_bound(2000, 5000, 10_000) == 4000

    def test_linear_bound_properties(self):
        q, t_s = 2000, 5000
        # zero exactly at twice the blackout, non-decreasing after
        assert linear_supply_bound(q, t_s, 2 * (t_s - q)) == 0
        previous = Fraction(0)
        for t in range(0, 50_000, 250):
            value = linear_supply_bound(q, t_s, t)
            assert value >= previous
            previous = value

    @given(
        st.integers(1, 200),
        st.integers(1, 200),
        st.integers(0, 4000),
    )
    def test_staircase_dominates_linear(self, q, span, t):
        t_s = q + span
        assert supply_bound(q, t_s, t) >= linear_supply_bound(q, t_s, t)

    @given(st.integers(1, 100), st.integers(0, 100), st.integers(0, 2000))
    def test_staircase_non_decreasing(self, q, span, t):
        t_s = q + span if span else q
        assert supply_bound(q, t_s, t + 1) >= supply_bound(q, t_s, t)


class TestInnerSchedulable:
    def test_single_task_under_roomy_server(self):
        assert inner_schedulable([rt("t", 1000, 10_000)], q=2000, t_s=5000)

    def test_saturating_task_under_deficient_server(self):
        # demand 1000 by t=1000, but the server can supply at most 999
        assert not inner_schedulable([rt("t", 1000, 1000)], q=999, t_s=1000)

    def test_empty_task_set_vacuously_true(self):
        assert inner_schedulable([], q=1, t_s=10)

    def test_canonical_task_under_derived_server(self):
        tasks = [rt("t", 1900, 10_000)]
        q, t_s = derive_server(tasks)
        assert inner_schedulable(tasks, q, t_s)

    def test_testing_points_are_period_multiples(self):
        low = rt("low", 100, 12_000)
        hp = [rt("a", 10, 3000), rt("b", 10, 5000)]
        points = demand_step_points(low, hp)
        assert points == [3000, 5000, 6000, 9000, 10_000, 12_000]

    def test_interference_accounted(self):
        # combined demand 0.875 cannot fit a 0.75 server
        tasks = [rt("hp", 1000, 2000), rt("low", 1500, 4000)]
        assert not inner_schedulable(tasks, q=1500, t_s=2000)
        # the hp task alone does fit
        assert inner_schedulable([tasks[0]], q=1500, t_s=2000)


def random_task_set(rng, n_tasks=None, total_util=None):
    periods_ms = [5, 10, 20, 50]
    n = n_tasks or rng.randint(1, 5)
    total = total_util if total_util is not None else rng.uniform(0.05, 0.9)
    # UUniFast split of the utilization across tasks
    utils, remaining = [], total
    for i in range(n - 1):
        next_remaining = remaining * rng.random() ** (1.0 / (n - i - 1))
        utils.append(remaining - next_remaining)
        remaining = next_remaining
    utils.append(remaining)
    tasks = []
    for i, u in enumerate(utils):
        period = rng.choice(periods_ms) * 1000
        wcet = max(1, int(u * period))
        tasks.append(rt(f"t{i}", wcet, period))
    return tasks


class TestAdmissionSoundness:
    """Accepted task sets must survive exact deferrable-server execution."""

    def test_admitted_sets_never_miss(self):
        rng = random.Random(42)
        admitted = 0
        for _ in range(300):
            tasks = random_task_set(rng)
            try:
                q, t_s = derive_server(tasks)
            except Infeasible:
                continue
            if not inner_schedulable(tasks, q, t_s):
                continue
            admitted += 1
            activations = simulate_server(tasks, q, t_s)
            assert deadline_misses(activations) == []
        assert admitted > 50  # the test must not be vacuous

    def test_event_sim_matches_tick_sim(self):
        rng = random.Random(7)
        for _ in range(40):
            tasks = random_task_set(rng, n_tasks=rng.randint(1, 3))
            # shrink to keep the literal tick loop fast
            tasks = [rt(t.name, max(1, t.wcet // 100), t.period // 100) for t in tasks]
            try:
                q, t_s = derive_server(tasks)
            except Infeasible:
                continue
            activations = simulate_server(tasks, q, t_s)
            event_misses = {(a.task, a.release) for a in deadline_misses(activations)}
            ordered = sorted(tasks, key=lambda t: (t.period, t.name))
            tick_misses = tick_simulate_server(
                [(t.name, t.wcet, t.period) for t in ordered],
                q,
                t_s,
                horizon=max(simulate_server(tasks, q, t_s)[-1].deadline, t_s),
            )
            assert event_misses == tick_misses

    def test_rejected_saturating_server_does_miss(self):
        tasks = [rt("t", 1000, 1000)]
        activations = simulate_server(tasks, budget=999, period=1000, horizon=5000)
        assert deadline_misses(activations)


class TestAdmissionControl:
    def test_worst_fit_placement(self):
        node = make_node(cores=2)
        ctl = RtAdmissionControl(node)
        # preload core 0 with half utilization, core 1 with a fifth
        ctl.cores[0].servers["x"] = ctl.cores[0].servers.get("x") or _server("x", 0, 5000, 10_000)
        ctl.cores[1].servers["y"] = _server("y", 1, 2000, 10_000)
        job = make_rt_job(name="new", tasks=(("t", 1900, 10_000),))
        response = ctl.admit(job)
        assert response.schedulable
        assert response.allocated.core == 1
        assert response.per_core_utilization == (Fraction(1, 2), Fraction(39, 100))

    def test_full_cores_reject(self):
        node = make_node(cores=2)
        ctl = RtAdmissionControl(node)
        ctl.cores[0].servers["x"] = _server("x", 0, 10_000, 10_000)
        ctl.cores[1].servers["y"] = _server("y", 1, 10_000, 10_000)
        response = ctl.admit(make_rt_job(name="new", tasks=(("t", 100, 10_000),)))
        assert not response.schedulable
        assert response.per_core_utilization == (Fraction(1), Fraction(1))

    def test_canonical_job_on_idle_node(self, node):
        ctl = RtAdmissionControl(node)
        response = ctl.admit(make_rt_job())
        assert response.schedulable
        assert response.allocated.core == 0
        assert response.allocated.budget == 1900
        assert response.allocated.period == 10_000

    def test_admit_then_release_restores_exactly(self, node):
        ctl = RtAdmissionControl(node)
        before = ctl.utilizations()
        ctl.admit(make_rt_job())
        ctl.release("rt-job")
        assert ctl.utilizations() == before

    def test_release_unknown_job(self, node):
        ctl = RtAdmissionControl(node)
        with pytest.raises(UnknownJob):
            ctl.release("ghost")

    def test_duplicate_admit_rejected(self, node):
        ctl = RtAdmissionControl(node)
        ctl.admit(make_rt_job())
        with pytest.raises(DuplicateJob):
            ctl.admit(make_rt_job())

    def test_wcet_unavailable_for_uncovered_platform(self):
        node = make_node(platform="armv8-a53")
        ctl = RtAdmissionControl(node)
        with pytest.raises(WcetUnavailable):
            ctl.admit(make_rt_job(platform="x86-i5"))

    def test_check_is_side_effect_free(self, node):
        ctl = RtAdmissionControl(node)
        before = ctl.utilizations()
        response = ctl.check(make_rt_job())
        assert response.schedulable
        assert ctl.utilizations() == before

    def test_interleaved_admits_and_releases(self):
        rng = random.Random(11)
        node = make_node(cores=4)
        ctl = RtAdmissionControl(node)
        held: dict[str, Fraction] = {}
        for i in range(100):
            if held and rng.random() < 0.4:
                victim = rng.choice(sorted(held))
                ctl.release(victim)
                del held[victim]
            else:
                tasks = random_task_set(rng, total_util=rng.uniform(0.05, 0.4))
                job = make_rt_job(
                    name=f"job{i}",
                    tasks=tuple((t.name, t.wcet, t.period) for t in tasks),
                )
                response = ctl.admit(job)
                if response.schedulable:
                    held[job.name] = response.allocated.utilization
            total = sum(ctl.utilizations(), Fraction(0))
            assert total == sum(held.values(), Fraction(0))
            assert all(u <= 1 for u in ctl.utilizations())

    def test_worst_fit_matches_enumeration_oracle(self):
        rng = random.Random(3)
        for _ in range(50):
            cores = rng.randint(1, 6)
            node = make_node(cores=cores)
            ctl = RtAdmissionControl(node)
            utils = []
            for c in range(cores):
                u = Fraction(rng.randint(0, 50), 100)
                utils.append(u)
                if u:
                    ctl.cores[c].servers[f"pre{c}"] = _server(f"pre{c}", c, u.numerator, u.denominator * 1 or 1)
            # rebuild with exact numerator/denominator µs values
            for c in range(cores):
                ctl.cores[c].servers.clear()
                if utils[c]:
                    budget = utils[c].numerator * 100
                    period = utils[c].denominator * 100
                    ctl.cores[c].servers[f"pre{c}"] = _server(f"pre{c}", c, budget, period)
            response = ctl.check(make_rt_job(name="probe", tasks=(("t", 100, 10_000),)))
            if response.schedulable:
                assert response.allocated.core == worst_fit_core(utils)


def _server(job, core, budget, period):
    from mcfog.rt_admission import Server

    return Server(job=job, core=core, budget=budget, period=period)


class TestResolveTaskSet:
    def test_baseline_rescale_applied(self):
        node = make_node(speed_factor=Fraction(5, 2))
        job = make_rt_job(criticality=Criticality.LOW, tasks=(("t", 1000, 10_000),))
        resolved = resolve_task_set(job, node)
        assert resolved[0].wcet == 2500

    def test_missing_platform_raises(self):
        node = make_node(platform="riscv")
        with pytest.raises(WcetUnavailable):
            resolve_task_set(make_rt_job(), node)
