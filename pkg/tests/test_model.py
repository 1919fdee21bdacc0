from __future__ import annotations

import math
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_batch_job, make_node, make_rt_job
from mcfog.model import (
    AdditionalResources,
    AssuranceLevel,
    BaselineWcet,
    BasicResources,
    BestEffortNetworkKind,
    BestEffortRequirement,
    Criticality,
    JobSpec,
    Network,
    NetworkRequirement,
    PerPlatformWcet,
    ReplicaPolicy,
    RtTask,
    TdmaNetworkKind,
    TdmaRequirement,
    WorkerNode,
    load_delay_matrix,
    resolve_wcet,
    validate_job,
)


class TestCriticality:
    def test_total_order(self):
        assert Criticality.NO < Criticality.LOW < Criticality.HI

    def test_parse_round_trip(self):
        for level in Criticality:
            assert Criticality.parse(str(level)) is level

    def test_parse_rejects_unknown(self):
        with pytest.raises(ValueError):
            Criticality.parse("MEDIUM")


class TestAssuranceLevel:
    def test_effective_is_exact_sum(self):
        a = AssuranceLevel(7, 5, -3)
        assert a.effective() == 9

    def test_gamma_clamped_to_zero_above(self):
        a = AssuranceLevel(3, 3)
        a.gamma = 5
        assert a.gamma == 0

    def test_gamma_clamped_at_full_disqualification(self):
        a = AssuranceLevel(3, 4)
        a.gamma = -100
        assert a.gamma == -7
        assert a.effective() == 0

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            AssuranceLevel(-1, 0)

    @given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(-(10**6), 0))
    def test_effective_sum_property(self, alpha, beta, gamma):
        a = AssuranceLevel(alpha, beta, gamma)
        assert a.effective() == alpha + beta + a.gamma
        assert -(alpha + beta) <= a.gamma <= 0


class TestValidateJob:
    def test_realtime_requires_low(self):
        job = JobSpec(
            name="j",
            criticality=Criticality.NO,
            realtime=True,
            tasks=(RtTask("t", 1000, BaselineWcet(100)),),
        )
        result = validate_job(job)
        assert any("at least LOW" in v for v in result.violations)

    def test_vacuous_job_ok(self):
        job = JobSpec(name="j", criticality=Criticality.NO, realtime=False)
        assert validate_job(job).ok

    def test_hi_requires_per_platform(self):
        job = JobSpec(
            name="j",
            criticality=Criticality.HI,
            realtime=True,
            tasks=(RtTask("t", 1000, BaselineWcet(100)),),
        )
        result = validate_job(job)
        assert any("per-platform" in v for v in result.violations)

    def test_realtime_needs_tasks(self):
        job = JobSpec(name="j", criticality=Criticality.LOW, realtime=True)
        assert not validate_job(job).ok

    def test_non_realtime_must_not_have_tasks(self):
        job = JobSpec(
            name="j",
            criticality=Criticality.LOW,
            realtime=False,
            tasks=(RtTask("t", 1000, BaselineWcet(100)),),
        )
        assert not validate_job(job).ok

    def test_wcet_exceeding_period_rejected(self):
        job = make_rt_job(tasks=(("t", 2000, 1000),), criticality=Criticality.LOW)
        result = validate_job(job)
        assert any("exceeds period" in v for v in result.violations)

    def test_tmr_needs_three_replicas(self):
        job = make_batch_job(
            deployment=ReplicaPolicy(2, Criticality.LOW, Criticality.NO, tmr=True)
        )
        assert any("TMR" in v for v in validate_job(job).violations)

    def test_backup_above_leader_rejected(self):
        job = make_batch_job(
            deployment=ReplicaPolicy(2, Criticality.NO, Criticality.LOW)
        )
        assert not validate_job(job).ok

    def test_bad_tdma_requirement(self):
        job = make_batch_job(
            network_requirements=(
                NetworkRequirement("net0", TdmaRequirement(slot_length=600, slot_period=500)),
            )
        )
        assert not validate_job(job).ok


class TestResolveWcet:
    def test_per_platform_lookup(self, node):
        task = RtTask("t", 10_000, PerPlatformWcet({"x86-i5": 1900}))
        assert resolve_wcet(task, node, Criticality.HI) == 1900

    def test_per_platform_missing(self, node):
        task = RtTask("t", 10_000, PerPlatformWcet({"armv8-a53": 4000}))
        assert resolve_wcet(task, node, Criticality.HI) is None

    def test_baseline_identity_factor(self, node):
        task = RtTask("t", 10_000, BaselineWcet(1000))
        assert resolve_wcet(task, node, Criticality.LOW) == 1000

    def test_baseline_rescaled(self):
        node = make_node(speed_factor=Fraction(5, 2))
        task = RtTask("t", 10_000, BaselineWcet(1000))
        assert resolve_wcet(task, node, Criticality.LOW) == 2500

    def test_baseline_rounds_up(self):
        node = make_node(speed_factor=Fraction(4, 3))
        task = RtTask("t", 10_000, BaselineWcet(1000))
        # 4000/3 = 1333.33..., ceiling keeps admission conservative
        assert resolve_wcet(task, node, Criticality.LOW) == 1334

    @given(st.integers(1, 10**6), st.fractions(min_value="1/100", max_value=100))
    def test_monotone_in_speed_factor(self, baseline, factor):
        task = RtTask("t", 10**9, BaselineWcet(baseline))
        slow = make_node(speed_factor=factor)
        slower = make_node(speed_factor=factor * 2)
        assert resolve_wcet(task, slower, Criticality.LOW) >= resolve_wcet(
            task, slow, Criticality.LOW
        )
        assert resolve_wcet(task, slow, Criticality.LOW) == math.ceil(baseline * factor)


class TestSerialization:
    def test_jobspec_round_trip(self):
        job = JobSpec(
            name="mixed",
            criticality=Criticality.HI,
            realtime=True,
            basic_request=BasicResources(Fraction(1, 3), 512, 1024),
            additional_request=AdditionalResources({"lidar": 1}, {"valve": 2}, gpu=1),
            network_requirements=(
                NetworkRequirement("tsn0", TdmaRequirement(100, 500)),
                NetworkRequirement("be0", BestEffortRequirement("sink", 2000, 128)),
            ),
            tasks=(
                RtTask("ctl", 10_000, PerPlatformWcet({"x86-i5": 1900, "armv8-a53": 3800})),
                RtTask("log", 50_000, PerPlatformWcet({"x86-i5": 500}), priority=3),
            ),
            deployment=ReplicaPolicy(3, Criticality.HI, Criticality.LOW, tmr=True),
        )
        assert JobSpec.from_json(job.to_json()) == job

    def test_worker_node_round_trip(self):
        node = make_node(
            cores=4,
            speed_factor=Fraction(5, 2),
            inventory=AdditionalResources({"cam": 2}, {}, gpu=1, fpga=1),
            networks=("tsn0", "be0"),
        )
        restored = WorkerNode.from_json(node.to_json())
        assert restored == node

    def test_network_round_trip(self):
        net = Network(
            id="tsn0",
            kind=TdmaNetworkKind(major_frame=10_000, tick=10),
            members=frozenset({"a", "b"}),
            delay={"a": {"b": 100}, "b": {"a": 100}},
            capacity={"a": {"b": 1000}},
        )
        restored = Network.from_json_obj(net.to_json_obj())
        assert restored.id == net.id
        assert restored.kind == net.kind
        assert restored.members == net.members
        assert restored.delay == net.delay
        assert restored.capacity == net.capacity

    def test_criticality_encoded_as_text(self):
        job = make_batch_job(criticality=Criticality.LOW)
        assert job.to_json_obj()["criticality"] == "LOW"

    def test_fraction_encoded_as_pair(self):
        res = BasicResources(Fraction(1, 3), 0, 0)
        obj = res.to_json_obj()
        assert obj["cpu_utilization"] == [1, 3]
        assert BasicResources.from_json_obj(obj) == res

    def test_integral_fraction_encoded_as_int(self):
        res = BasicResources(Fraction(2), 0, 0)
        assert res.to_json_obj()["cpu_utilization"] == 2


class TestNetwork:
    def test_self_delay_zero(self):
        net = Network(
            id="be0",
            kind=BestEffortNetworkKind(),
            members=frozenset({"a", "b"}),
        )
        assert net.delay_between("a", "a") == 0

    def test_missing_pair_is_unreachable(self):
        net = Network(id="be0", kind=BestEffortNetworkKind(), members=frozenset({"a", "b"}))
        assert net.delay_between("a", "b") == math.inf

    def test_tick_must_divide_frame(self):
        with pytest.raises(ValueError):
            Network(id="t", kind=TdmaNetworkKind(major_frame=1000, tick=300))

    def test_delay_matrix_csv(self):
        text = ",a,b,c\na,0,100,\nb,100,0,250\nc,,250,0\n"
        matrix = load_delay_matrix(text)
        assert matrix["a"]["b"] == 100
        assert "c" not in matrix["a"]
        assert matrix["c"]["b"] == 250


class TestWorkerNodeInvariants:
    def test_zero_speed_factor_rejected(self):
        with pytest.raises(ValueError):
            make_node(speed_factor=0)

    def test_zero_cores_rejected(self):
        with pytest.raises(ValueError):
            make_node(cores=0)

    def test_cpu_capacity_bounded_by_cores(self):
        with pytest.raises(ValueError):
            make_node(cores=2, cpu=3)
