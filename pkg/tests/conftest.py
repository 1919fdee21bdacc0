from __future__ import annotations

import sys
from fractions import Fraction
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mcfog.model import (
    AdditionalResources,
    AssuranceLevel,
    BaselineWcet,
    BasicResources,
    Criticality,
    JobSpec,
    PerPlatformWcet,
    RtTask,
    WorkerNode,
)


def make_node(
    node_id="n0",
    rt_capable=True,
    alpha=5,
    beta=5,
    gamma=0,
    platform="x86-i5",
    cores=1,
    cpu=None,
    disk=10_000,
    mem=8_000,
    speed_factor=1,
    inventory=None,
    networks=(),
):
    return WorkerNode(
        id=node_id,
        rt_capable=rt_capable,
        assurance=AssuranceLevel(alpha, beta, gamma),
        platform=platform,
        cores=cores,
        basic_capacity=BasicResources(Fraction(cpu if cpu is not None else cores), disk, mem),
        speed_factor=Fraction(speed_factor),
        additional_inventory=inventory or AdditionalResources(),
        networks=frozenset(networks),
    )


def make_rt_job(
    name="rt-job",
    criticality=Criticality.HI,
    tasks=(("t0", 1900, 10_000),),
    platform="x86-i5",
    disk=0,
    mem=0,
    network_requirements=(),
    deployment=None,
):
    """HI jobs get per-platform WCETs on `platform`; LOW jobs get baselines."""
    rt_tasks = []
    for tname, wcet, period in tasks:
        if criticality == Criticality.HI:
            wcet_obj = PerPlatformWcet({platform: wcet})
        else:
            wcet_obj = BaselineWcet(wcet)
        rt_tasks.append(RtTask(name=tname, period=period, wcet=wcet_obj))
    return JobSpec(
        name=name,
        criticality=criticality,
        realtime=True,
        basic_request=BasicResources(0, disk, mem),
        tasks=tuple(rt_tasks),
        network_requirements=tuple(network_requirements),
        deployment=deployment,
    )


def make_batch_job(
    name="batch-job",
    criticality=Criticality.NO,
    cpu=Fraction(1, 2),
    disk=0,
    mem=0,
    additional=None,
    network_requirements=(),
    deployment=None,
):
    return JobSpec(
        name=name,
        criticality=criticality,
        realtime=False,
        basic_request=BasicResources(Fraction(cpu), disk, mem),
        additional_request=additional or AdditionalResources(),
        network_requirements=tuple(network_requirements),
        deployment=deployment,
    )


@pytest.fixture
def node():
    return make_node()
