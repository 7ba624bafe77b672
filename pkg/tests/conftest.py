from __future__ import annotations

import pytest

from tests.support import Driver, policy_of


@pytest.fixture
def farm_policy():
    return policy_of(
        """
        device PestSprayer type=Sprayer location=field1
        device WaterSprinkler type=Sprinkler location=field1
        device NorthSprinkler type=Sprinkler location=field2

        subject farmer kind=user group=staff
        subject worker kind=user group=staff
        subject visitor kind=user

        rule on PestSprayer:
          allow TURN-ON by group:staff as PestSpray

        rule on type:Sprinkler:
          allow TURN-ON by group:staff as WaterSpray

        rule on PestSprayer:
          allow TURN-OFF by group:staff as inactive
          then stop PestSpray($object)

        rule on type:Sprinkler:
          allow TURN-OFF by group:staff as inactive
          then stop WaterSpray($object)

        relation incompatible PestSpray WaterSpray scope=same-location window=2h
        """
    )


@pytest.fixture
def farm(farm_policy):
    return Driver(farm_policy)
